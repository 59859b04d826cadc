//! Output records: lift results, simulation traces and evaluation rows.

use std::io::Write;

use liftpose_core::simulate::StageTrace;
use liftpose_core::LiftResult;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftRecord {
    pub frame_id: String,
    pub theta: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
    pub component: usize,
    pub cost: f64,
    pub offset: [f64; 2],
}

impl LiftRecord {
    pub fn new(frame_id: &str, r: &LiftResult) -> Self {
        Self {
            frame_id: frame_id.to_string(),
            theta: r.theta,
            scale: r.scale,
            coeffs: r.coeffs.clone(),
            component: r.component,
            cost: r.cost,
            offset: [r.offset.x, r.offset.y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLine {
    pub stage: usize,
    pub error_2d: f64,
    pub error_3d: f64,
    pub loss: f64,
    pub fused_peak: f64,
    pub theta: f64,
    pub scale: f64,
    pub component: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameLine {
    pub frame_id: String,
    pub stages: Vec<StageLine>,
}

impl FrameLine {
    pub fn new(frame_id: &str, trace: &StageTrace) -> Self {
        Self {
            frame_id: frame_id.to_string(),
            stages: trace
                .stages
                .iter()
                .enumerate()
                .map(|(t, s)| StageLine {
                    stage: t + 1,
                    error_2d: s.error_2d,
                    error_3d: s.error_3d,
                    loss: s.loss,
                    fused_peak: s.fused_peak,
                    theta: s.lift.theta,
                    scale: s.lift.scale,
                    component: s.lift.component,
                    cost: s.lift.cost,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub frames: usize,
    pub fusion_weights: Vec<f64>,
    pub median_error_2d: Vec<f64>,
    pub median_error_3d: Vec<f64>,
    pub mean_error_2d: Vec<f64>,
    pub mean_error_3d: Vec<f64>,
    pub mean_loss: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl SimSummary {
    pub fn new(lines: &[FrameLine], fusion_weights: Vec<f64>) -> Self {
        let stages = fusion_weights.len();
        let column = |f: fn(&StageLine) -> f64, t: usize| -> Vec<f64> { lines.iter().map(|l| f(&l.stages[t])).collect() };
        let per_stage = |f: fn(&StageLine) -> f64, agg: fn(&[f64]) -> f64| -> Vec<f64> {
            (0..stages).map(|t| agg(&column(f, t))).collect()
        };
        Self {
            frames: lines.len(),
            median_error_2d: per_stage(|s| s.error_2d, median),
            median_error_3d: per_stage(|s| s.error_3d, median),
            mean_error_2d: per_stage(|s| s.error_2d, mean),
            mean_error_3d: per_stage(|s| s.error_3d, mean),
            mean_loss: per_stage(|s| s.loss, mean),
            fusion_weights,
        }
    }
}

/// One JSON object per frame followed by `{"summary": ...}`.
pub fn write_sim_jsonl<W: Write>(mut w: W, lines: &[FrameLine], summary: &SimSummary) -> std::io::Result<()> {
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut w, &serde_json::json!({ "summary": summary }))?;
    w.write_all(b"\n")?;
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub frame_id: String,
    pub action_label: String,
    pub mpjpe: f64,
    pub aligned_error: f64,
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[EvalRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["frame_id", "action_label", "mpjpe", "aligned_error"])?;
    }
    w.flush()?;
    Ok(())
}
