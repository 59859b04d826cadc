//! Evaluation protocol presets applied as dataset filters.

use crate::dataset::{Frame, PoseDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Mean per-joint error over every joint, no alignment.
    Raw,
    /// Mean per-joint error over the evaluation subset after similarity
    /// alignment.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    pub number: u8,
    pub test_subjects: &'static [&'static str],
    /// Keep every `stride`-th frame of each subject/action/camera sequence.
    pub stride: usize,
    pub camera: Option<&'static str>,
    pub metric: Metric,
}

impl Protocol {
    pub fn preset(number: u8) -> Option<Self> {
        Some(match number {
            // 50 FPS down-sampled to 10 FPS
            1 => Self {
                number,
                test_subjects: &["S9", "S11"],
                stride: 5,
                camera: None,
                metric: Metric::Raw,
            },
            2 => Self {
                number,
                test_subjects: &["S11"],
                stride: 64,
                camera: None,
                metric: Metric::Aligned,
            },
            3 => Self {
                number,
                test_subjects: &["S9", "S11"],
                stride: 1,
                camera: Some("3"),
                metric: Metric::Aligned,
            },
            _ => return None,
        })
    }

    fn subject_ok(&self, f: &Frame) -> bool {
        f.subject.as_deref().is_none_or(|s| self.test_subjects.contains(&s))
    }

    fn camera_ok(&self, f: &Frame) -> bool {
        match (self.camera, f.camera.as_deref()) {
            (Some(want), Some(have)) => want == have,
            _ => true,
        }
    }

    /// Test frames of `data`. Frames without subject or camera labels pass
    /// the corresponding filter; subsampling counts frames within each
    /// (subject, action, camera) sequence in file order.
    pub fn apply(&self, data: &PoseDataset) -> PoseDataset {
        let mut counters: std::collections::HashMap<(Option<String>, Option<String>, Option<String>), usize> =
            Default::default();
        data.filter(|_, f| {
            if !(self.subject_ok(f) && self.camera_ok(f)) {
                return false;
            }
            let n = counters
                .entry((f.subject.clone(), f.action.clone(), f.camera.clone()))
                .or_default();
            let keep = *n % self.stride == 0;
            *n += 1;
            keep
        })
    }
}
