//! Pose CSV files.
//!
//! Header: `frame_id`, then any of `subject`, `action`, `camera`, then the
//! joint coordinates `j0_x,j0_y[,j0_z],j1_x,...` in topology order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use liftpose_core::{Pose2D, Pose3D};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseKind {
    TwoD,
    ThreeD,
}

impl PoseKind {
    pub fn dim(self) -> usize {
        match self {
            PoseKind::TwoD => 2,
            PoseKind::ThreeD => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: expected {expected} coordinates, found {found}")]
    JointCountMismatch { line: u64, expected: usize, found: usize },
    #[error("line {line}: duplicate frame id `{id}`")]
    DuplicateFrameId { line: u64, id: String },
    #[error("poses in one dataset must share a joint count")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub subject: Option<String>,
    pub action: Option<String>,
    pub camera: Option<String>,
    /// Column-major joint coordinates, `dim` values per joint.
    pub coords: Vec<f64>,
}

/// Which optional metadata columns a file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetaColumns {
    pub subject: bool,
    pub action: bool,
    pub camera: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseDataset {
    pub kind: PoseKind,
    pub joints: usize,
    pub meta: MetaColumns,
    pub frames: Vec<Frame>,
}

impl PoseDataset {
    pub fn new(kind: PoseKind, joints: usize) -> Self {
        Self {
            kind,
            joints,
            meta: MetaColumns::default(),
            frames: Vec::new(),
        }
    }

    pub fn from_poses3d(poses: &[Pose3D]) -> Result<Self, DatasetError> {
        Self::from_matrices(PoseKind::ThreeD, poses.iter().map(|p| (p.ncols(), p.as_slice())))
    }

    pub fn from_poses2d(poses: &[Pose2D]) -> Result<Self, DatasetError> {
        Self::from_matrices(PoseKind::TwoD, poses.iter().map(|p| (p.ncols(), p.as_slice())))
    }

    fn from_matrices<'a>(kind: PoseKind, it: impl Iterator<Item = (usize, &'a [f64])>) -> Result<Self, DatasetError> {
        let mut out = Self::new(kind, 0);
        for (i, (n, data)) in it.enumerate() {
            if i == 0 {
                out.joints = n;
            } else if n != out.joints {
                return Err(DatasetError::Ragged);
            }
            out.frames.push(Frame {
                frame_id: i.to_string(),
                subject: None,
                action: None,
                camera: None,
                coords: data.to_vec(),
            });
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Panics if the dataset holds 2D poses.
    pub fn poses3d(&self) -> Vec<Pose3D> {
        assert_eq!(self.kind, PoseKind::ThreeD);
        self.frames.iter().map(|f| Pose3D::from_column_slice(&f.coords)).collect()
    }

    /// Panics if the dataset holds 3D poses.
    pub fn poses2d(&self) -> Vec<Pose2D> {
        assert_eq!(self.kind, PoseKind::TwoD);
        self.frames.iter().map(|f| Pose2D::from_column_slice(&f.coords)).collect()
    }

    /// Keeps the frames for which `keep` holds.
    pub fn filter(&self, mut keep: impl FnMut(usize, &Frame) -> bool) -> Self {
        Self {
            frames: self
                .frames
                .iter()
                .enumerate()
                .filter(|(i, f)| keep(*i, f))
                .map(|(_, f)| f.clone())
                .collect(),
            ..self.clone()
        }
    }
}

pub fn read_pose_csv<R: Read>(reader: R, joints: usize, kind: PoseKind) -> Result<PoseDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let parse_err = |e: csv::Error| DatasetError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let header = match records.next() {
        Some(h) => h.map_err(parse_err)?,
        None => {
            return Err(DatasetError::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    if header.get(0).map(str::trim) != Some("frame_id") {
        return Err(DatasetError::Parse {
            line: 1,
            message: "first column must be `frame_id`".into(),
        });
    }
    let mut meta = MetaColumns::default();
    let mut order = Vec::new();
    for name in header.iter().skip(1).map(str::trim) {
        let slot = match name {
            "subject" => &mut meta.subject,
            "action" => &mut meta.action,
            "camera" => &mut meta.camera,
            _ => break,
        };
        if *slot {
            return Err(DatasetError::Parse {
                line: 1,
                message: format!("column `{name}` repeated"),
            });
        }
        *slot = true;
        order.push(name.to_string());
    }
    let skip = 1 + order.len();
    let expected = joints * kind.dim();
    if header.len() - skip != expected {
        return Err(DatasetError::JointCountMismatch {
            line: 1,
            expected,
            found: header.len() - skip,
        });
    }
    let mut data = PoseDataset {
        kind,
        joints,
        meta,
        frames: Vec::new(),
    };
    let mut seen = HashSet::new();
    for rec in records {
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < skip || rec.len() - skip != expected {
            return Err(DatasetError::JointCountMismatch {
                line,
                expected,
                found: rec.len().saturating_sub(skip),
            });
        }
        let id = rec[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateFrameId { line, id });
        }
        let mut frame = Frame {
            frame_id: id,
            subject: None,
            action: None,
            camera: None,
            coords: Vec::with_capacity(expected),
        };
        for (k, name) in order.iter().enumerate() {
            let v = Some(rec[k + 1].trim().to_string());
            match name.as_str() {
                "subject" => frame.subject = v,
                "action" => frame.action = v,
                _ => frame.camera = v,
            }
        }
        for field in rec.iter().skip(skip) {
            let v: f64 = field.trim().parse().map_err(|_| DatasetError::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Parse {
                    line,
                    message: format!("`{field}` is not finite"),
                });
            }
            frame.coords.push(v);
        }
        data.frames.push(frame);
    }
    Ok(data)
}

pub fn load_pose_csv(path: &Path, joints: usize, kind: PoseKind) -> Result<PoseDataset, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_pose_csv(file, joints, kind)
}

pub fn write_pose_csv<W: Write>(writer: W, data: &PoseDataset) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| DatasetError::Io {
        path: "<output>".into(),
        source: e.into(),
    };
    let mut header = vec!["frame_id".to_string()];
    let axes = ["x", "y", "z"];
    let cols = [
        (data.meta.subject, "subject"),
        (data.meta.action, "action"),
        (data.meta.camera, "camera"),
    ];
    header.extend(cols.iter().filter(|c| c.0).map(|c| c.1.to_string()));
    for j in 0..data.joints {
        for a in &axes[..data.kind.dim()] {
            header.push(format!("j{j}_{a}"));
        }
    }
    w.write_record(&header).map_err(io)?;
    for f in &data.frames {
        let mut row = vec![f.frame_id.clone()];
        let vals = [&f.subject, &f.action, &f.camera];
        for (c, v) in cols.iter().zip(vals) {
            if c.0 {
                row.push(v.clone().unwrap_or_default());
            }
        }
        // `Display` for f64 is the shortest representation that parses back exactly
        row.extend(f.coords.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: "<output>".into(),
        source,
    })
}

pub fn save_pose_csv(path: &Path, data: &PoseDataset) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_pose_csv(std::io::BufWriter::new(file), data)
}
