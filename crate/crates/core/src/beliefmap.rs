//! Belief maps: argmax extraction, rendering of projected poses, fusion and
//! the per-stage loss.
//!
//! Pixel `(u, v)` is column `u`, row `v`; landmark coordinates use the same
//! convention, with integer coordinates at pixel centers.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use thiserror::Error;

use crate::lift::LiftResult;
use crate::skeleton::{center, CameraModel, Pose2D};

pub const DEFAULT_MAP_SIZE: usize = 46;
pub const DEFAULT_BLUR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("stack dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("landmark channel {channel} is uniformly zero")]
    FlatMap { channel: usize },
    #[error("belief values must be finite and nonnegative")]
    InvalidValue,
    #[error("a stack needs a positive size and at least one landmark channel")]
    Empty,
    #[error("fusion weight {0} outside [0, 1]")]
    Weight(f64),
}

/// `channels` grids of `height × width` values, channel-major and row-major
/// within a channel. The last channel is the background.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefStack {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl BeliefStack {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self, BeliefError> {
        if width == 0 || height == 0 || channels < 2 {
            return Err(BeliefError::Empty);
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, BeliefError> {
        let mut s = Self::zeros(width, height, channels)?;
        if data.len() != s.data.len() {
            return Err(BeliefError::DimensionMismatch {
                left: s.dims(),
                right: (width, height, data.len() / (width * height)),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BeliefError::InvalidValue);
        }
        s.data = data;
        Ok(s)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Landmark channels plus the background channel.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn landmarks(&self) -> usize {
        self.channels - 1
    }

    /// `(width, height, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, u: usize, v: usize) -> f64 {
        self.data[self.index(c, u, v)]
    }

    /// Panics on a negative or non-finite value.
    pub fn set(&mut self, c: usize, u: usize, v: usize, value: f64) {
        assert!(value.is_finite() && value >= 0.0, "invalid belief value {value}");
        let i = self.index(c, u, v);
        self.data[i] = value;
    }

    fn index(&self, c: usize, u: usize, v: usize) -> usize {
        assert!(c < self.channels && u < self.width && v < self.height);
        (c * self.height + v) * self.width + u
    }

    fn check_same(&self, other: &Self) -> Result<(), BeliefError> {
        if self.dims() != other.dims() {
            return Err(BeliefError::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FusionWeight(f64);

impl FusionWeight {
    pub fn new(w: f64) -> Result<Self, BeliefError> {
        if (0.0..=1.0).contains(&w) {
            Ok(Self(w))
        } else {
            Err(BeliefError::Weight(w))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Location of the most confident pixel of every landmark channel. Ties go
/// to the first pixel in row-major order.
pub fn extract_landmarks(stack: &BeliefStack) -> Result<Pose2D, BeliefError> {
    let mut out = Pose2D::zeros(stack.landmarks());
    for c in 0..stack.landmarks() {
        let mut best = 0;
        let ch = stack.channel(c);
        for (i, v) in ch.iter().enumerate() {
            if *v > ch[best] {
                best = i;
            }
        }
        if ch[best] <= 0.0 {
            return Err(BeliefError::FlatMap { channel: c });
        }
        out[(0, c)] = (best % stack.width) as f64;
        out[(1, c)] = (best / stack.width) as f64;
    }
    Ok(out)
}

/// `s·Π·E·R(θ)(μ + a·e)`, re-centered and shifted back by the lift offset.
pub fn project_pose(result: &LiftResult, camera: &CameraModel) -> Pose2D {
    let mut p = center(&camera.project(&result.pose3d, result.scale));
    for mut c in p.column_iter_mut() {
        c += result.offset;
    }
    p
}

/// Normalized 1D Gaussian taps for offsets `-r..=r`, `r = ⌊3σ⌋`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0 && sigma.is_finite(), "blur sigma must be positive");
    let r = (3.0 * sigma).floor() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Nearest pixel to `x` on an axis of length `n`.
pub fn snap(x: f64, n: usize) -> usize {
    if x.is_nan() || x <= 0.0 {
        0
    } else {
        (x.round() as usize).min(n - 1)
    }
}

/// Renders one blurred delta per landmark plus the background channel.
pub fn render_beliefs(y2d: &Pose2D, width: usize, height: usize, blur_sigma: f64) -> BeliefStack {
    let l = y2d.ncols();
    let mut stack = BeliefStack::zeros(width, height, l + 1).expect("render needs at least one landmark");
    let k = gaussian_kernel(blur_sigma);
    let r = (k.len() / 2) as i64;
    let plane = width * height;
    for p in 0..l {
        let pu = snap(y2d[(0, p)], width) as i64;
        let pv = snap(y2d[(1, p)], height) as i64;
        let ch = &mut stack.data[p * plane..(p + 1) * plane];
        for dv in -r..=r {
            let v = pv + dv;
            if v < 0 || v >= height as i64 {
                continue;
            }
            let kv = k[(dv + r) as usize];
            for du in -r..=r {
                let u = pu + du;
                if u < 0 || u >= width as i64 {
                    continue;
                }
                ch[v as usize * width + u as usize] = kv * k[(du + r) as usize];
            }
        }
    }
    let (fg, bg) = stack.data.split_at_mut(l * plane);
    for (i, b) in bg.iter_mut().enumerate() {
        let total: f64 = (0..l).map(|p| fg[p * plane + i]).sum();
        *b = (1.0 - total).max(0.0);
    }
    stack
}

/// `w·b + (1 − w)·b̂`, elementwise.
pub fn fuse(b: &BeliefStack, b_hat: &BeliefStack, w: FusionWeight) -> Result<BeliefStack, BeliefError> {
    b.check_same(b_hat)?;
    let w = w.value();
    let mut out = b.clone();
    for (o, h) in out.data.iter_mut().zip(&b_hat.data) {
        *o = if w == 1.0 {
            *o
        } else if w == 0.0 {
            *h
        } else {
            w * *o + (1.0 - w) * h
        };
    }
    Ok(out)
}

/// Sum of squared differences over every channel and pixel.
pub fn stage_loss(f: &BeliefStack, gt: &BeliefStack) -> Result<f64, BeliefError> {
    f.check_same(gt)?;
    Ok(f.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum())
}
