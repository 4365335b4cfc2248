use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mix_seed, SimError};
use crate::grid::{AgentId, FeatureMap, GridDims, ScoreMap};

/// Default metres per grid cell.
pub const CELL_SIZE_M: f64 = 0.4;
/// Default milliseconds per frame.
pub const FRAME_PERIOD_MS: f64 = 100.0;

/// Channel noise applied to collaborator contributions only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    /// Translation noise std, cells.
    pub pose_sigma: f64,
    /// Rotation noise std, degrees.
    pub pose_rot_sigma: f64,
    pub latency_frames: usize,
}

impl PerturbationSpec {
    pub const NONE: PerturbationSpec = PerturbationSpec {
        pose_sigma: 0.0,
        pose_rot_sigma: 0.0,
        latency_frames: 0,
    };

    /// From physical units, with a cell size in metres and a frame period in
    /// milliseconds. Latency rounds to the nearest frame.
    pub fn from_physical(
        pose_sigma_m: f64,
        pose_rot_sigma_deg: f64,
        latency_ms: f64,
        cell_size_m: f64,
        frame_period_ms: f64,
    ) -> Result<Self, SimError> {
        if !(cell_size_m > 0.0 && cell_size_m.is_finite())
            || !(frame_period_ms > 0.0 && frame_period_ms.is_finite())
        {
            return Err(SimError::Perturbation(
                "cell size and frame period must be positive".into(),
            ));
        }
        if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
            return Err(SimError::Perturbation("latency must be finite and >= 0".into()));
        }
        let spec = Self {
            pose_sigma: pose_sigma_m / cell_size_m,
            pose_rot_sigma: pose_rot_sigma_deg,
            latency_frames: (latency_ms / frame_period_ms).round() as usize,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("pose_sigma", self.pose_sigma),
            ("pose_rot_sigma", self.pose_rot_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Perturbation(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        self.pose_sigma == 0.0 && self.pose_rot_sigma == 0.0 && self.latency_frames == 0
    }

    /// Frame a collaborator's view is rendered at.
    pub fn stale_frame(&self, frame: usize) -> usize {
        frame.saturating_sub(self.latency_frames)
    }

    /// Pose error of `sender` at `frame`.
    ///
    /// The standard normal draws depend only on `(seed, frame, sender)`, so
    /// every sigma scales the same underlying offsets.
    pub fn warp(&self, seed: u64, frame: usize, sender: AgentId, pivot: (usize, usize)) -> Warp {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            seed,
            0x9053,
            frame as u64,
            sender.0 as u64,
        ]));
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        Warp {
            shift: (
                (self.pose_sigma * z[0]).round() as i64,
                (self.pose_sigma * z[1]).round() as i64,
            ),
            angle: (self.pose_rot_sigma * z[2]).to_radians(),
            pivot: (pivot.0 as f64, pivot.1 as f64),
        }
    }
}

/// Rigid misalignment: rotation by `angle` about `pivot`, then `shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub shift: (i64, i64),
    /// Radians.
    pub angle: f64,
    pub pivot: (f64, f64),
}

impl Warp {
    pub fn is_identity(&self) -> bool {
        self.shift == (0, 0) && self.angle == 0.0
    }

    /// Cell whose content lands on `(row, col)`, nearest-neighbour.
    fn source(&self, dims: GridDims, row: usize, col: usize) -> Option<usize> {
        let r = row as f64 - self.shift.0 as f64 - self.pivot.0;
        let c = col as f64 - self.shift.1 as f64 - self.pivot.1;
        let (s, co) = self.angle.sin_cos();
        // inverse rotation
        let sr = (co * r + s * c + self.pivot.0).round();
        let sc = (-s * r + co * c + self.pivot.1).round();
        if sr < 0.0 || sc < 0.0 {
            return None;
        }
        let (sr, sc) = (sr as usize, sc as usize);
        dims.contains(sr, sc).then(|| dims.index(sr, sc))
    }

    fn remap(&self, dims: GridDims, channels: usize, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for row in 0..dims.height() {
            for col in 0..dims.width() {
                if let Some(src) = self.source(dims, row, col) {
                    let dst = dims.index(row, col);
                    out[dst * channels..(dst + 1) * channels]
                        .copy_from_slice(&values[src * channels..(src + 1) * channels]);
                }
            }
        }
        out
    }

    /// Content moved off the grid is lost; uncovered cells become zero.
    pub fn apply_scores(&self, map: &ScoreMap) -> ScoreMap {
        if self.is_identity() {
            return map.clone();
        }
        let values = self.remap(map.dims(), 1, map.values());
        ScoreMap::accumulated(map.dims(), values).expect("remap keeps values")
    }

    pub fn apply_features(&self, map: &FeatureMap) -> FeatureMap {
        if self.is_identity() {
            return map.clone();
        }
        let dims = map.dims();
        let values = self.remap(dims, dims.channels(), map.values());
        FeatureMap::new(dims, values).expect("remap keeps values")
    }
}
