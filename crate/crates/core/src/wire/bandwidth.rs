//! Communication-volume accounting.
//!
//! Feature payloads cost `selected * C * 32 / 8` bytes; code-index payloads
//! cost `selected * log2(n_L) * n_r / 8` bytes. Both ignore coordinates and
//! headers; the true on-wire size is `CodeIndexMessage::byte_len`.

use serde::Serialize;

use super::WireError;
use crate::grid::{GridDims, SelectionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Feature,
    Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub representation: Representation,
    pub raw_bytes: f64,
    /// `log2(raw_bytes)`, or 0 for an empty message.
    pub log2_bytes: f64,
}

impl BandwidthReport {
    pub fn new(representation: Representation, raw_bytes: f64) -> Self {
        Self {
            representation,
            raw_bytes,
            log2_bytes: log2_or_zero(raw_bytes),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.raw_bytes == 0.0
    }
}

pub fn log2_or_zero(bytes: f64) -> f64 {
    if bytes > 0.0 {
        bytes.log2()
    } else {
        0.0
    }
}

pub fn feature_bandwidth(dims: GridDims, selection: &SelectionMatrix) -> BandwidthReport {
    debug_assert!(dims.same_plane(&selection.dims()));
    let raw = selection.count() as f64 * dims.channels() as f64 * 32.0 / 8.0;
    BandwidthReport::new(Representation::Feature, raw)
}

pub fn code_bandwidth(
    dims: GridDims,
    selection: &SelectionMatrix,
    n_l: usize,
    n_r: usize,
) -> Result<BandwidthReport, WireError> {
    debug_assert!(dims.same_plane(&selection.dims()));
    if !n_l.is_power_of_two() || n_l > 1 << 31 {
        return Err(WireError::InvalidIndexWidth(n_l as u64));
    }
    let bits = n_l.trailing_zeros() as f64;
    let raw = selection.count() as f64 * bits * n_r as f64 / 8.0;
    Ok(BandwidthReport::new(Representation::Code, raw))
}
