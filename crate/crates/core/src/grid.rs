//! Bird's-eye-view grid types shared by every stage of the pipeline.
//!
//! All dense arrays are stored row-major; feature maps keep the channel axis
//! innermost so a cell's vector is a contiguous slice.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {height}x{width}x{channels}")]
    ZeroDimension {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("grid of {height}x{width}x{channels} overflows a 64-bit element count")]
    TooLarge {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },
    #[error("score at cell ({row}, {col}) is {value}, outside [0, 1]")]
    ScoreOutOfRange { row: usize, col: usize, value: f64 },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("cell ({row}, {col}) outside a {height}x{width} grid")]
    CellOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("sparse entries must be unique and row-major sorted; ({row}, {col}) breaks the order")]
    UnsortedEntries { row: usize, col: usize },
}

/// Height, width and channel count of a BEV map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    height: usize,
    width: usize,
    channels: usize,
}

impl GridDims {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self, GridError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(GridError::ZeroDimension {
                height,
                width,
                channels,
            });
        }
        let fits = (height as u64)
            .checked_mul(width as u64)
            .and_then(|hw| hw.checked_mul(channels as u64))
            .is_some_and(|n| usize::try_from(n).is_ok());
        if !fits {
            return Err(GridError::TooLarge {
                height,
                width,
                channels,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
        })
    }

    /// Spatial-only dims (channel count 1), used for score maps and masks.
    pub fn spatial(height: usize, width: usize) -> Result<Self, GridError> {
        Self::new(height, width, 1)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial cells, `height * width`.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(&self, channels: usize) -> Result<Self, GridError> {
        Self::new(self.height, self.width, channels)
    }

    pub fn same_plane(&self, other: &GridDims) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.height && col < self.width
    }

    pub(crate) fn check_plane(&self, other: &GridDims) -> Result<(), GridError> {
        if self.same_plane(other) {
            Ok(())
        } else {
            Err(GridError::DimensionMismatch {
                left: format!("{}x{}", self.height, self.width),
                right: format!("{}x{}", other.height, other.width),
            })
        }
    }

    pub(crate) fn check_full(&self, other: &GridDims) -> Result<(), GridError> {
        if self == other {
            Ok(())
        } else {
            Err(GridError::DimensionMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Index of one agent in a scene.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct AgentId(pub u16);

impl AgentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u16> for AgentId {
    fn from(v: u16) -> Self {
        AgentId(v)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent{}", self.0)
    }
}

/// Per-cell information score of one agent.
///
/// Observed maps hold values in `[0, 1]`. Maps produced by accumulating
/// several agents' scores (see [`ScoreMap::accumulated`]) are capped by the
/// demand instead and may exceed 1 when the demand does.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    dims: GridDims,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(dims: GridDims, values: Vec<f64>) -> Result<Self, GridError> {
        let map = Self::accumulated(dims, values)?;
        if let Some((i, &v)) = map.values.iter().enumerate().find(|(_, v)| **v > 1.0) {
            let (row, col) = dims.coords(i);
            return Err(GridError::ScoreOutOfRange { row, col, value: v });
        }
        Ok(map)
    }

    /// Finite, non-negative scores with no upper bound.
    pub fn accumulated(dims: GridDims, values: Vec<f64>) -> Result<Self, GridError> {
        let dims = GridDims::spatial(dims.height, dims.width)?;
        if values.len() != dims.cells() {
            return Err(GridError::LengthMismatch {
                expected: dims.cells(),
                actual: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(GridError::NonFinite { index: i });
            }
            if v < 0.0 {
                let (row, col) = dims.coords(i);
                return Err(GridError::ScoreOutOfRange { row, col, value: v });
            }
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: GridDims) -> Self {
        let dims = GridDims::spatial(dims.height, dims.width).expect("dims already validated");
        Self {
            dims,
            values: vec![0.0; dims.cells()],
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.dims.index(row, col)]
    }

    /// Keep the scores where `mask` is set, zero elsewhere.
    pub fn masked(&self, mask: &SelectionMatrix) -> Result<ScoreMap, GridError> {
        self.dims.check_plane(&mask.dims)?;
        let values = self
            .values
            .iter()
            .zip(mask.mask.iter())
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Ok(ScoreMap {
            dims: self.dims,
            values,
        })
    }
}

/// Dense `height x width x channels` feature map, channel axis innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dims: GridDims,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(dims: GridDims, values: Vec<f64>) -> Result<Self, GridError> {
        let expected = dims.cells() * dims.channels();
        if values.len() != expected {
            return Err(GridError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index: i });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: GridDims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.cells() * dims.channels()],
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let c = self.dims.channels();
        let start = self.dims.index(row, col) * c;
        &self.values[start..start + c]
    }

    pub(crate) fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let c = self.dims.channels();
        let start = self.dims.index(row, col) * c;
        &mut self.values[start..start + c]
    }

    /// Elementwise maximum of two maps with identical dims.
    pub fn pointwise_max(&self, other: &FeatureMap) -> Result<FeatureMap, GridError> {
        pointwise_max(self, other)
    }

    /// In-place form of [`FeatureMap::pointwise_max`].
    pub fn max_assign(&mut self, other: &FeatureMap) -> Result<(), GridError> {
        self.dims.check_full(&other.dims)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            if b > *a {
                *a = b;
            }
        }
        Ok(())
    }
}

/// Binary spatial mask saying which cells a sender transmits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrix {
    dims: GridDims,
    mask: Vec<bool>,
    count: usize,
}

impl SelectionMatrix {
    pub fn zeros(dims: GridDims) -> Self {
        let dims = GridDims::spatial(dims.height, dims.width).expect("dims already validated");
        Self {
            dims,
            mask: vec![false; dims.cells()],
            count: 0,
        }
    }

    pub fn ones(dims: GridDims) -> Self {
        let dims = GridDims::spatial(dims.height, dims.width).expect("dims already validated");
        Self {
            dims,
            mask: vec![true; dims.cells()],
            count: dims.cells(),
        }
    }

    pub fn from_mask(dims: GridDims, mask: Vec<bool>) -> Result<Self, GridError> {
        let dims = GridDims::spatial(dims.height, dims.width)?;
        if mask.len() != dims.cells() {
            return Err(GridError::LengthMismatch {
                expected: dims.cells(),
                actual: mask.len(),
            });
        }
        let count = mask.iter().filter(|m| **m).count();
        Ok(Self { dims, mask, count })
    }

    /// Build from 0/1 integers; any other value is rejected.
    pub fn from_bits(dims: GridDims, bits: &[u8]) -> Result<Self, GridError> {
        let mut mask = Vec::with_capacity(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => mask.push(false),
                1 => mask.push(true),
                _ => {
                    let (row, col) = (i / dims.width, i % dims.width);
                    return Err(GridError::ScoreOutOfRange {
                        row,
                        col,
                        value: b as f64,
                    });
                }
            }
        }
        Self::from_mask(dims, mask)
    }

    pub fn from_cells(
        dims: GridDims,
        cells: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GridError> {
        let dims = GridDims::spatial(dims.height, dims.width)?;
        let mut mask = vec![false; dims.cells()];
        for (row, col) in cells {
            if !dims.contains(row, col) {
                return Err(GridError::CellOutOfBounds {
                    row,
                    col,
                    height: dims.height,
                    width: dims.width,
                });
            }
            mask[dims.index(row, col)] = true;
        }
        Self::from_mask(dims, mask)
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.mask[self.dims.index(row, col)]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Selected cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| self.dims.coords(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseEntry {
    pub row: usize,
    pub col: usize,
    pub values: Vec<f64>,
}

/// Selected cells of a feature map with their full channel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeature {
    dims: GridDims,
    entries: Vec<SparseEntry>,
}

impl SparseFeature {
    pub fn new(dims: GridDims, entries: Vec<SparseEntry>) -> Result<Self, GridError> {
        let mut prev: Option<usize> = None;
        for e in &entries {
            if !dims.contains(e.row, e.col) {
                return Err(GridError::CellOutOfBounds {
                    row: e.row,
                    col: e.col,
                    height: dims.height,
                    width: dims.width,
                });
            }
            if e.values.len() != dims.channels {
                return Err(GridError::LengthMismatch {
                    expected: dims.channels,
                    actual: e.values.len(),
                });
            }
            let idx = dims.index(e.row, e.col);
            if prev.is_some_and(|p| p >= idx) {
                return Err(GridError::UnsortedEntries {
                    row: e.row,
                    col: e.col,
                });
            }
            prev = Some(idx);
        }
        Ok(Self { dims, entries })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn entries(&self) -> &[SparseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mask of the cells carried by this sparse map.
    pub fn support(&self) -> SelectionMatrix {
        SelectionMatrix::from_cells(self.dims, self.entries.iter().map(|e| (e.row, e.col)))
            .expect("entries are in bounds")
    }

    /// Dense map with zeros at every cell not carried.
    pub fn densify(&self) -> FeatureMap {
        let mut out = FeatureMap::zeros(self.dims);
        for e in &self.entries {
            out.cell_mut(e.row, e.col).copy_from_slice(&e.values);
        }
        out
    }
}

/// `mask ⊙ feature` as a sparse list of the selected cells, row-major.
pub fn apply_selection(
    feature: &FeatureMap,
    mask: &SelectionMatrix,
) -> Result<SparseFeature, GridError> {
    feature.dims.check_plane(&mask.dims)?;
    let entries = mask
        .cells()
        .map(|(row, col)| SparseEntry {
            row,
            col,
            values: feature.cell(row, col).to_vec(),
        })
        .collect();
    Ok(SparseFeature {
        dims: feature.dims,
        entries,
    })
}

pub fn pointwise_max(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap, GridError> {
    a.dims.check_full(&b.dims)?;
    let values = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(&x, &y)| if y > x { y } else { x })
        .collect();
    Ok(FeatureMap {
        dims: a.dims,
        values,
    })
}

pub fn selection_count(mask: &SelectionMatrix) -> usize {
    mask.count
}
