//! Shared codebook and greedy residual quantization.
//!
//! A feature vector is represented by `n_r` code indices chosen greedily: each
//! step picks the code that minimizes the squared distance between the vector
//! and the running sum of chosen codes. Decoding sums the referenced codes.

mod file;
mod train;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use file::{CODEBOOK_MAGIC, CODEBOOK_VERSION};
pub use train::{train, train_with_report, TrainReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodebookError {
    #[error("codebook size n_L must be a power of two no larger than 2^31, got {0}")]
    SizeNotPowerOfTwo(usize),
    #[error("channel count must be positive")]
    ZeroChannels,
    #[error("codebook holds {actual} values, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("code value at flat index {0} is not finite")]
    NonFinite(usize),
    #[error("vector has {actual} channels, codebook has {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("code index {index} out of range for {size} codes")]
    IndexOutOfRange { index: u32, size: usize },
    #[error("code count n_r must be at least 1")]
    ZeroCodeCount,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid quantizer config: {0}")]
    InvalidConfig(String),
    #[error("codebook file: bad magic")]
    BadMagic,
    #[error("codebook file: unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("codebook file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("codebook file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("codebook file hash {stored:016x} does not match contents {computed:016x}")]
    HashMismatch { stored: u64, computed: u64 },
}

/// `n_L` code vectors of dimension `C`, stored as `f32` like the wire codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    channels: usize,
    codes: Vec<f32>,
    id: u64,
}

fn is_valid_size(n: usize) -> bool {
    n.is_power_of_two() && n <= 1 << 31
}

impl Codebook {
    /// `codes` is row-major, one code per `channels` values.
    pub fn new(channels: usize, codes: Vec<f32>) -> Result<Self, CodebookError> {
        if channels == 0 {
            return Err(CodebookError::ZeroChannels);
        }
        if codes.len() % channels != 0 {
            return Err(CodebookError::LengthMismatch {
                expected: codes.len().div_ceil(channels) * channels,
                actual: codes.len(),
            });
        }
        let size = codes.len() / channels;
        if !is_valid_size(size) {
            return Err(CodebookError::SizeNotPowerOfTwo(size));
        }
        if let Some(i) = codes.iter().position(|v| !v.is_finite()) {
            return Err(CodebookError::NonFinite(i));
        }
        let id = content_hash(channels, &codes);
        Ok(Self {
            channels,
            codes,
            id,
        })
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self, CodebookError> {
        let channels = vectors.first().map_or(0, Vec::len);
        let mut codes = Vec::with_capacity(vectors.len() * channels);
        for v in vectors {
            if v.len() != channels {
                return Err(CodebookError::DimensionMismatch {
                    expected: channels,
                    actual: v.len(),
                });
            }
            codes.extend(v.iter().map(|&x| x as f32));
        }
        Self::new(channels, codes)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `n_L`.
    pub fn size(&self) -> usize {
        self.codes.len() / self.channels
    }

    pub fn index_bits(&self) -> u32 {
        self.size().trailing_zeros()
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn code(&self, index: usize) -> &[f32] {
        &self.codes[index * self.channels..(index + 1) * self.channels]
    }

    pub fn codes(&self) -> &[f32] {
        &self.codes
    }

    fn check_vector(&self, v: &[f64]) -> Result<(), CodebookError> {
        if v.len() == self.channels {
            Ok(())
        } else {
            Err(CodebookError::DimensionMismatch {
                expected: self.channels,
                actual: v.len(),
            })
        }
    }
}

/// First eight bytes (little-endian) of SHA-256 over the channel count, code
/// count and the `f32` code bytes.
fn content_hash(channels: usize, codes: &[f32]) -> u64 {
    let mut h = Sha256::new();
    h.update((channels as u32).to_le_bytes());
    h.update(((codes.len() / channels) as u32).to_le_bytes());
    for c in codes {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Fixed number of code indices per cell, flattened cell-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeAssignment {
    n_r: usize,
    indices: Vec<u32>,
}

impl CodeAssignment {
    pub fn new(n_r: usize, indices: Vec<u32>) -> Result<Self, CodebookError> {
        if n_r == 0 {
            return Err(CodebookError::ZeroCodeCount);
        }
        if indices.len() % n_r != 0 {
            return Err(CodebookError::LengthMismatch {
                expected: indices.len().div_ceil(n_r) * n_r,
                actual: indices.len(),
            });
        }
        Ok(Self { n_r, indices })
    }

    pub fn from_entries(n_r: usize, entries: &[Vec<u32>]) -> Result<Self, CodebookError> {
        let mut indices = Vec::with_capacity(entries.len() * n_r);
        for e in entries {
            if e.len() != n_r {
                return Err(CodebookError::LengthMismatch {
                    expected: n_r,
                    actual: e.len(),
                });
            }
            indices.extend_from_slice(e);
        }
        Self::new(n_r, indices)
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.n_r
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[u32] {
        &self.indices[i * self.n_r..(i + 1) * self.n_r]
    }

    pub fn entries(&self) -> impl Iterator<Item = &[u32]> {
        self.indices.chunks(self.n_r)
    }
}

fn sq_dist(residual: &[f64], code: &[f32]) -> f64 {
    residual
        .iter()
        .zip(code)
        .map(|(&r, &c)| {
            let d = r - c as f64;
            d * d
        })
        .sum()
}

/// Index of the closest code to `residual`, lowest index on ties.
pub(crate) fn nearest(codebook: &Codebook, residual: &[f64]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for k in 0..codebook.size() {
        let d = sq_dist(residual, codebook.code(k));
        if d < best.1 {
            best = (k as u32, d);
        }
    }
    best
}

/// Greedy residual encoding with exactly `n_r` indices.
pub fn encode(vector: &[f64], codebook: &Codebook, n_r: usize) -> Result<Vec<u32>, CodebookError> {
    codebook.check_vector(vector)?;
    if n_r == 0 {
        return Err(CodebookError::ZeroCodeCount);
    }
    let mut residual = vector.to_vec();
    let mut out = Vec::with_capacity(n_r);
    for _ in 0..n_r {
        let (k, _) = nearest(codebook, &residual);
        for (r, &c) in residual.iter_mut().zip(codebook.code(k as usize)) {
            *r -= c as f64;
        }
        out.push(k);
    }
    Ok(out)
}

/// Sum of the referenced codes.
pub fn decode(indices: &[u32], codebook: &Codebook) -> Result<Vec<f64>, CodebookError> {
    let mut out = vec![0.0; codebook.channels];
    for &k in indices {
        if k as usize >= codebook.size() {
            return Err(CodebookError::IndexOutOfRange {
                index: k,
                size: codebook.size(),
            });
        }
        for (o, &c) in out.iter_mut().zip(codebook.code(k as usize)) {
            *o += c as f64;
        }
    }
    Ok(out)
}

/// Mean over the dataset of the squared error of `decode(encode(v))`.
pub fn reconstruction_error(
    dataset: &[Vec<f64>],
    codebook: &Codebook,
    n_r: usize,
) -> Result<f64, CodebookError> {
    if dataset.is_empty() {
        return Err(CodebookError::EmptyDataset);
    }
    let mut total = 0.0;
    for v in dataset {
        let rec = decode(&encode(v, codebook, n_r)?, codebook)?;
        total += v
            .iter()
            .zip(&rec)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / dataset.len() as f64)
}

/// Configuration for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerConfig {
    /// Codebook size; must be a power of two.
    pub n_l: usize,
    /// Largest number of codes per vector the codebook is trained for.
    pub n_r: usize,
    pub iterations: usize,
    /// Stop once an epoch lowers the total training error by less than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<(), CodebookError> {
        if !is_valid_size(self.n_l) {
            return Err(CodebookError::SizeNotPowerOfTwo(self.n_l));
        }
        if self.n_r == 0 {
            return Err(CodebookError::ZeroCodeCount);
        }
        if self.iterations == 0 {
            return Err(CodebookError::InvalidConfig(
                "iterations must be at least 1".into(),
            ));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(CodebookError::InvalidConfig(format!(
                "tolerance must be finite and non-negative, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}
