//! Synthetic multi-agent scenes and the two-round exchange driven over them.
//!
//! A round renders every agent's view, broadcasts the score maps, solves the
//! selection, quantizes and packs the selected features, pushes the bytes
//! through `unpack`, decodes, fuses and scores the result against the
//! ground-truth object cells.

mod perturb;
mod round;
mod scenario;
mod sweep;

use thiserror::Error;

pub use perturb::{PerturbationSpec, Warp, CELL_SIZE_M, FRAME_PERIOD_MS};
pub use round::{
    lossless_codebook, run_round, run_round_detailed, RoundConfig, RoundDetail, RoundReport,
    Transport, DEFAULT_THRESHOLD,
};
pub use scenario::{
    generate, AgentSpec, AgentView, EmbeddingTable, Modality, ObjectSpec, Scenario,
    ScenarioConfig,
};
pub use sweep::{
    mean_by_config, scene_dataset, sweep, write_csv, CodebookSpec, ScenarioDoc, SweepGrid,
    SweepRow, CSV_HEADER,
};

use crate::codebook::CodebookError;
use crate::fusion::FusionError;
use crate::grid::{AgentId, GridError};
use crate::selection::SelectionError;
use crate::wire::WireError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("invalid perturbation: {0}")]
    Perturbation(String),
    #[error("frame {frame} is outside the horizon of {horizon} frames")]
    FrameOutOfRange { frame: usize, horizon: usize },
    #[error("no agent {0}")]
    UnknownAgent(AgentId),
    #[error("codebook has {codebook} channels, scene has {scene}")]
    ChannelMismatch { codebook: usize, scene: usize },
    #[error("empty sweep grid: {0}")]
    EmptyGrid(&'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Folds a tuple of words into one RNG seed (splitmix64 finalizer per word).
pub(crate) fn mix_seed(words: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &w in words {
        let mut z = h ^ w.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
