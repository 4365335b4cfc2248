//! Message decoding and point-wise maximum fusion.

use thiserror::Error;

use crate::codebook::{self, Codebook, CodebookError};
use crate::grid::{AgentId, FeatureMap, GridDims, GridError, ScoreMap, SparseFeature};
use crate::selection::Demand;
use crate::wire::CodeIndexMessage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("message is bound to codebook {message:016x}, have {codebook:016x}")]
    CodebookMismatch { message: u64, codebook: u64 },
    #[error("message indexes {message} codes, codebook has {codebook}")]
    CodebookSizeMismatch { message: usize, codebook: usize },
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Dense reconstruction of a received message; unselected cells are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMessage {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub features: FeatureMap,
}

impl DecodedMessage {
    /// Raw (unquantized) features: the densified sparse map.
    pub fn from_sparse(sender: AgentId, receiver: AgentId, sparse: &SparseFeature) -> Self {
        Self {
            sender,
            receiver,
            features: sparse.densify(),
        }
    }
}

pub fn decode_message(
    msg: &CodeIndexMessage,
    codebook: &Codebook,
) -> Result<DecodedMessage, FusionError> {
    if msg.codebook_id() != codebook.id() {
        return Err(FusionError::CodebookMismatch {
            message: msg.codebook_id(),
            codebook: codebook.id(),
        });
    }
    if msg.codebook_size() != codebook.size() {
        return Err(FusionError::CodebookSizeMismatch {
            message: msg.codebook_size(),
            codebook: codebook.size(),
        });
    }
    let dims = GridDims::new(msg.height(), msg.width(), codebook.channels())?;
    let mut features = FeatureMap::zeros(dims);
    for e in msg.entries() {
        let v = codebook::decode(&e.indices, codebook)?;
        features
            .cell_mut(e.row as usize, e.col as usize)
            .copy_from_slice(&v);
    }
    Ok(DecodedMessage {
        sender: msg.sender(),
        receiver: msg.receiver(),
        features,
    })
}

/// Elementwise maximum of the ego map and every decoded map, as a left fold.
pub fn fuse(ego: &FeatureMap, decoded: &[DecodedMessage]) -> Result<FeatureMap, FusionError> {
    let mut acc = ego.clone();
    for m in decoded {
        acc.max_assign(&m.features)?;
    }
    Ok(acc)
}

/// `min(ego + sum(retained), u)` per cell.
pub fn fuse_scores(
    ego: &ScoreMap,
    retained: &[ScoreMap],
    demand: Demand,
) -> Result<ScoreMap, GridError> {
    let dims = ego.dims();
    for r in retained {
        dims.check_plane(&r.dims())?;
    }
    let u = demand.value();
    let values = (0..dims.cells())
        .map(|cell| {
            let s = retained
                .iter()
                .fold(ego.values()[cell], |s, r| s + r.values()[cell]);
            s.min(u)
        })
        .collect();
    ScoreMap::accumulated(dims, values)
}
