//! Communication-efficient collaborative perception over BEV grids.
//!
//! Agents disclose per-cell information scores, choose which cells to send
//! to which receiver under a shared cell budget ([`selection`]), replace the
//! selected feature vectors by indices into a shared codebook
//! ([`codebook`]), pack them into a compact message ([`wire`]) and fuse the
//! decoded messages by point-wise maximum ([`fusion`]). [`sim`] drives the
//! whole exchange over synthetic scenes.

pub mod codebook;
pub mod fusion;
pub mod grid;
pub mod io;
pub mod selection;
pub mod sim;
pub mod wire;

pub use codebook::{Codebook, CodeAssignment, QuantizerConfig};
pub use grid::{AgentId, FeatureMap, GridDims, ScoreMap, SelectionMatrix, SparseFeature};
pub use selection::{Budget, Demand, SelectionResult};
pub use wire::{CodeIndexMessage, MessageMeta};
