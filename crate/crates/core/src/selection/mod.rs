//! Information-filling message selection.
//!
//! Every agent discloses a score map. For each receiver and cell the other
//! agents are ranked by score and retained while the receiver's accumulated
//! score is still within the demand `u` (one overshoot allowed). The retained
//! `(sender, receiver, cell)` triples are then ranked globally and the top `b`
//! become the transmitted cells.

mod brute;
mod oracle;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::fusion;
use crate::grid::{AgentId, GridDims, GridError, ScoreMap, SelectionMatrix};

pub use brute::{
    brute_force, brute_force_with_limit, BruteForceResult, DEFAULT_ENUMERATION_LIMIT,
};
pub use oracle::{oracle_check, random_instance, Instance, Mismatch, OracleLimits, OracleSummary};

/// `(sender, receiver)`.
pub type PairKey = (AgentId, AgentId);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("at least one score map is required")]
    NoAgents,
    #[error("{0} agents exceed the 16-bit agent id space")]
    TooManyAgents(usize),
    #[error("information demand must be positive and finite, got {0}")]
    InvalidDemand(f64),
    #[error("pair {sender}->{receiver} is not a valid ordered pair of distinct agents")]
    InvalidPair { sender: AgentId, receiver: AgentId },
    #[error("instance needs {needed} enumerations, limit is {limit}")]
    InstanceTooLarge { needed: u128, limit: u128 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Per-cell information demand `u`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Demand(f64);

impl Demand {
    pub fn new(u: f64) -> Result<Self, SelectionError> {
        if u.is_finite() && u > 0.0 {
            Ok(Self(u))
        } else {
            Err(SelectionError::InvalidDemand(u))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Total number of selected cells across all sender/receiver pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Budget(pub usize);

impl Budget {
    pub const UNLIMITED: Budget = Budget(usize::MAX);

    pub fn cells(self) -> usize {
        self.0
    }
}

/// Scores a sender keeps for one receiver after the demand cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCandidates {
    /// Sender's score where retained, zero elsewhere.
    pub retained: ScoreMap,
    /// Cells where the sender was retained.
    pub mask: SelectionMatrix,
    /// Increase of `min(accumulated, u)` the sender adds at its rank, given
    /// every higher-ranked sender is also sent.
    pub gain: ScoreMap,
}

/// Key used to rank retained candidates against the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankingRule {
    /// Rank by the retained sender score itself.
    #[default]
    RetainedScore,
    /// Rank by the capped marginal gain. A retained score can overstate what
    /// it adds when the receiver is already close to the demand; ranking by
    /// gain removes that overstatement.
    MarginalGain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    dims: GridDims,
    agents: usize,
    pairs: BTreeMap<PairKey, PairCandidates>,
}

impl CandidateScores {
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn pairs(&self) -> &BTreeMap<PairKey, PairCandidates> {
        &self.pairs
    }

    pub fn get(&self, sender: AgentId, receiver: AgentId) -> Option<&PairCandidates> {
        self.pairs.get(&(sender, receiver))
    }

    /// Number of retained triples with a positive score.
    pub fn positive_count(&self) -> usize {
        self.pairs
            .values()
            .map(|p| p.retained.values().iter().filter(|v| **v > 0.0).count())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub matrices: BTreeMap<PairKey, SelectionMatrix>,
    pub objective: f64,
    /// Per receiver: `min(C_j + sum of selected C_i, u)`.
    pub filled_scores: Vec<ScoreMap>,
}

impl SelectionResult {
    pub fn total_selected(&self) -> usize {
        self.matrices.values().map(SelectionMatrix::count).sum()
    }
}

pub(crate) fn check_maps(score_maps: &[ScoreMap]) -> Result<GridDims, SelectionError> {
    let first = score_maps.first().ok_or(SelectionError::NoAgents)?;
    if score_maps.len() > u16::MAX as usize + 1 {
        return Err(SelectionError::TooManyAgents(score_maps.len()));
    }
    let dims = first.dims();
    for m in &score_maps[1..] {
        dims.check_plane(&m.dims())?;
    }
    Ok(dims)
}

fn agent(i: usize) -> AgentId {
    AgentId(i as u16)
}

/// Steps a and b: per receiver and cell, retain the best-scoring senders
/// until the running score exceeds the demand.
pub fn demand_filter(
    score_maps: &[ScoreMap],
    demand: Demand,
) -> Result<CandidateScores, SelectionError> {
    let dims = check_maps(score_maps)?;
    let n = score_maps.len();
    let u = demand.value();
    let cells = dims.cells();

    let per_receiver: Vec<Vec<(PairKey, PairCandidates)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut retained = vec![vec![0.0; cells]; n];
            let mut gains = vec![vec![0.0; cells]; n];
            let mut kept = vec![vec![false; cells]; n];
            let mut ranked: Vec<usize> = Vec::with_capacity(n.saturating_sub(1));
            for cell in 0..cells {
                ranked.clear();
                ranked.extend((0..n).filter(|&i| i != j));
                ranked.sort_by(|&a, &b| {
                    let (sa, sb) = (score_maps[a].values()[cell], score_maps[b].values()[cell]);
                    sb.total_cmp(&sa).then(a.cmp(&b))
                });
                let mut s = score_maps[j].values()[cell];
                for &i in &ranked {
                    if s > u {
                        break;
                    }
                    let c = score_maps[i].values()[cell];
                    gains[i][cell] = (s + c).min(u) - s.min(u);
                    s += c;
                    retained[i][cell] = c;
                    kept[i][cell] = true;
                }
            }
            (0..n)
                .filter(|&i| i != j)
                .map(|i| {
                    let cand = PairCandidates {
                        retained: ScoreMap::new(dims, std::mem::take(&mut retained[i]))
                            .expect("retained values are copies of valid scores"),
                        mask: SelectionMatrix::from_mask(dims, std::mem::take(&mut kept[i]))
                            .expect("mask has grid length"),
                        gain: ScoreMap::accumulated(dims, std::mem::take(&mut gains[i]))
                            .expect("gains are finite and non-negative"),
                    };
                    ((agent(i), agent(j)), cand)
                })
                .collect()
        })
        .collect();

    Ok(CandidateScores {
        dims,
        agents: n,
        pairs: per_receiver.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy)]
struct Ranked {
    score: f64,
    receiver: AgentId,
    sender: AgentId,
    cell: usize,
}

/// Higher score first, then receiver, sender and row-major cell ascending.
fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.receiver.cmp(&b.receiver))
        .then(a.sender.cmp(&b.sender))
        .then(a.cell.cmp(&b.cell))
}

/// Steps c and d: keep the `b` highest retained scores over all pairs.
///
/// Zero-valued candidates are never selected. Only the top-`b` partition is
/// computed; the order inside it is irrelevant.
pub fn budget_select(
    candidates: &CandidateScores,
    budget: Budget,
) -> BTreeMap<PairKey, SelectionMatrix> {
    budget_select_by(candidates, budget, RankingRule::RetainedScore)
}

pub fn budget_select_by(
    candidates: &CandidateScores,
    budget: Budget,
    rule: RankingRule,
) -> BTreeMap<PairKey, SelectionMatrix> {
    let dims = candidates.dims;
    let mut pool: Vec<Ranked> = candidates
        .pairs
        .iter()
        .flat_map(|(&(sender, receiver), pc)| {
            let key = match rule {
                RankingRule::RetainedScore => &pc.retained,
                RankingRule::MarginalGain => &pc.gain,
            };
            key.values()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(move |(cell, &score)| Ranked {
                    score,
                    receiver,
                    sender,
                    cell,
                })
        })
        .collect();

    let b = budget.cells();
    if b == 0 {
        pool.clear();
    } else if b < pool.len() {
        pool.select_nth_unstable_by(b - 1, rank_order);
        pool.truncate(b);
    }

    let mut masks: BTreeMap<PairKey, Vec<bool>> = candidates
        .pairs
        .keys()
        .map(|k| (*k, vec![false; dims.cells()]))
        .collect();
    for r in &pool {
        masks.get_mut(&(r.sender, r.receiver)).expect("pair exists")[r.cell] = true;
    }
    masks
        .into_iter()
        .map(|(k, m)| (k, SelectionMatrix::from_mask(dims, m).expect("grid length")))
        .collect()
}

/// Selection followed by budget allocation, with the resulting objective.
pub fn solve(
    score_maps: &[ScoreMap],
    demand: Demand,
    budget: Budget,
) -> Result<SelectionResult, SelectionError> {
    solve_with(score_maps, demand, budget, RankingRule::RetainedScore)
}

pub fn solve_with(
    score_maps: &[ScoreMap],
    demand: Demand,
    budget: Budget,
    rule: RankingRule,
) -> Result<SelectionResult, SelectionError> {
    let candidates = demand_filter(score_maps, demand)?;
    let matrices = budget_select_by(&candidates, budget, rule);
    let objective = objective(score_maps, &matrices, demand)?;
    let filled_scores = filled_scores(score_maps, &matrices, demand)?;
    Ok(SelectionResult {
        matrices,
        objective,
        filled_scores,
    })
}

fn validate_pairs(
    n: usize,
    dims: GridDims,
    matrices: &BTreeMap<PairKey, SelectionMatrix>,
) -> Result<(), SelectionError> {
    for (&(sender, receiver), m) in matrices {
        if sender == receiver || sender.index() >= n || receiver.index() >= n {
            return Err(SelectionError::InvalidPair { sender, receiver });
        }
        dims.check_plane(&m.dims())?;
    }
    Ok(())
}

/// `sum_j sum_cells min(C_j + sum_i M_ij ⊙ C_i, u)`.
///
/// Pairs missing from `matrices` count as all-zero masks.
pub fn objective(
    score_maps: &[ScoreMap],
    matrices: &BTreeMap<PairKey, SelectionMatrix>,
    demand: Demand,
) -> Result<f64, SelectionError> {
    let dims = check_maps(score_maps)?;
    let n = score_maps.len();
    validate_pairs(n, dims, matrices)?;
    let u = demand.value();
    let mut total = 0.0;
    for j in 0..n {
        let incoming: Vec<(usize, &SelectionMatrix)> = (0..n)
            .filter(|&i| i != j)
            .filter_map(|i| matrices.get(&(agent(i), agent(j))).map(|m| (i, m)))
            .collect();
        for cell in 0..dims.cells() {
            let mut acc = score_maps[j].values()[cell];
            for &(i, m) in &incoming {
                if m.mask()[cell] {
                    acc += score_maps[i].values()[cell];
                }
            }
            total += acc.min(u);
        }
    }
    Ok(total)
}

/// Per-receiver filled score maps for a set of selection matrices.
pub fn filled_scores(
    score_maps: &[ScoreMap],
    matrices: &BTreeMap<PairKey, SelectionMatrix>,
    demand: Demand,
) -> Result<Vec<ScoreMap>, SelectionError> {
    let dims = check_maps(score_maps)?;
    let n = score_maps.len();
    validate_pairs(n, dims, matrices)?;
    (0..n)
        .map(|j| {
            let incoming = (0..n)
                .filter(|&i| i != j)
                .filter_map(|i| {
                    matrices
                        .get(&(agent(i), agent(j)))
                        .map(|m| score_maps[i].masked(m))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(fusion::fuse_scores(&score_maps[j], &incoming, demand)?)
        })
        .collect()
}
