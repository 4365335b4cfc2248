//! Exhaustive optimum of the selection objective for small instances.
//!
//! Used as the reference the two-stage solver is checked against, so it
//! shares nothing with it beyond the input types.

use std::collections::BTreeMap;

use super::{check_maps, Demand, PairKey, SelectionError};
use crate::grid::{AgentId, ScoreMap, SelectionMatrix};

pub const DEFAULT_ENUMERATION_LIMIT: u128 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub objective: f64,
    pub matrices: BTreeMap<PairKey, SelectionMatrix>,
    /// Number of subsets visited.
    pub enumerated: u128,
}

struct Triple {
    receiver: usize,
    sender: usize,
    cell: usize,
    score: f64,
}

/// Subsets of size at most `b` of an `m`-set, saturating once past `cap`.
fn subset_count(m: usize, b: usize, cap: u128) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for k in 0..=b.min(m) {
        if k > 0 {
            binom = binom * (m - k + 1) as u128 / k as u128;
        }
        total = total.saturating_add(binom);
        if total > cap {
            return total;
        }
    }
    total
}

pub fn brute_force(
    score_maps: &[ScoreMap],
    demand: Demand,
    budget: super::Budget,
) -> Result<BruteForceResult, SelectionError> {
    brute_force_with_limit(score_maps, demand, budget, DEFAULT_ENUMERATION_LIMIT)
}

/// Enumerates every set of at most `b` transmitted cells.
///
/// Triples whose sender score is zero cannot change the objective and are
/// left out of the enumeration.
pub fn brute_force_with_limit(
    score_maps: &[ScoreMap],
    demand: Demand,
    budget: super::Budget,
    limit: u128,
) -> Result<BruteForceResult, SelectionError> {
    let dims = check_maps(score_maps)?;
    let n = score_maps.len();
    let cells = dims.cells();
    let u = demand.value();

    let mut triples = Vec::new();
    for receiver in 0..n {
        for sender in (0..n).filter(|&s| s != receiver) {
            for cell in 0..cells {
                let score = score_maps[sender].values()[cell];
                if score > 0.0 {
                    triples.push(Triple {
                        receiver,
                        sender,
                        cell,
                        score,
                    });
                }
            }
        }
    }
    let b = budget.cells().min(triples.len());
    let needed = subset_count(triples.len(), b, limit);
    if needed > limit {
        return Err(SelectionError::InstanceTooLarge { needed, limit });
    }

    let mut acc: Vec<f64> = (0..n)
        .flat_map(|j| score_maps[j].values().iter().copied())
        .collect();
    let base: f64 = acc.iter().map(|v| v.min(u)).sum();

    let mut search = Search {
        triples: &triples,
        u,
        cells,
        acc: &mut acc,
        chosen: Vec::with_capacity(b),
        best_value: base,
        best: Vec::new(),
        visited: 0,
    };
    search.run(0, b, base);
    let visited = search.visited;
    let best = search.best;

    let mut masks: BTreeMap<PairKey, Vec<bool>> = BTreeMap::new();
    for j in 0..n {
        for i in (0..n).filter(|&i| i != j) {
            masks.insert((AgentId(i as u16), AgentId(j as u16)), vec![false; cells]);
        }
    }
    for &t in &best {
        let t = &triples[t];
        masks.get_mut(&(AgentId(t.sender as u16), AgentId(t.receiver as u16))).unwrap()[t.cell] =
            true;
    }

    // fresh evaluation in receiver, cell, sender order
    let mut objective = 0.0;
    for j in 0..n {
        for cell in 0..cells {
            let mut s = score_maps[j].values()[cell];
            for i in (0..n).filter(|&i| i != j) {
                if masks[&(AgentId(i as u16), AgentId(j as u16))][cell] {
                    s += score_maps[i].values()[cell];
                }
            }
            objective += s.min(u);
        }
    }

    let matrices = masks
        .into_iter()
        .map(|(k, m)| (k, SelectionMatrix::from_mask(dims, m).expect("grid length")))
        .collect();
    Ok(BruteForceResult {
        objective,
        matrices,
        enumerated: visited,
    })
}

struct Search<'a> {
    triples: &'a [Triple],
    u: f64,
    cells: usize,
    acc: &'a mut Vec<f64>,
    chosen: Vec<usize>,
    best_value: f64,
    best: Vec<usize>,
    visited: u128,
}

impl Search<'_> {
    fn run(&mut self, start: usize, remaining: usize, value: f64) {
        self.visited += 1;
        if value > self.best_value + 1e-12 {
            self.best_value = value;
            self.best = self.chosen.clone();
        }
        if remaining == 0 {
            return;
        }
        for k in start..self.triples.len() {
            let t = &self.triples[k];
            let slot = t.receiver * self.cells + t.cell;
            let before = self.acc[slot];
            let after = before + t.score;
            let gain = after.min(self.u) - before.min(self.u);
            self.acc[slot] = after;
            self.chosen.push(k);
            self.run(k + 1, remaining - 1, value + gain);
            self.chosen.pop();
            self.acc[slot] = before;
        }
    }
}
