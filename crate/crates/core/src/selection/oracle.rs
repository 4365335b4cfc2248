//! Seeded random instances for checking the solver against [`brute_force`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{brute_force, solve_with, Budget, Demand, RankingRule, SelectionError};
use crate::grid::{GridDims, ScoreMap};

/// Objectives closer than this count as equal. Distinct selections on a
/// 0.1 score grid differ by at least 0.1, summation order by ~1e-15.
pub const OBJECTIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleLimits {
    pub max_agents: usize,
    pub max_cells: usize,
    pub max_budget: usize,
    pub demands: Vec<f64>,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            max_agents: 3,
            max_cells: 6,
            max_budget: 5,
            demands: vec![0.5, 1.0, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub maps: Vec<ScoreMap>,
    pub demand: Demand,
    pub budget: Budget,
}

/// One instance: `1..=max_agents` agents on a `1 x cells` strip with
/// `cells` in `1..=max_cells`, scores in `{0, 0.1, ..., 1}`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    limits: &OracleLimits,
) -> Result<Instance, SelectionError> {
    if limits.max_agents == 0 || limits.max_cells == 0 || limits.demands.is_empty() {
        return Err(SelectionError::NoAgents);
    }
    let n = rng.random_range(1..=limits.max_agents);
    let cells = rng.random_range(1..=limits.max_cells);
    let dims = GridDims::spatial(1, cells)?;
    let maps = (0..n)
        .map(|_| {
            let v = (0..cells)
                .map(|_| rng.random_range(0..=10u32) as f64 / 10.0)
                .collect();
            ScoreMap::new(dims, v)
        })
        .collect::<Result<_, _>>()?;
    let demand = Demand::new(limits.demands[rng.random_range(0..limits.demands.len())])?;
    let budget = Budget(rng.random_range(0..=limits.max_budget));
    Ok(Instance {
        maps,
        demand,
        budget,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub instance: Instance,
    pub solver: f64,
    pub optimum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub instances: usize,
    pub mismatches: Vec<Mismatch>,
}

/// Solves `instances` seeded instances both ways.
pub fn oracle_check(
    instances: usize,
    seed: u64,
    limits: &OracleLimits,
    rule: RankingRule,
) -> Result<OracleSummary, SelectionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = Vec::new();
    for index in 0..instances {
        let instance = random_instance(&mut rng, limits)?;
        let solver = solve_with(&instance.maps, instance.demand, instance.budget, rule)?.objective;
        let optimum = brute_force(&instance.maps, instance.demand, instance.budget)?.objective;
        if (solver - optimum).abs() > OBJECTIVE_TOLERANCE {
            mismatches.push(Mismatch {
                index,
                instance,
                solver,
                optimum,
            });
        }
    }
    Ok(OracleSummary {
        instances,
        mismatches,
    })
}
