use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    generate, run_round, PerturbationSpec, RoundConfig, Scenario, ScenarioConfig, SimError,
    Transport,
};
use crate::codebook::{self, Codebook, QuantizerConfig};
use crate::grid::AgentId;
use crate::selection::{Budget, Demand, RankingRule};

pub const CSV_HEADER: &str = "budget,demand,n_L,n_r,pose_sigma,latency,seed,recall,precision,objective,bw_log2_paper,bw_bytes_true,bw_disclosure";

/// A scenario file holds either a concrete scene or a generator config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioDoc {
    Fixed(Scenario),
    Generated(ScenarioConfig),
}

impl ScenarioDoc {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let doc: ScenarioDoc =
            toml::from_str(text).map_err(|e| SimError::Config(e.message().to_string()))?;
        match &doc {
            ScenarioDoc::Fixed(s) => s.validate()?,
            ScenarioDoc::Generated(c) => {
                c.validate()?;
            }
        }
        Ok(doc)
    }

    /// The scene for one sweep seed. Generated scenes are drawn afresh; a
    /// fixed scene keeps its layout and takes the seed for its noise.
    /// A fixed scene as written, or the generator drawn at `seed` (0 if unset).
    pub fn resolve(&self, seed: Option<u64>) -> Result<Scenario, SimError> {
        match (self, seed) {
            (ScenarioDoc::Fixed(s), None) => Ok(s.clone()),
            (_, seed) => self.scenario(seed.unwrap_or(0)),
        }
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario, SimError> {
        match self {
            ScenarioDoc::Fixed(s) => {
                let mut s = s.clone();
                s.seed = seed;
                s.validate()?;
                Ok(s)
            }
            ScenarioDoc::Generated(c) => generate(c, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub n_l: usize,
    pub n_r: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub budgets: Vec<Budget>,
    pub demands: Vec<f64>,
    pub codebooks: Vec<CodebookSpec>,
    pub perturbations: Vec<PerturbationSpec>,
    pub seeds: Vec<u64>,
    /// Frames averaged per row; `None` means the whole horizon.
    pub frames: Option<Vec<usize>>,
    /// Training epochs for each per-scene codebook.
    pub train_iterations: usize,
    pub ranking: RankingRule,
}

impl SweepGrid {
    pub fn new(seeds: Vec<u64>) -> Self {
        Self {
            budgets: vec![Budget::UNLIMITED],
            demands: vec![1.0],
            codebooks: vec![CodebookSpec { n_l: 256, n_r: 2 }],
            perturbations: vec![PerturbationSpec::NONE],
            seeds,
            frames: None,
            train_iterations: 20,
            ranking: RankingRule::RetainedScore,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let empty = [
            (self.budgets.is_empty(), "budgets"),
            (self.demands.is_empty(), "demands"),
            (self.codebooks.is_empty(), "codebooks"),
            (self.perturbations.is_empty(), "perturbations"),
            (self.seeds.is_empty(), "seeds"),
            (self.frames.as_ref().is_some_and(Vec::is_empty), "frames"),
        ];
        if let Some((_, name)) = empty.iter().find(|(e, _)| *e) {
            return Err(SimError::EmptyGrid(name));
        }
        for &u in &self.demands {
            Demand::new(u)?;
        }
        for p in &self.perturbations {
            p.validate()?;
        }
        Ok(())
    }
}

/// One configuration at one seed, averaged over frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub budget: usize,
    pub demand: f64,
    pub n_l: usize,
    pub n_r: usize,
    pub pose_sigma: f64,
    pub pose_rot_sigma: f64,
    pub latency: usize,
    pub seed: u64,
    pub recall: f64,
    pub precision: f64,
    pub objective: f64,
    /// `log2` of the mean per-frame payload bytes.
    pub bw_log2_paper: f64,
    pub bw_bytes_true: f64,
    pub bw_disclosure: f64,
}

impl SweepRow {
    fn key(&self) -> (usize, u64, usize, usize, u64, u64, usize, u64) {
        // every float here is finite and non-negative, so bit order is numeric order
        (
            self.budget,
            self.demand.to_bits(),
            self.n_l,
            self.n_r,
            self.pose_sigma.to_bits(),
            self.pose_rot_sigma.to_bits(),
            self.latency,
            self.seed,
        )
    }

    pub fn csv_line(&self) -> String {
        let budget = if self.budget == usize::MAX {
            "inf".to_string()
        } else {
            self.budget.to_string()
        };
        format!(
            "{budget},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.demand,
            self.n_l,
            self.n_r,
            self.pose_sigma,
            self.latency,
            self.seed,
            self.recall,
            self.precision,
            self.objective,
            self.bw_log2_paper,
            self.bw_bytes_true,
            self.bw_disclosure
        )
    }
}

/// Non-zero feature vectors every agent renders over `frames`.
pub fn scene_dataset(
    scenario: &Scenario,
    frames: &[usize],
) -> Result<Vec<Vec<f64>>, SimError> {
    let c = scenario.channels;
    let table = scenario.embedding_table();
    let mut out = Vec::new();
    for &frame in frames {
        for a in 0..scenario.agent_count() {
            let view = scenario.render_agent_view(&table, AgentId(a as u16), frame)?;
            out.extend(
                view.features
                    .values()
                    .chunks_exact(c)
                    .filter(|v| v.iter().any(|x| *x != 0.0))
                    .map(<[f64]>::to_vec),
            );
        }
    }
    Ok(out)
}

fn scene_codebook(
    scenario: &Scenario,
    frames: &[usize],
    spec: CodebookSpec,
    iterations: usize,
) -> Result<Codebook, SimError> {
    let config = QuantizerConfig {
        n_l: spec.n_l,
        n_r: spec.n_r,
        iterations,
        tolerance: 1e-9,
        seed: scenario.seed,
    };
    config.validate()?;
    let data = scene_dataset(scenario, frames)?;
    if data.is_empty() {
        // nothing to transmit in this scene; any codebook of the right shape works
        return Ok(Codebook::new(
            scenario.channels,
            vec![0.0; spec.n_l * scenario.channels],
        )?);
    }
    Ok(codebook::train(&data, &config)?)
}

/// Cross product of the grid, one row per configuration and seed.
///
/// Every seed gets its own scene and, per codebook spec, a codebook trained
/// on that scene's features. Rows come back sorted by configuration key.
pub fn sweep(doc: &ScenarioDoc, grid: &SweepGrid) -> Result<Vec<SweepRow>, SimError> {
    grid.validate()?;

    let scenes: Vec<(u64, Scenario, Vec<usize>)> = grid
        .seeds
        .iter()
        .map(|&seed| {
            let s = doc.scenario(seed)?;
            let frames = match &grid.frames {
                Some(f) => f.clone(),
                None => (0..s.horizon).collect(),
            };
            if let Some(&f) = frames.iter().find(|&&f| f >= s.horizon) {
                return Err(SimError::FrameOutOfRange {
                    frame: f,
                    horizon: s.horizon,
                });
            }
            Ok((seed, s, frames))
        })
        .collect::<Result<_, SimError>>()?;

    let jobs: Vec<(usize, CodebookSpec)> = (0..scenes.len())
        .flat_map(|i| grid.codebooks.iter().map(move |&c| (i, c)))
        .collect();
    let codebooks: BTreeMap<(usize, CodebookSpec), Codebook> = jobs
        .par_iter()
        .map(|&(i, spec)| {
            let (_, s, frames) = &scenes[i];
            scene_codebook(s, frames, spec, grid.train_iterations).map(|cb| ((i, spec), cb))
        })
        .collect::<Result<_, SimError>>()?;

    let mut cells = Vec::new();
    for i in 0..scenes.len() {
        for &spec in &grid.codebooks {
            for &budget in &grid.budgets {
                for &u in &grid.demands {
                    for &p in &grid.perturbations {
                        cells.push((i, spec, budget, u, p));
                    }
                }
            }
        }
    }

    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(i, spec, budget, u, p)| {
            let (seed, s, frames) = &scenes[i];
            let cb = &codebooks[&(i, spec)];
            let config = RoundConfig {
                ranking: grid.ranking,
                ..RoundConfig::new(Demand::new(u)?, budget).with_perturbation(p)
            };
            let transport = Transport::Codes {
                codebook: cb,
                n_r: spec.n_r,
            };
            let reports = frames
                .iter()
                .map(|&f| run_round(s, f, &config, transport))
                .collect::<Result<Vec<_>, _>>()?;
            let k = reports.len() as f64;
            let avg = |g: &dyn Fn(&super::RoundReport) -> f64| reports.iter().map(g).sum::<f64>() / k;
            let paper_bytes = avg(&|r| r.bw_paper_bytes);
            Ok(SweepRow {
                budget: budget.cells(),
                demand: u,
                n_l: spec.n_l,
                n_r: spec.n_r,
                pose_sigma: p.pose_sigma,
                pose_rot_sigma: p.pose_rot_sigma,
                latency: p.latency_frames,
                seed: *seed,
                recall: avg(&|r| r.mean_recall),
                precision: avg(&|r| r.mean_precision),
                objective: avg(&|r| r.objective),
                bw_log2_paper: crate::wire::log2_or_zero(paper_bytes),
                bw_bytes_true: avg(&|r| r.bw_true_bytes as f64),
                bw_disclosure: avg(&|r| r.bw_disclosure as f64),
            })
        })
        .collect::<Result<_, SimError>>()?;
    rows.sort_by_key(SweepRow::key);
    Ok(rows)
}

/// Rows with the seed averaged out, keyed like the input; `seed` is set to
/// the number of seeds merged.
pub fn mean_by_config(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut groups: BTreeMap<_, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let mut k = r.key();
        k.7 = 0;
        groups.entry(k).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let k = g.len() as f64;
            let avg = |f: fn(&SweepRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / k;
            SweepRow {
                seed: g.len() as u64,
                recall: avg(|r| r.recall),
                precision: avg(|r| r.precision),
                objective: avg(|r| r.objective),
                bw_log2_paper: avg(|r| r.bw_log2_paper),
                bw_bytes_true: avg(|r| r.bw_bytes_true),
                bw_disclosure: avg(|r| r.bw_disclosure),
                ..g[0].clone()
            }
        })
        .collect()
}

pub fn write_csv(rows: &[SweepRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioDoc {
        ScenarioDoc::Generated(ScenarioConfig {
            height: 24,
            width: 24,
            channels: 4,
            horizon: 2,
            agents: 3,
            objects: 8,
            embeddings: 4,
            radius_min: 5.0,
            radius_max: 8.0,
            ..ScenarioConfig::default()
        })
    }

    fn grid() -> SweepGrid {
        SweepGrid {
            codebooks: vec![CodebookSpec { n_l: 8, n_r: 1 }],
            train_iterations: 5,
            ..SweepGrid::new(vec![1, 2])
        }
    }

    #[test]
    fn single_point_is_the_round_average() {
        let g = SweepGrid {
            seeds: vec![3],
            budgets: vec![Budget(10)],
            ..grid()
        };
        let rows = sweep(&small(), &g).unwrap();
        assert_eq!(rows.len(), 1);
        let s = small().scenario(3).unwrap();
        let cb = scene_codebook(&s, &[0, 1], g.codebooks[0], 5).unwrap();
        let c = RoundConfig::new(Demand::new(1.0).unwrap(), Budget(10));
        let t = Transport::Codes { codebook: &cb, n_r: 1 };
        let r0 = run_round(&s, 0, &c, t).unwrap();
        let r1 = run_round(&s, 1, &c, t).unwrap();
        assert_eq!(rows[0].recall, (r0.mean_recall + r1.mean_recall) / 2.0);
        assert_eq!(rows[0].objective, (r0.objective + r1.objective) / 2.0);
    }

    #[test]
    fn rows_are_sorted_and_deterministic() {
        let g = SweepGrid {
            budgets: vec![Budget::UNLIMITED, Budget(0), Budget(4)],
            ..grid()
        };
        let a = sweep(&small(), &g).unwrap();
        assert_eq!(a, sweep(&small(), &g).unwrap());
        assert_eq!(a.len(), 6);
        assert!(a.windows(2).all(|w| w[0].key() <= w[1].key()));
        assert_eq!(a[0].budget, 0);
        assert!(a[5].csv_line().starts_with("inf,"));
        assert_eq!(mean_by_config(&a).len(), 3);
    }

    #[test]
    fn empty_grids_are_rejected() {
        let g = SweepGrid {
            budgets: vec![],
            ..grid()
        };
        assert_eq!(sweep(&small(), &g), Err(SimError::EmptyGrid("budgets")));
    }

    #[test]
    fn csv_shape() {
        let rows = sweep(&small(), &grid()).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), rows.len() + 1);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 13));
    }

    #[test]
    fn scenario_doc_parses_both_forms() {
        let generated = ScenarioDoc::from_toml("height = 16\nwidth = 16\nagents = 2\n").unwrap();
        assert!(matches!(generated, ScenarioDoc::Generated(_)));
        let s = generated.scenario(1).unwrap();
        let text = s.to_toml().unwrap();
        assert_eq!(ScenarioDoc::from_toml(&text).unwrap(), ScenarioDoc::Fixed(s));
        assert!(ScenarioDoc::from_toml("height = 0").is_err());
        assert!(ScenarioDoc::from_toml("bogus = 1").is_err());
    }
}
