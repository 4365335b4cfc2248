use std::collections::BTreeSet;

use serde::Serialize;

use super::{AgentView, PerturbationSpec, Scenario, SimError};
use crate::codebook::Codebook;
use crate::fusion::{self, DecodedMessage};
use crate::grid::{self, AgentId, FeatureMap, ScoreMap};
use crate::selection::{self, Budget, Demand, RankingRule, SelectionResult};
use crate::wire::{
    self, code_bandwidth, feature_bandwidth, log2_or_zero, CodeIndexMessage, Representation,
    HEADER_LEN,
};

/// Fused-score threshold for a detection.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// How selected features travel.
#[derive(Debug, Clone, Copy)]
pub enum Transport<'a> {
    /// Full-precision vectors; the reference pipeline.
    Raw,
    Codes { codebook: &'a Codebook, n_r: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundConfig {
    pub demand: Demand,
    pub budget: Budget,
    pub perturbation: PerturbationSpec,
    pub threshold: f64,
    pub ranking: RankingRule,
}

impl RoundConfig {
    pub fn new(demand: Demand, budget: Budget) -> Self {
        Self {
            demand,
            budget,
            perturbation: PerturbationSpec::NONE,
            threshold: DEFAULT_THRESHOLD,
            ranking: RankingRule::RetainedScore,
        }
    }

    pub fn with_perturbation(mut self, perturbation: PerturbationSpec) -> Self {
        self.perturbation = perturbation;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub frame: usize,
    pub seed: u64,
    pub demand: f64,
    /// `usize::MAX` for an unlimited budget.
    pub budget: usize,
    pub representation: Representation,
    /// 0 for raw transport.
    pub n_l: usize,
    pub n_r: usize,
    pub perturbation: PerturbationSpec,
    pub threshold: f64,
    /// Per agent, collaborative.
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub mean_recall: f64,
    pub mean_precision: f64,
    /// Ego view only.
    pub baseline_recall: f64,
    pub baseline_precision: f64,
    /// Union of every agent's thresholded peaks.
    pub late_recall: f64,
    pub late_precision: f64,
    pub objective: f64,
    pub selected_cells: usize,
    pub messages: usize,
    /// Payload-only accounting summed over messages.
    pub bw_paper_bytes: f64,
    pub bw_log2_paper: f64,
    /// Actual packed size summed over messages.
    pub bw_true_bytes: usize,
    /// Score-map broadcast, f32 per cell per agent.
    pub bw_disclosure: usize,
}

/// A report together with the intermediate maps that produced it.
#[derive(Debug, Clone)]
pub struct RoundDetail {
    pub report: RoundReport,
    pub selection: SelectionResult,
    /// Packed bytes of every non-empty message, in `(sender, receiver)` order.
    pub messages: Vec<(AgentId, AgentId, Vec<u8>)>,
    pub fused_features: Vec<FeatureMap>,
    pub fused_scores: Vec<ScoreMap>,
}

pub fn run_round(
    scenario: &Scenario,
    frame: usize,
    config: &RoundConfig,
    transport: Transport<'_>,
) -> Result<RoundReport, SimError> {
    run_round_detailed(scenario, frame, config, transport).map(|d| d.report)
}

struct Detection {
    recall: f64,
    precision: f64,
}

fn detect(detected: &BTreeSet<usize>, truth: &BTreeSet<usize>) -> Detection {
    let hits = detected.intersection(truth).count() as f64;
    Detection {
        recall: if truth.is_empty() { 1.0 } else { hits / truth.len() as f64 },
        precision: if detected.is_empty() {
            1.0
        } else {
            hits / detected.len() as f64
        },
    }
}

fn peaks(map: &ScoreMap, threshold: f64) -> BTreeSet<usize> {
    map.values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= threshold)
        .map(|(i, _)| i)
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn run_round_detailed(
    scenario: &Scenario,
    frame: usize,
    config: &RoundConfig,
    transport: Transport<'_>,
) -> Result<RoundDetail, SimError> {
    scenario.validate()?;
    config.perturbation.validate()?;
    if !(config.threshold.is_finite() && config.threshold > 0.0) {
        return Err(SimError::Config("detection threshold must be positive".into()));
    }
    let dims = scenario.dims();
    if let Transport::Codes { codebook, .. } = transport {
        if codebook.channels() != dims.channels() {
            return Err(SimError::ChannelMismatch {
                codebook: codebook.channels(),
                scene: dims.channels(),
            });
        }
    }
    let n = scenario.agent_count();
    let agents: Vec<AgentId> = (0..n).map(|i| AgentId(i as u16)).collect();
    let table = scenario.embedding_table();
    let pert = config.perturbation;

    // (1) ego views are current; everything a collaborator contributes is stale
    let current: Vec<AgentView> = agents
        .iter()
        .map(|&a| scenario.render_agent_view(&table, a, frame))
        .collect::<Result<_, _>>()?;
    let stale_frame = pert.stale_frame(frame);
    let stale: Vec<AgentView> = if stale_frame == frame {
        current.clone()
    } else {
        agents
            .iter()
            .map(|&a| scenario.render_agent_view(&table, a, stale_frame))
            .collect::<Result<_, _>>()?
    };

    // (2) disclosure and (3) selection over the broadcast maps
    let disclosed: Vec<ScoreMap> = stale.iter().map(|v| v.scores.clone()).collect();
    let bw_disclosure = n * dims.cells() * 4;
    let selection =
        selection::solve_with(&disclosed, config.demand, config.budget, config.ranking)?;

    let warps: Vec<_> = agents
        .iter()
        .map(|&a| {
            let p = scenario.agents[a.index()].position;
            pert.warp(scenario.seed, frame, a, (p[0], p[1]))
        })
        .collect();

    // (4) encode, pack, unpack, decode; (5) misalign
    let mut decoded: Vec<Vec<DecodedMessage>> = vec![Vec::new(); n];
    let mut contributions: Vec<Vec<ScoreMap>> = vec![Vec::new(); n];
    let mut messages = Vec::new();
    let mut bw_paper_bytes = 0.0;
    let mut bw_true_bytes = 0;
    for (&(sender, receiver), mask) in &selection.matrices {
        if mask.count() == 0 {
            continue;
        }
        let sparse = grid::apply_selection(&stale[sender.index()].features, mask)?;
        let message = match transport {
            Transport::Raw => {
                bw_paper_bytes += feature_bandwidth(dims, mask).raw_bytes;
                bw_true_bytes += HEADER_LEN + mask.count() * (4 + 4 * dims.channels());
                DecodedMessage::from_sparse(sender, receiver, &sparse)
            }
            Transport::Codes { codebook, n_r } => {
                let msg = CodeIndexMessage::encode_sparse(sender, receiver, &sparse, codebook, n_r)?;
                bw_paper_bytes +=
                    code_bandwidth(dims, mask, codebook.size(), n_r)?.raw_bytes;
                let bytes = msg.to_bytes();
                bw_true_bytes += bytes.len();
                let received = wire::unpack(&bytes)?;
                let out = fusion::decode_message(&received, codebook)?;
                messages.push((sender, receiver, bytes));
                out
            }
        };
        let warp = &warps[sender.index()];
        let retained = disclosed[sender.index()].masked(mask)?;
        if warp.is_identity() {
            decoded[receiver.index()].push(message);
            contributions[receiver.index()].push(retained);
        } else {
            decoded[receiver.index()].push(DecodedMessage {
                features: warp.apply_features(&message.features),
                ..message
            });
            contributions[receiver.index()].push(warp.apply_scores(&retained));
        }
    }

    // (6) fuse and (7) score
    let truth: BTreeSet<usize> = scenario
        .object_cells(frame)
        .into_iter()
        .map(|(r, c)| dims.index(r, c))
        .collect();
    let collaborator_peaks: Vec<BTreeSet<usize>> = disclosed
        .iter()
        .zip(&warps)
        .map(|(m, w)| peaks(&w.apply_scores(m), config.threshold))
        .collect();

    let mut fused_features = Vec::with_capacity(n);
    let mut fused_scores = Vec::with_capacity(n);
    let mut collab = Vec::with_capacity(n);
    let mut baseline = Vec::with_capacity(n);
    let mut late = Vec::with_capacity(n);
    for j in 0..n {
        fused_features.push(fusion::fuse(&current[j].features, &decoded[j])?);
        let filled = fusion::fuse_scores(&current[j].scores, &contributions[j], config.demand)?;
        collab.push(detect(&peaks(&filled, config.threshold), &truth));
        let ego = fusion::fuse_scores(&current[j].scores, &[], config.demand)?;
        let ego_peaks = peaks(&ego, config.threshold);
        baseline.push(detect(&ego_peaks, &truth));
        let mut union = ego_peaks;
        for (i, p) in collaborator_peaks.iter().enumerate() {
            if i != j {
                union.extend(p);
            }
        }
        late.push(detect(&union, &truth));
        fused_scores.push(filled);
    }

    let (representation, n_l, n_r) = match transport {
        Transport::Raw => (Representation::Feature, 0, 0),
        Transport::Codes { codebook, n_r } => (Representation::Code, codebook.size(), n_r),
    };
    let report = RoundReport {
        frame,
        seed: scenario.seed,
        demand: config.demand.value(),
        budget: config.budget.cells(),
        representation,
        n_l,
        n_r,
        perturbation: pert,
        threshold: config.threshold,
        recall: collab.iter().map(|d| d.recall).collect(),
        precision: collab.iter().map(|d| d.precision).collect(),
        mean_recall: mean(collab.iter().map(|d| d.recall)),
        mean_precision: mean(collab.iter().map(|d| d.precision)),
        baseline_recall: mean(baseline.iter().map(|d| d.recall)),
        baseline_precision: mean(baseline.iter().map(|d| d.precision)),
        late_recall: mean(late.iter().map(|d| d.recall)),
        late_precision: mean(late.iter().map(|d| d.precision)),
        objective: selection.objective,
        selected_cells: selection.total_selected(),
        messages: decoded.iter().map(Vec::len).sum(),
        bw_paper_bytes,
        bw_log2_paper: log2_or_zero(bw_paper_bytes),
        bw_true_bytes,
        bw_disclosure,
    };
    Ok(RoundDetail {
        report,
        selection,
        messages,
        fused_features,
        fused_scores,
    })
}

/// Every distinct feature vector any agent renders over `frames`, plus the
/// zero vector, padded with zeros to a power of two. With `n_r = 1` such a
/// codebook reproduces the scene's features exactly.
pub fn lossless_codebook(
    scenario: &Scenario,
    frames: impl IntoIterator<Item = usize>,
) -> Result<Codebook, SimError> {
    let dims = scenario.dims();
    let c = dims.channels();
    let table = scenario.embedding_table();
    let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
    seen.insert(vec![0f32.to_bits(); c]);
    for frame in frames {
        for a in 0..scenario.agent_count() {
            let view = scenario.render_agent_view(&table, AgentId(a as u16), frame)?;
            for cell in view.features.values().chunks_exact(c) {
                seen.insert(cell.iter().map(|&v| (v as f32).to_bits()).collect());
            }
        }
    }
    let size = seen.len().next_power_of_two();
    let mut codes: Vec<f32> = seen
        .into_iter()
        .flatten()
        .map(f32::from_bits)
        .collect();
    codes.resize(size * c, 0.0);
    Ok(Codebook::new(c, codes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{AgentSpec, Modality, ObjectSpec};

    /// Two agents far apart, each seeing one object the other cannot.
    fn disjoint() -> Scenario {
        let agent = |id: u16, position: [usize; 2]| AgentSpec {
            id: AgentId(id),
            position,
            radius: 3.0,
            quality: 0.9,
            miss_floor: 0.05,
            modality: Modality::Lidar,
        };
        Scenario {
            height: 12,
            width: 12,
            channels: 4,
            horizon: 2,
            seed: 11,
            embeddings: 2,
            perturbation: PerturbationSpec::NONE,
            agents: vec![agent(0, [1, 1]), agent(1, [10, 10])],
            objects: vec![
                ObjectSpec {
                    position: [2.0, 2.0],
                    velocity: [0.0, 0.0],
                    embedding: 0,
                },
                ObjectSpec {
                    position: [9.0, 9.0],
                    velocity: [0.0, 0.0],
                    embedding: 1,
                },
            ],
        }
    }

    fn cfg(u: f64, b: Budget) -> RoundConfig {
        RoundConfig::new(Demand::new(u).unwrap(), b)
    }

    #[test]
    fn zero_budget_is_the_baseline() {
        let s = disjoint();
        let r = run_round(&s, 0, &cfg(1.0, Budget(0)), Transport::Raw).unwrap();
        assert_eq!(r.mean_recall, r.baseline_recall);
        assert_eq!(r.mean_precision, r.baseline_precision);
        assert_eq!(r.mean_recall, 0.5);
        assert_eq!(r.messages, 0);
        assert_eq!(r.bw_true_bytes, 0);
        assert_eq!(r.bw_log2_paper, 0.0);
        assert_eq!(r.bw_disclosure, 2 * 144 * 4);
    }

    #[test]
    fn fusion_recovers_the_missed_object() {
        let s = disjoint();
        let r = run_round(&s, 0, &cfg(1.0, Budget(2)), Transport::Raw).unwrap();
        assert_eq!(r.recall, vec![1.0, 1.0]);
        assert_eq!(r.selected_cells, 2);
        assert_eq!(r.late_recall, 1.0);
    }

    #[test]
    fn lossless_codes_match_raw() {
        let s = disjoint();
        let cb = lossless_codebook(&s, 0..s.horizon).unwrap();
        let c = cfg(2.0, Budget::UNLIMITED);
        let raw = run_round_detailed(&s, 0, &c, Transport::Raw).unwrap();
        let coded =
            run_round_detailed(&s, 0, &c, Transport::Codes { codebook: &cb, n_r: 1 }).unwrap();
        assert_eq!(raw.fused_features, coded.fused_features);
        assert_eq!(raw.report.recall, coded.report.recall);
    }

    #[test]
    fn bandwidth_reconciles_with_the_wire() {
        let s = disjoint();
        let cb = lossless_codebook(&s, [0]).unwrap();
        let d = run_round_detailed(
            &s,
            0,
            &cfg(1.0, Budget::UNLIMITED),
            Transport::Codes { codebook: &cb, n_r: 2 },
        )
        .unwrap();
        let mut bits = 0u64;
        let mut bytes = 0usize;
        for (_, _, m) in &d.messages {
            let msg = wire::unpack(m).unwrap();
            bits += msg.payload_bits();
            bytes += m.len();
        }
        assert_eq!(d.report.bw_paper_bytes * 8.0, bits as f64);
        assert_eq!(d.report.bw_true_bytes, bytes);
    }

    #[test]
    fn channel_mismatch() {
        let s = disjoint();
        let cb = Codebook::new(3, vec![0.0; 6]).unwrap();
        assert!(matches!(
            run_round(&s, 0, &cfg(1.0, Budget(1)), Transport::Codes { codebook: &cb, n_r: 1 }),
            Err(SimError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn empty_scene_conventions() {
        let mut s = disjoint();
        s.objects.clear();
        let r = run_round(&s, 0, &cfg(1.0, Budget(4)), Transport::Raw).unwrap();
        assert_eq!(r.mean_recall, 1.0);
        assert_eq!(r.mean_precision, 1.0);
    }
}
