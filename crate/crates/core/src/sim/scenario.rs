use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, PerturbationSpec, SimError};
use crate::grid::{AgentId, FeatureMap, GridDims, ScoreMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Lidar,
    Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// `[row, col]` at frame 0, in cells.
    pub position: [f64; 2],
    /// Cells per frame.
    pub velocity: [f64; 2],
    pub embedding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    /// `[row, col]` cell.
    pub position: [usize; 2],
    /// Visibility radius in cells.
    pub radius: f64,
    /// Score reported for a visible object, in (0, 1].
    pub quality: f64,
    /// Score reported for an object outside the radius, in [0, quality).
    pub miss_floor: f64,
    #[serde(default)]
    pub modality: Modality,
}

/// A concrete synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Size of the embedding table objects draw from.
    pub embeddings: usize,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

/// Parameters for [`generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub horizon: usize,
    /// Number of agents.
    pub agents: usize,
    /// Number of objects.
    pub objects: usize,
    pub embeddings: usize,
    /// Largest object speed, cells per frame.
    pub max_speed: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub quality_min: f64,
    pub quality_max: f64,
    pub miss_floor_max: f64,
    pub perturbation: PerturbationSpec,
}

impl Default for ScenarioConfig {
    /// The demo scene used by the README and the trade-off checks.
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 16,
            horizon: 8,
            agents: 6,
            objects: 40,
            embeddings: 16,
            max_speed: 1.5,
            radius_min: 10.0,
            radius_max: 18.0,
            quality_min: 0.6,
            quality_max: 1.0,
            miss_floor_max: 0.1,
            perturbation: PerturbationSpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<GridDims, SimError> {
        let dims = GridDims::new(self.height, self.width, self.channels)?;
        if self.horizon == 0 {
            return Err(SimError::Config("horizon must be at least 1".into()));
        }
        if self.agents == 0 || self.agents > u16::MAX as usize + 1 {
            return Err(SimError::Config(format!(
                "agent count must be in 1..=65536, got {}",
                self.agents
            )));
        }
        if self.embeddings == 0 {
            return Err(SimError::Config("embeddings must be at least 1".into()));
        }
        let finite_range = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(finite_range(0.0, self.max_speed)) {
            return Err(SimError::Config("max_speed must be finite and >= 0".into()));
        }
        if !(finite_range(self.radius_min, self.radius_max) && self.radius_min >= 0.0) {
            return Err(SimError::Config("need 0 <= radius_min <= radius_max".into()));
        }
        if !(finite_range(self.quality_min, self.quality_max)
            && self.quality_min > 0.0
            && self.quality_max <= 1.0)
        {
            return Err(SimError::Config(
                "need 0 < quality_min <= quality_max <= 1".into(),
            ));
        }
        if !(self.miss_floor_max >= 0.0 && self.miss_floor_max < self.quality_min) {
            return Err(SimError::Config(
                "need 0 <= miss_floor_max < quality_min".into(),
            ));
        }
        self.perturbation.validate()?;
        Ok(dims)
    }
}

/// Deterministic scene from a config and a seed.
pub fn generate(config: &ScenarioConfig, seed: u64) -> Result<Scenario, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5ce7]));
    let (h, w) = (config.height as f64, config.width as f64);

    let agents = (0..config.agents)
        .map(|i| {
            let position = [
                rng.random_range(0..config.height),
                rng.random_range(0..config.width),
            ];
            let radius = uniform(&mut rng, config.radius_min, config.radius_max);
            let quality = uniform(&mut rng, config.quality_min, config.quality_max);
            let miss_floor = uniform(&mut rng, 0.0, config.miss_floor_max);
            let modality = if rng.random::<bool>() {
                Modality::Lidar
            } else {
                Modality::Camera
            };
            AgentSpec {
                id: AgentId(i as u16),
                position,
                radius,
                quality,
                miss_floor,
                modality,
            }
        })
        .collect();

    let objects = (0..config.objects)
        .map(|_| {
            let position = [rng.random::<f64>() * (h - 1.0), rng.random::<f64>() * (w - 1.0)];
            let speed = rng.random::<f64>() * config.max_speed;
            let heading = rng.random::<f64>() * std::f64::consts::TAU;
            ObjectSpec {
                position,
                velocity: [speed * heading.sin(), speed * heading.cos()],
                embedding: rng.random_range(0..config.embeddings),
            }
        })
        .collect();

    let scenario = Scenario {
        height: config.height,
        width: config.width,
        channels: config.channels,
        horizon: config.horizon,
        seed,
        embeddings: config.embeddings,
        perturbation: config.perturbation,
        agents,
        objects,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Fixed non-negative unit-norm vector per embedding index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    channels: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// Each vector is a one-hot on channel `k % C` plus dense noise in
    /// `[0, 0.05)`, normalized.
    pub fn new(count: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xe3b]));
        let vectors = (0..count)
            .map(|k| {
                let mut v: Vec<f64> = (0..channels).map(|_| rng.random::<f64>() * 0.05).collect();
                v[k % channels] += 1.0;
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        Self { channels, vectors }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, index: usize) -> &[f64] {
        &self.vectors[index]
    }
}

/// What one agent perceives at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView {
    pub scores: ScoreMap,
    pub features: FeatureMap,
}

impl Scenario {
    pub fn dims(&self) -> GridDims {
        GridDims::new(self.height, self.width, self.channels).expect("validated scenario")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let dims = GridDims::new(self.height, self.width, self.channels)?;
        if self.horizon == 0 {
            return Err(SimError::Config("horizon must be at least 1".into()));
        }
        if self.agents.is_empty() {
            return Err(SimError::Config("a scenario needs at least one agent".into()));
        }
        if self.agents.len() > u16::MAX as usize + 1 {
            return Err(SimError::Config("too many agents".into()));
        }
        if self.embeddings == 0 {
            return Err(SimError::Config("embeddings must be at least 1".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.id.index() != i {
                return Err(SimError::Config(format!(
                    "agent at position {i} has id {}, ids must be 0..N in order",
                    a.id.0
                )));
            }
            if !dims.contains(a.position[0], a.position[1]) {
                return Err(SimError::Config(format!("agent {i} is outside the grid")));
            }
            if !(a.radius.is_finite() && a.radius >= 0.0) {
                return Err(SimError::Config(format!("agent {i} has an invalid radius")));
            }
            if !(a.quality > 0.0 && a.quality <= 1.0) {
                return Err(SimError::Config(format!("agent {i}: quality must be in (0, 1]")));
            }
            if !(a.miss_floor >= 0.0 && a.miss_floor < a.quality) {
                return Err(SimError::Config(format!(
                    "agent {i}: miss floor must be in [0, quality)"
                )));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.position.iter().chain(&o.velocity).all(|v| v.is_finite()) {
                return Err(SimError::Config(format!("object {i} has a non-finite state")));
            }
            if o.embedding >= self.embeddings {
                return Err(SimError::Config(format!(
                    "object {i} uses embedding {} of {}",
                    o.embedding, self.embeddings
                )));
            }
        }
        self.perturbation.validate()?;
        Ok(())
    }

    /// The scene as a TOML document readable by [`super::ScenarioDoc::from_toml`].
    pub fn to_toml(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(self.embeddings, self.channels, self.seed)
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Cell of an object at `frame`; motion is clamped to the grid.
    pub fn object_cell(&self, object: &ObjectSpec, frame: usize) -> (usize, usize) {
        let t = frame as f64;
        let r = (object.position[0] + object.velocity[0] * t).clamp(0.0, (self.height - 1) as f64);
        let c = (object.position[1] + object.velocity[1] * t).clamp(0.0, (self.width - 1) as f64);
        (r.round() as usize, c.round() as usize)
    }

    /// Distinct cells holding at least one object, row-major.
    pub fn object_cells(&self, frame: usize) -> Vec<(usize, usize)> {
        let mut cells: Vec<_> = self
            .objects
            .iter()
            .map(|o| self.object_cell(o, frame))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    fn check_frame(&self, frame: usize) -> Result<(), SimError> {
        if frame < self.horizon {
            Ok(())
        } else {
            Err(SimError::FrameOutOfRange {
                frame,
                horizon: self.horizon,
            })
        }
    }

    /// Synthetic detector output for one agent.
    ///
    /// An object within the agent's radius scores `quality` at its cell and
    /// writes its embedding scaled by `quality` plus noise in `[0, 0.01]`;
    /// an object outside it scores `miss_floor` and writes no feature. Several
    /// objects in one cell combine by maximum. Feature values are rounded to
    /// `f32`, the precision they would travel at.
    pub fn render_agent_view(
        &self,
        table: &EmbeddingTable,
        agent: AgentId,
        frame: usize,
    ) -> Result<AgentView, SimError> {
        self.check_frame(frame)?;
        let spec = self
            .agents
            .get(agent.index())
            .ok_or(SimError::UnknownAgent(agent))?;
        let dims = self.dims();
        let mut scores = vec![0.0; dims.cells()];
        let mut features = vec![0.0; dims.cells() * dims.channels()];

        for o in &self.objects {
            let (r, c) = self.object_cell(o, frame);
            let dr = r as f64 - spec.position[0] as f64;
            let dc = c as f64 - spec.position[1] as f64;
            let visible = (dr * dr + dc * dc).sqrt() <= spec.radius;
            let cell = dims.index(r, c);
            let score = if visible { spec.quality } else { spec.miss_floor };
            scores[cell] = f64::max(scores[cell], score);
            if visible {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    self.seed,
                    agent.0 as u64,
                    frame as u64,
                    cell as u64,
                ]));
                let emb = table.get(o.embedding);
                let slot = &mut features[cell * dims.channels()..(cell + 1) * dims.channels()];
                for (f, &e) in slot.iter_mut().zip(emb) {
                    let v = ((spec.quality * e + rng.random::<f64>() * 0.01) as f32) as f64;
                    *f = f64::max(*f, v);
                }
            }
        }
        Ok(AgentView {
            scores: ScoreMap::new(GridDims::spatial(dims.height(), dims.width())?, scores)?,
            features: FeatureMap::new(dims, features)?,
        })
    }
}
