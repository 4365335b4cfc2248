//! Reconstruction-only codebook training.
//!
//! The training objective sums, over every code quantity `n = 1..=n_R` and
//! every dataset vector, the squared error of that vector's `n`-code
//! assignment. Each epoch re-encodes greedily (keeping a vector's previous
//! assignment when the greedy one is worse) and then solves each code's
//! least-squares update in turn with the others fixed. Both steps can only
//! lower the objective, so the per-epoch totals are non-increasing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Codebook, CodebookError, QuantizerConfig};

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub codebook: Codebook,
    /// Total training error after each epoch.
    pub epoch_errors: Vec<f64>,
}

pub fn train(dataset: &[Vec<f64>], config: &QuantizerConfig) -> Result<Codebook, CodebookError> {
    train_with_report(dataset, config).map(|r| r.codebook)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Codes {
    channels: usize,
    values: Vec<f64>,
}

impl Codes {
    fn len(&self) -> usize {
        self.values.len() / self.channels
    }

    fn get(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    fn set(&mut self, k: usize, v: &[f64]) {
        self.values[k * self.channels..(k + 1) * self.channels].copy_from_slice(v);
    }

    fn greedy(&self, v: &[f64], n: usize) -> Vec<u32> {
        let mut residual = v.to_vec();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut best = (0usize, f64::INFINITY);
            for k in 0..self.len() {
                let d = sq_dist(&residual, self.get(k));
                if d < best.1 {
                    best = (k, d);
                }
            }
            for (r, c) in residual.iter_mut().zip(self.get(best.0)) {
                *r -= c;
            }
            out.push(best.0 as u32);
        }
        out
    }

    fn sum(&self, indices: &[u32]) -> Vec<f64> {
        let mut s = vec![0.0; self.channels];
        for &k in indices {
            for (o, c) in s.iter_mut().zip(self.get(k as usize)) {
                *o += c;
            }
        }
        s
    }
}

fn validate_dataset(dataset: &[Vec<f64>]) -> Result<usize, CodebookError> {
    let channels = dataset.first().ok_or(CodebookError::EmptyDataset)?.len();
    if channels == 0 {
        return Err(CodebookError::ZeroChannels);
    }
    for v in dataset {
        if v.len() != channels {
            return Err(CodebookError::DimensionMismatch {
                expected: channels,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CodebookError::InvalidConfig(
                "dataset contains a non-finite value".into(),
            ));
        }
    }
    Ok(channels)
}

/// k-means++ seeding. Once every dataset point is already covered (all
/// distances zero) the remaining codes take unused points in order, and
/// duplicates once those run out.
fn seed_codes(dataset: &[Vec<f64>], n_l: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = dataset.len();
    let mut chosen = Vec::with_capacity(n_l);
    let mut used = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    used[first] = true;
    let mut dist: Vec<f64> = dataset
        .iter()
        .map(|v| sq_dist(v, &dataset[first]))
        .collect();
    let mut fallback = 0usize;

    while chosen.len() < n_l {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target at the very top of the range
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            let start = fallback;
            let mut i = start % n;
            for step in 0..n {
                let cand = (start + step) % n;
                if !used[cand] {
                    i = cand;
                    break;
                }
            }
            fallback = i + 1;
            i
        };
        chosen.push(pick);
        used[pick] = true;
        for (d, v) in dist.iter_mut().zip(dataset) {
            *d = d.min(sq_dist(v, &dataset[pick]));
        }
    }
    chosen
}

struct State {
    /// `assign[n - 1][v]`: the n-code assignment of vector `v`.
    assign: Vec<Vec<Vec<u32>>>,
}

fn vector_error(codes: &Codes, v: &[f64], idx: &[u32]) -> f64 {
    sq_dist(v, &codes.sum(idx))
}

fn total_error(codes: &Codes, dataset: &[Vec<f64>], state: &State) -> f64 {
    state
        .assign
        .iter()
        .map(|level| {
            level
                .iter()
                .zip(dataset)
                .map(|(idx, v)| vector_error(codes, v, idx))
                .sum::<f64>()
        })
        .sum()
}

fn assign_step(codes: &Codes, dataset: &[Vec<f64>], state: &mut State) {
    for (level, current) in state.assign.iter_mut().enumerate() {
        let n = level + 1;
        let fresh: Vec<Vec<u32>> = dataset
            .par_iter()
            .zip(current.par_iter())
            .map(|(v, old)| {
                let new = codes.greedy(v, n);
                if old.is_empty() || vector_error(codes, v, &new) < vector_error(codes, v, old) {
                    new
                } else {
                    old.clone()
                }
            })
            .collect();
        *current = fresh;
    }
}

fn update_step(codes: &mut Codes, dataset: &[Vec<f64>], state: &State) {
    let c = codes.channels;
    let n_l = codes.len();
    // (level, vector, multiplicity) for every code
    let mut occurrences: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n_l];
    for (level, assigns) in state.assign.iter().enumerate() {
        for (v, idx) in assigns.iter().enumerate() {
            let mut seen: Vec<u32> = Vec::with_capacity(idx.len());
            for &k in idx {
                if !seen.contains(&k) {
                    seen.push(k);
                    let m = idx.iter().filter(|&&x| x == k).count() as f64;
                    occurrences[k as usize].push((level, v, m));
                }
            }
        }
    }
    let mut sums: Vec<Vec<Vec<f64>>> = state
        .assign
        .iter()
        .map(|level| level.iter().map(|idx| codes.sum(idx)).collect())
        .collect();

    let mut reseeded: Vec<usize> = Vec::new();
    for k in 0..n_l {
        if occurrences[k].is_empty() {
            // dead code: move it onto the worst-reconstructed single-code vector
            let worst = dataset
                .iter()
                .enumerate()
                .filter(|(v, _)| !reseeded.contains(v))
                .map(|(v, x)| (v, sq_dist(x, &sums[0][v])))
                .fold(None::<(usize, f64)>, |best, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            if let Some((v, _)) = worst {
                reseeded.push(v);
                codes.set(k, &dataset[v]);
            }
            continue;
        }
        let old = codes.get(k).to_vec();
        let mut num = vec![0.0; c];
        let mut den = 0.0;
        for &(level, v, m) in &occurrences[k] {
            let s = &sums[level][v];
            for ch in 0..c {
                num[ch] += m * (dataset[v][ch] - s[ch] + m * old[ch]);
            }
            den += m * m;
        }
        let new: Vec<f64> = num.iter().map(|x| x / den).collect();
        for &(level, v, m) in &occurrences[k] {
            for ch in 0..c {
                sums[level][v][ch] += m * (new[ch] - old[ch]);
            }
        }
        codes.set(k, &new);
    }
}

pub fn train_with_report(
    dataset: &[Vec<f64>],
    config: &QuantizerConfig,
) -> Result<TrainReport, CodebookError> {
    config.validate()?;
    let channels = validate_dataset(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let picks = seed_codes(dataset, config.n_l, &mut rng);
    let mut codes = Codes {
        channels,
        values: picks
            .iter()
            .flat_map(|&i| dataset[i].iter().copied())
            .collect(),
    };
    let mut state = State {
        assign: vec![vec![Vec::new(); dataset.len()]; config.n_r],
    };

    let mut epoch_errors = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        assign_step(&codes, dataset, &mut state);
        update_step(&mut codes, dataset, &state);
        let err = total_error(&codes, dataset, &state);
        let improvement = epoch_errors.last().map(|&prev: &f64| prev - err);
        epoch_errors.push(err);
        if let Some(d) = improvement {
            if d < config.tolerance || d == 0.0 {
                break;
            }
        }
    }

    let codebook = Codebook::new(
        channels,
        codes.values.iter().map(|&v| v as f32).collect(),
    )?;
    Ok(TrainReport {
        codebook,
        epoch_errors,
    })
}
