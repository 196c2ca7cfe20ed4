//! Monte Carlo simulation of the detection apparatus, one pulse at a time.
//!
//! Every shot draws from its own ChaCha stream keyed by `(seed, shot_index)`,
//! so histograms do not depend on how shots are split across threads.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;

use crate::detection::{CoincidenceDistribution, DetectionChain, Origin, PixelMode};
use crate::error::{Error, Result};
use crate::pnd::{JointPnd, DEFAULT_TRUNCATION};

/// Where photon pairs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Distribution(JointPnd),
    PoissonPairs { mu: f64 },
    GaussianPairs { mu: f64 },
}

impl Source {
    pub fn to_distribution(&self) -> Result<JointPnd> {
        match self {
            Source::Distribution(p) => Ok(p.clone()),
            Source::PoissonPairs { mu } => JointPnd::poisson_pairs(*mu, DEFAULT_TRUNCATION),
            Source::GaussianPairs { mu } => JointPnd::gaussian_pairs(*mu, DEFAULT_TRUNCATION),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub source: Source,
    pub chain_s: DetectionChain,
    pub chain_i: DetectionChain,
    pub shots: u64,
    pub seed: u64,
}

/// Counts registered in one shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotOutcome {
    pub c_s: usize,
    pub c_i: usize,
    /// The photon-number draw fell into the truncated tail of the source.
    pub from_tail: bool,
}

/// Prepared sampler: the source CDF plus both arm models.
#[derive(Debug, Clone)]
pub struct Sampler {
    cdf: Vec<f64>,
    n_cols: usize,
    chain_s: DetectionChain,
    chain_i: DetectionChain,
    key: [u8; 32],
    shots: u64,
}

impl Sampler {
    pub fn new(cfg: &SimulationConfig) -> Result<Self> {
        if cfg.shots == 0 {
            return Err(Error::domain("number of shots must be at least 1"));
        }
        let p = cfg.source.to_distribution()?;
        let mut acc = 0.0;
        let cdf = p
            .probs()
            .iter()
            .map(|&q| {
                acc += q;
                acc
            })
            .collect();
        // Seed expansion happens once; per-shot streams differ only by stream id.
        let mut key = [0u8; 32];
        ChaCha8Rng::seed_from_u64(cfg.seed).fill(&mut key);
        Ok(Self {
            cdf,
            n_cols: p.n_max_i() + 1,
            chain_s: cfg.chain_s,
            chain_i: cfg.chain_i,
            key,
            shots: cfg.shots,
        })
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    fn stream(&self, shot_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(shot_index);
        rng
    }

    pub fn shot(&self, shot_index: u64) -> Result<ShotOutcome> {
        if shot_index >= self.shots {
            return Err(Error::domain(format!(
                "shot index {shot_index} out of range (shots = {})",
                self.shots
            )));
        }
        Ok(self.draw(shot_index))
    }

    fn draw(&self, shot_index: u64) -> ShotOutcome {
        let mut rng = self.stream(shot_index);
        let u: f64 = rng.random();
        let mut cell = self.cdf.partition_point(|&c| c <= u);
        // Truncated tail mass goes to the largest index pair.
        let from_tail = cell >= self.cdf.len();
        if from_tail {
            cell = self.cdf.len() - 1;
        }
        let (n_s, n_i) = (cell / self.n_cols, cell % self.n_cols);
        let c_s = arm_clicks(&self.chain_s, n_s, &mut rng);
        let c_i = arm_clicks(&self.chain_i, n_i, &mut rng);
        ShotOutcome {
            c_s,
            c_i,
            from_tail,
        }
    }
}

/// Clicks in one arm given `n` photons at the source plane.
fn arm_clicks(chain: &DetectionChain, n: usize, rng: &mut ChaCha8Rng) -> usize {
    let t_eta = chain.t_eta();
    match chain.pixels() {
        PixelMode::Infinite { noise_mean } => {
            // No two photons share a pixel in this limit.
            let detected = (0..n).filter(|_| rng.random::<f64>() < t_eta).count();
            let dark = if noise_mean > 0.0 {
                Poisson::new(noise_mean)
                    .expect("validated noise mean")
                    .sample(rng) as usize
            } else {
                0
            };
            detected + dark
        }
        PixelMode::Finite {
            detectors,
            dark_prob,
        } => {
            let mut hit: Vec<usize> = Vec::new();
            for _ in 0..n {
                if rng.random::<f64>() < t_eta {
                    let d = rng.random_range(0..detectors);
                    if !hit.contains(&d) {
                        hit.push(d);
                    }
                }
            }
            let idle = (detectors - hit.len()) as u64;
            let dark = if dark_prob > 0.0 && idle > 0 {
                Binomial::new(idle, dark_prob)
                    .expect("validated dark probability")
                    .sample(rng) as usize
            } else {
                0
            };
            hit.len() + dark
        }
    }
}

/// Counts `(c_S, c_I)` for one shot, identical to what [`simulate`] tallies.
pub fn per_shot_counts(cfg: &SimulationConfig, shot_index: u64) -> Result<(usize, usize)> {
    let s = Sampler::new(cfg)?.shot(shot_index)?;
    Ok((s.c_s, s.c_i))
}

const CHUNK: u64 = 1 << 14;

/// Histogram of `cfg.shots` simulated pulses, sized to the largest observed counts.
pub fn simulate(cfg: &SimulationConfig) -> Result<CoincidenceDistribution> {
    let sampler = Sampler::new(cfg)?;
    let tail_hits = AtomicU64::new(0);
    let chunks = cfg.shots.div_ceil(CHUNK);
    let merged = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut local: HashMap<(usize, usize), u64> = HashMap::new();
            let end = ((chunk + 1) * CHUNK).min(cfg.shots);
            for idx in chunk * CHUNK..end {
                let s = sampler.draw(idx);
                if s.from_tail {
                    tail_hits.fetch_add(1, Ordering::Relaxed);
                }
                *local.entry((s.c_s, s.c_i)).or_default() += 1;
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let tail_hits = tail_hits.into_inner();
    if tail_hits > 0 {
        log::warn!("{tail_hits} shots drew from the truncated tail of the source distribution");
    }
    let c_max_s = merged.keys().map(|k| k.0).max().unwrap_or(0);
    let c_max_i = merged.keys().map(|k| k.1).max().unwrap_or(0);
    let mut counts = Array2::zeros((c_max_s + 1, c_max_i + 1));
    for ((a, b), v) in merged {
        counts[[a, b]] = v as f64;
    }
    CoincidenceDistribution::from_counts(counts, cfg.shots, Origin::MonteCarlo)
}
