//! Detection of twin beams: per-arm response kernels, the forward map from
//! photon numbers to coincidence histograms, and statistics of detected counts.

mod kernel;
mod multiport;

pub use kernel::{
    k_coeff_finite, k_coeff_finite_alternating, k_coeff_infinite, DetectionChain, KernelMatrix,
    PixelMode,
};
pub use multiport::{
    exact_multidetector_prob, symmetric_detectors, OutputDetector, MAX_DETECTORS, MAX_PHOTONS,
};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnd::{kahan_total, JointMoments, JointPnd, Marginal, MarginalKind};

/// Mass a forward-mapped histogram may lose to its click-count window.
pub const TRUNCATION_BUDGET: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Analytic,
    MonteCarlo,
    File,
}

/// Coincidence histogram `f(c_S, c_I)`.
///
/// Analytic histograms hold probabilities; empirical ones hold integer counts
/// together with the number of shots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoincidenceRepr", into = "CoincidenceRepr")]
pub struct CoincidenceDistribution {
    freqs: Array2<f64>,
    origin: Origin,
    shots: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct CoincidenceRepr {
    c_max_s: usize,
    c_max_i: usize,
    origin: Origin,
    shots: Option<u64>,
    freqs: Vec<f64>,
}

impl TryFrom<CoincidenceRepr> for CoincidenceDistribution {
    type Error = Error;

    fn try_from(r: CoincidenceRepr) -> Result<Self> {
        let shape = (r.c_max_s + 1, r.c_max_i + 1);
        if r.freqs.len() != shape.0 * shape.1 {
            return Err(Error::domain(format!(
                "expected {} frequencies for c_max = ({}, {}), got {}",
                shape.0 * shape.1,
                r.c_max_s,
                r.c_max_i,
                r.freqs.len()
            )));
        }
        let freqs =
            Array2::from_shape_vec(shape, r.freqs).map_err(|e| Error::domain(e.to_string()))?;
        match r.shots {
            Some(shots) => Self::from_counts(freqs, shots, r.origin),
            None => Self::from_probabilities(freqs, r.origin),
        }
    }
}

impl From<CoincidenceDistribution> for CoincidenceRepr {
    fn from(f: CoincidenceDistribution) -> Self {
        CoincidenceRepr {
            c_max_s: f.c_max_s(),
            c_max_i: f.c_max_i(),
            origin: f.origin,
            shots: f.shots,
            freqs: f.freqs.iter().copied().collect(),
        }
    }
}

impl CoincidenceDistribution {
    /// Histogram of probabilities; must sum to one within the truncation budget
    /// scale used by the forward map (1e-6 for external files).
    pub fn from_probabilities(freqs: Array2<f64>, origin: Origin) -> Result<Self> {
        check_table(&freqs)?;
        let mass = kahan_total(freqs.view());
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::Normalization {
                mass,
                expected: 1.0,
            });
        }
        Ok(Self {
            freqs,
            origin,
            shots: None,
        })
    }

    /// Histogram of integer event counts over `shots` pulses.
    pub fn from_counts(counts: Array2<f64>, shots: u64, origin: Origin) -> Result<Self> {
        check_table(&counts)?;
        if shots == 0 {
            return Err(Error::domain("shot count must be positive"));
        }
        if counts.iter().any(|c| c.fract() != 0.0) {
            return Err(Error::domain(
                "empirical histograms must hold integer counts",
            ));
        }
        let total = kahan_total(counts.view());
        if total != shots as f64 {
            return Err(Error::Normalization {
                mass: total,
                expected: shots as f64,
            });
        }
        Ok(Self {
            freqs: counts,
            origin,
            shots: Some(shots),
        })
    }

    pub fn c_max_s(&self) -> usize {
        self.freqs.nrows() - 1
    }

    pub fn c_max_i(&self) -> usize {
        self.freqs.ncols() - 1
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn shots(&self) -> Option<u64> {
        self.shots
    }

    /// Raw stored values (probabilities or counts).
    pub fn freqs(&self) -> ArrayView2<'_, f64> {
        self.freqs.view()
    }

    /// Stored probability mass (`1 - truncation` for analytic histograms).
    pub fn mass(&self) -> f64 {
        match self.shots {
            Some(_) => 1.0,
            None => kahan_total(self.freqs.view()),
        }
    }

    /// Frequencies as probabilities: counts divided by shots, analytic values as stored.
    pub fn probabilities(&self) -> Array2<f64> {
        match self.shots {
            Some(shots) => self.freqs.mapv(|c| c / shots as f64),
            None => self.freqs.clone(),
        }
    }

    /// Probabilities rescaled to sum to exactly one over the stored window.
    pub fn normalized(&self) -> Array2<f64> {
        let p = self.probabilities();
        let total = kahan_total(p.view());
        p.mapv(|v| v / total)
    }

    /// Zero-padded or cropped copy on a `(c_max_s, c_max_i)` window.
    pub fn resized(&self, c_max_s: usize, c_max_i: usize) -> Array2<f64> {
        let p = self.probabilities();
        Array2::from_shape_fn((c_max_s + 1, c_max_i + 1), |(a, b)| {
            p.get((a, b)).copied().unwrap_or(0.0)
        })
    }

    pub fn signal_marginal(&self) -> Marginal {
        let p = self.probabilities();
        let v = p.rows().into_iter().map(|r| r.sum()).collect();
        Marginal::new(MarginalKind::Signal, v).expect("histogram entries are validated nonnegative")
    }

    pub fn idler_marginal(&self) -> Marginal {
        let p = self.probabilities();
        let v = p.columns().into_iter().map(|c| c.sum()).collect();
        Marginal::new(MarginalKind::Idler, v).expect("histogram entries are validated nonnegative")
    }

    /// Distribution of `c_S + c_I`.
    pub fn sum_marginal(&self) -> Marginal {
        let p = self.probabilities();
        let mut v = vec![0.0; self.c_max_s() + self.c_max_i() + 1];
        for ((a, b), &q) in p.indexed_iter() {
            v[a + b] += q;
        }
        Marginal::new(MarginalKind::Sum, v).expect("histogram entries are validated nonnegative")
    }
}

fn check_table(t: &Array2<f64>) -> Result<()> {
    if t.is_empty() {
        return Err(Error::domain("histogram must have at least one bin"));
    }
    if let Some(bad) = t.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::domain(format!(
            "histogram entry {bad} is negative or non-finite"
        )));
    }
    Ok(())
}

/// `f(c_S, c_I) = sum p(n_S, n_I) K_S(c_S, n_S) K_I(c_I, n_I)`.
///
/// With `c_max = None` the window is chosen per arm so that each arm loses
/// less than half the truncation budget. Fails if the histogram misses more
/// than [`TRUNCATION_BUDGET`] of the source mass.
pub fn forward_map(
    p: &JointPnd,
    chain_s: &DetectionChain,
    chain_i: &DetectionChain,
    c_max: Option<(usize, usize)>,
) -> Result<CoincidenceDistribution> {
    let (c_max_s, c_max_i) = c_max.unwrap_or_else(|| default_window(p, chain_s, chain_i));
    let k_s = chain_s.kernel(c_max_s, p.n_max_s());
    let k_i = chain_i.kernel(c_max_i, p.n_max_i());
    let freqs = apply_kernels(p.probs(), &k_s, &k_i);
    let residual = p.mass() - kahan_total(freqs.view());
    if residual > TRUNCATION_BUDGET {
        return Err(Error::Truncation {
            residual,
            budget: TRUNCATION_BUDGET,
            c_max_s,
            c_max_i,
        });
    }
    Ok(CoincidenceDistribution {
        freqs: freqs.mapv(|v| v.max(0.0)),
        origin: Origin::Analytic,
        shots: None,
    })
}

/// Default click window for mapping `p` through the two chains.
pub fn default_window(
    p: &JointPnd,
    chain_s: &DetectionChain,
    chain_i: &DetectionChain,
) -> (usize, usize) {
    (
        chain_s.default_c_max(p.n_max_s(), TRUNCATION_BUDGET / 2.0),
        chain_i.default_c_max(p.n_max_i(), TRUNCATION_BUDGET / 2.0),
    )
}

/// `K_S P K_I^T`.
pub fn apply_kernels(
    p: ArrayView2<'_, f64>,
    k_s: &KernelMatrix,
    k_i: &KernelMatrix,
) -> Array2<f64> {
    k_s.matrix().dot(&p).dot(&k_i.matrix().t())
}

/// Covariance and statistics coefficients of a detected histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedStatistics {
    pub covariance: f64,
    pub s_signal: f64,
    pub s_idler: f64,
    pub s_sum: f64,
}

pub fn detected_statistics(f: &CoincidenceDistribution) -> Result<DetectedStatistics> {
    let p = f.probabilities();
    Ok(DetectedStatistics {
        covariance: JointMoments::of(p.view()).correlation()?,
        s_signal: f.signal_marginal().s_coefficient()?,
        s_idler: f.idler_marginal().s_coefficient()?,
        s_sum: f.sum_marginal().s_coefficient()?,
    })
}
