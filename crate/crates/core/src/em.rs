//! Expectation-Maximization inversion of the detection map.
//!
//! Recovers the joint photon-number distribution from a coincidence histogram
//! by the multiplicative update
//! `rho'(n) = rho(n) / s(n) * sum_i f(i) K(i, n) / sum_j K(i, j) rho(j)`,
//! which decreases the Kullback-Leibler divergence between the data and the
//! forward-mapped model at every step. `s(n)` is the kernel column sum over
//! the histogram window.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::detection::{CoincidenceDistribution, DetectionChain, KernelMatrix};
use crate::error::{Error, Result};
use crate::pnd::JointPnd;
use crate::special::CompensatedSum;

/// Model probabilities below this with data in the bin count as degenerate.
pub const DEGENERACY_FLOOR: f64 = 1e-300;

/// Upper bound applied to the heuristic support size.
pub const N_MAX_CAP: usize = 200;

/// KL values at or below this are treated as an exact fit.
const KL_EXACT: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub enum EmInit {
    Uniform,
    Custom(JointPnd),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Reconstruction support; `None` uses [`heuristic_n_max`].
    pub n_max_s: Option<usize>,
    pub n_max_i: Option<usize>,
    pub max_iterations: usize,
    /// Stop once the relative KL decrease of one step falls below this.
    pub stop_tolerance: f64,
    pub init: EmInit,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_max_s: None,
            n_max_i: None,
            max_iterations: 10_000,
            stop_tolerance: 1e-9,
            init: EmInit::Uniform,
        }
    }
}

/// `c_max / (T eta) + 5 sqrt(c_max) / (T eta)`, capped at [`N_MAX_CAP`].
pub fn heuristic_n_max(c_max: usize, t_eta: f64) -> usize {
    if t_eta <= 0.0 {
        return N_MAX_CAP;
    }
    let c = c_max as f64;
    let n = (c / t_eta + 5.0 * c.sqrt() / t_eta).ceil();
    if n.is_finite() {
        (n as usize).min(N_MAX_CAP)
    } else {
        N_MAX_CAP
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub rho: JointPnd,
    /// KL divergence after each iteration.
    pub kl_trace: Vec<f64>,
    #[serde(rename = "iterations")]
    pub iterations_run: usize,
    pub converged: bool,
}

/// `sum f log(f / f_model)` over two histograms on the same window, each
/// normalized first. Returns `+inf` when the model vanishes where data does not.
pub fn kl_divergence(
    f: &CoincidenceDistribution,
    f_model: &CoincidenceDistribution,
) -> Result<f64> {
    if f.c_max_s() != f_model.c_max_s() || f.c_max_i() != f_model.c_max_i() {
        return Err(Error::domain(format!(
            "histogram windows differ: ({}, {}) vs ({}, {})",
            f.c_max_s(),
            f.c_max_i(),
            f_model.c_max_s(),
            f_model.c_max_i()
        )));
    }
    Ok(kl_arrays(
        f.normalized().view(),
        f_model.normalized().view(),
    ))
}

fn kl_arrays(f: ArrayView2<'_, f64>, model: ArrayView2<'_, f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for (&p, &q) in f.iter().zip(model.iter()) {
        if p > 0.0 {
            if q <= 0.0 {
                return f64::INFINITY;
            }
            acc.add(p * (p / q).ln());
        }
    }
    acc.value().max(0.0)
}

/// One EM update of `rho` against the histogram `f`.
pub fn em_step(
    rho: &JointPnd,
    f: &CoincidenceDistribution,
    k_s: &KernelMatrix,
    k_i: &KernelMatrix,
) -> Result<JointPnd> {
    let step = Stepper::new(f, k_s, k_i, rho.n_max_s(), rho.n_max_i())?;
    let model = step.model(rho.probs());
    let next = step.update(rho.probs(), &model)?;
    JointPnd::normalized_from(next)
}

struct Stepper<'a> {
    f: Array2<f64>,
    k_s: &'a Array2<f64>,
    k_i: &'a Array2<f64>,
    sensitivity: Array2<f64>,
}

impl<'a> Stepper<'a> {
    fn new(
        f: &CoincidenceDistribution,
        k_s: &'a KernelMatrix,
        k_i: &'a KernelMatrix,
        n_max_s: usize,
        n_max_i: usize,
    ) -> Result<Self> {
        if k_s.c_max() != f.c_max_s() || k_i.c_max() != f.c_max_i() {
            return Err(Error::domain(
                "kernel click range does not match the histogram window",
            ));
        }
        if k_s.n_max() != n_max_s || k_i.n_max() != n_max_i {
            return Err(Error::domain(
                "kernel photon range does not match the reconstruction support",
            ));
        }
        let s_s = k_s.column_sums();
        let s_i = k_i.column_sums();
        let sensitivity =
            Array2::from_shape_fn((n_max_s + 1, n_max_i + 1), |(a, b)| s_s[a] * s_i[b]);
        Ok(Self {
            f: f.normalized(),
            k_s: k_s.matrix(),
            k_i: k_i.matrix(),
            sensitivity,
        })
    }

    fn model(&self, rho: ArrayView2<'_, f64>) -> Array2<f64> {
        self.k_s.dot(&rho).dot(&self.k_i.t())
    }

    fn update(&self, rho: ArrayView2<'_, f64>, model: &Array2<f64>) -> Result<Array2<f64>> {
        let mut ratio = Array2::zeros(model.raw_dim());
        for (((c_s, c_i), r), (&observed, &m)) in ratio
            .indexed_iter_mut()
            .zip(self.f.iter().zip(model.iter()))
        {
            if observed > 0.0 {
                if !(m >= DEGENERACY_FLOOR) {
                    return Err(Error::Degeneracy {
                        c_s,
                        c_i,
                        model: m,
                        observed,
                    });
                }
                *r = observed / m;
            }
        }
        let back = self.k_s.t().dot(&ratio).dot(self.k_i);
        let mut next = Array2::zeros(rho.raw_dim());
        Zip::from(&mut next)
            .and(&rho)
            .and(&back)
            .and(&self.sensitivity)
            .for_each(|out, &p, &b, &s| {
                let v = if s > 0.0 { p * b / s } else { 0.0 };
                // Subnormal cells carry no mass but slow every later product down.
                *out = if v < f64::MIN_POSITIVE { 0.0 } else { v };
            });
        Ok(next)
    }

    fn kl(&self, model: &Array2<f64>) -> f64 {
        let total: f64 = model.iter().copied().collect::<CompensatedSum>().value();
        let normalized = model.mapv(|m| m / total);
        kl_arrays(self.f.view(), normalized.view())
    }
}

/// Iterates [`em_step`] from the configured start until the KL divergence
/// stops decreasing by more than `stop_tolerance` (relative) or the iteration
/// budget runs out.
pub fn reconstruct(
    f: &CoincidenceDistribution,
    chain_s: &DetectionChain,
    chain_i: &DetectionChain,
    cfg: &EmConfig,
) -> Result<EmResult> {
    if !(cfg.stop_tolerance > 0.0) {
        return Err(Error::domain("stop tolerance must be positive"));
    }
    if cfg.max_iterations == 0 {
        return Err(Error::domain("at least one iteration is required"));
    }
    let mut rho = match &cfg.init {
        EmInit::Custom(p) => {
            if cfg.n_max_s.is_some_and(|n| n != p.n_max_s())
                || cfg.n_max_i.is_some_and(|n| n != p.n_max_i())
            {
                return Err(Error::domain(
                    "custom initial distribution does not match the configured support",
                ));
            }
            JointPnd::normalized_from(p.probs().to_owned())?.into_probs()
        }
        EmInit::Uniform => {
            let n_s = cfg
                .n_max_s
                .unwrap_or_else(|| heuristic_n_max(f.c_max_s(), chain_s.t_eta()));
            let n_i = cfg
                .n_max_i
                .unwrap_or_else(|| heuristic_n_max(f.c_max_i(), chain_i.t_eta()));
            JointPnd::uniform(n_s, n_i).into_probs()
        }
    };
    let k_s = chain_s.kernel(f.c_max_s(), rho.nrows() - 1);
    let k_i = chain_i.kernel(f.c_max_i(), rho.ncols() - 1);
    let step = Stepper::new(f, &k_s, &k_i, rho.nrows() - 1, rho.ncols() - 1)?;

    let mut model = step.model(rho.view());
    let mut previous = step.kl(&model);
    let mut kl_trace = Vec::new();
    let mut converged = false;
    while kl_trace.len() < cfg.max_iterations {
        let mut next = step.update(rho.view(), &model)?;
        let total: f64 = next.iter().copied().collect::<CompensatedSum>().value();
        if !(total > 0.0) {
            return Err(Error::Normalization {
                mass: total,
                expected: 1.0,
            });
        }
        next.mapv_inplace(|p| p / total);
        rho = next;
        model = step.model(rho.view());
        let kl = step.kl(&model);
        kl_trace.push(kl);
        if kl <= KL_EXACT || previous - kl <= cfg.stop_tolerance * previous {
            converged = true;
            break;
        }
        previous = kl;
    }
    log::debug!(
        "EM stopped after {} iterations (converged: {converged})",
        kl_trace.len()
    );
    Ok(EmResult {
        rho: JointPnd::new(rho, 0.0)?,
        iterations_run: kl_trace.len(),
        kl_trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{forward_map, Origin};
    use crate::pnd::{Marginal, MarginalKind, DEFAULT_TRUNCATION};

    fn hist(values: Vec<f64>, rows: usize, cols: usize) -> CoincidenceDistribution {
        CoincidenceDistribution::from_probabilities(
            Array2::from_shape_vec((rows, cols), values).unwrap(),
            Origin::File,
        )
        .unwrap()
    }

    #[test]
    fn kl_of_identical_histograms_is_zero() {
        let f = hist(vec![0.1, 0.2, 0.3, 0.4], 2, 2);
        assert_eq!(kl_divergence(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn kl_against_uniform_is_log_four() {
        let f = hist(vec![1.0, 0.0, 0.0, 0.0], 2, 2);
        let g = hist(vec![0.25; 4], 2, 2);
        assert!((kl_divergence(&f, &g).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_saturates_and_checks_shape() {
        let f = hist(vec![0.5, 0.5, 0.0, 0.0], 2, 2);
        let g = hist(vec![1.0, 0.0, 0.0, 0.0], 2, 2);
        assert_eq!(kl_divergence(&f, &g).unwrap(), f64::INFINITY);
        let h = hist(vec![0.5, 0.5], 1, 2);
        assert!(matches!(kl_divergence(&f, &h), Err(Error::Domain(_))));
    }

    #[test]
    fn kl_matches_direct_sum_on_random_histograms() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.random::<f64>() + 0.01).collect();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            let expected: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x / sa) * ((x / sa) / (y / sb)).ln())
                .sum();
            let fa = hist(a.iter().map(|x| x / sa).collect(), 3, 4);
            let fb = hist(b.iter().map(|x| x / sb).collect(), 3, 4);
            assert!((kl_divergence(&fa, &fb).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_channel_recovers_histogram_in_one_step() {
        let chain = DetectionChain::infinite(1.0, 0.0).unwrap();
        let f = hist(vec![0.1, 0.2, 0.3, 0.15, 0.05, 0.2], 2, 3);
        let cfg = EmConfig::default();
        let r = reconstruct(&f, &chain, &chain, &cfg).unwrap();
        assert_eq!(r.iterations_run, 1);
        assert!(r.converged);
        assert_eq!(r.kl_trace.len(), 1);
        assert!(r.kl_trace[0].abs() < 1e-15);
        for a in 0..=r.rho.n_max_s() {
            for b in 0..=r.rho.n_max_i() {
                let expected = f.freqs().get((a, b)).copied().unwrap_or(0.0);
                assert!((r.rho.get(a, b) - expected).abs() < 1e-15);
            }
        }
        let k_s = chain.kernel(1, 1);
        let k_i = chain.kernel(2, 2);
        let one = em_step(&JointPnd::uniform(1, 2), &f, &k_s, &k_i).unwrap();
        for ((a, b), &v) in one.probs().indexed_iter() {
            assert!((v - f.freqs()[[a, b]]).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_mapped_data_is_a_fixed_point() {
        let rho = JointPnd::poisson_pairs(3.0, DEFAULT_TRUNCATION).unwrap();
        let chain = DetectionChain::infinite(0.3, 0.05).unwrap();
        let f = forward_map(&rho, &chain, &chain, None).unwrap();
        let k_s = chain.kernel(f.c_max_s(), rho.n_max_s());
        let k_i = chain.kernel(f.c_max_i(), rho.n_max_i());
        let next = em_step(&rho, &f, &k_s, &k_i).unwrap();
        for (a, b) in next.probs().iter().zip(rho.probs().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let cfg = EmConfig {
            init: EmInit::Custom(rho.clone()),
            ..EmConfig::default()
        };
        let r = reconstruct(&f, &chain, &chain, &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations_run, 1);
        for (a, b) in r.rho.probs().iter().zip(rho.probs().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_step_decreases_kl() {
        let truth = JointPnd::poisson_pairs(5.0, DEFAULT_TRUNCATION).unwrap();
        let chain = DetectionChain::infinite(0.3, 0.05).unwrap();
        let f = forward_map(&truth, &chain, &chain, None).unwrap();
        let n = heuristic_n_max(f.c_max_s(), 0.3);
        let k = chain.kernel(f.c_max_s(), n);
        let start = JointPnd::uniform(n, n);
        let next = em_step(&start, &f, &k, &k).unwrap();
        let before = kl_arrays(
            f.normalized().view(),
            normalize(model_raw(&start, &k)).view(),
        );
        let after = kl_arrays(
            f.normalized().view(),
            normalize(model_raw(&next, &k)).view(),
        );
        assert!(after < before, "{after} >= {before}");
    }

    fn model_raw(p: &JointPnd, k: &KernelMatrix) -> Array2<f64> {
        crate::detection::apply_kernels(p.probs(), k, k)
    }

    fn normalize(a: Array2<f64>) -> Array2<f64> {
        let t = a.sum();
        a.mapv(|v| v / t)
    }

    #[test]
    fn kl_trace_is_monotone_and_iterates_stay_normalized() {
        let truth = JointPnd::gaussian_pairs(2.0, DEFAULT_TRUNCATION).unwrap();
        let chain = DetectionChain::finite(0.4, 6, 0.01).unwrap();
        let f = forward_map(&truth, &chain, &chain, None).unwrap();
        let cfg = EmConfig {
            n_max_s: Some(30),
            n_max_i: Some(30),
            max_iterations: 300,
            ..EmConfig::default()
        };
        let r = reconstruct(&f, &chain, &chain, &cfg).unwrap();
        for w in r.kl_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!((r.rho.mass() - 1.0).abs() < 1e-12);
        assert!(r.rho.probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn degenerate_bin_is_reported() {
        // Ideal detector, but data in a bin beyond the photon support.
        let chain = DetectionChain::infinite(1.0, 0.0).unwrap();
        let f = hist(vec![0.5, 0.0, 0.0, 0.5], 2, 2);
        let cfg = EmConfig {
            n_max_s: Some(0),
            n_max_i: Some(0),
            ..EmConfig::default()
        };
        match reconstruct(&f, &chain, &chain, &cfg) {
            Err(Error::Degeneracy { c_s, c_i, .. }) => assert_eq!((c_s, c_i), (1, 1)),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn independent_data_stays_uncorrelated() {
        let m = Marginal::new(MarginalKind::Signal, vec![0.3, 0.4, 0.2, 0.1]).unwrap();
        let mi = Marginal::new(MarginalKind::Idler, vec![0.5, 0.3, 0.2]).unwrap();
        let truth = JointPnd::product(&m, &mi).unwrap();
        let chain = DetectionChain::infinite(0.5, 0.1).unwrap();
        let f = forward_map(&truth, &chain, &chain, None).unwrap();
        let cfg = EmConfig {
            n_max_s: Some(15),
            n_max_i: Some(15),
            max_iterations: 500,
            ..EmConfig::default()
        };
        let r = reconstruct(&f, &chain, &chain, &cfg).unwrap();
        assert!(r.rho.covariance().unwrap().abs() < 0.05);
    }

    #[test]
    fn heuristic_support() {
        assert_eq!(heuristic_n_max(4, 1.0), 14);
        assert_eq!(heuristic_n_max(12, 0.03), N_MAX_CAP);
        assert_eq!(heuristic_n_max(0, 0.5), 0);
    }

    #[test]
    fn result_json_embeds_distribution() {
        let chain = DetectionChain::infinite(1.0, 0.0).unwrap();
        let f = hist(vec![0.25; 4], 2, 2);
        let r = reconstruct(&f, &chain, &chain, &EmConfig::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["rho"]["probs"].is_array());
        assert_eq!(v["iterations"], 1);
        assert_eq!(v["converged"], true);
        let back: EmResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
