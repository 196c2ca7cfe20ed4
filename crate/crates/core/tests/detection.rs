use proptest::prelude::*;
use twinbeam::detection::{
    exact_multidetector_prob, k_coeff_finite, k_coeff_infinite, symmetric_detectors,
    TRUNCATION_BUDGET,
};
use twinbeam::pnd::{Marginal, MarginalKind, DEFAULT_TRUNCATION};
use twinbeam::{forward_map, DetectionChain, JointPnd};

const T_ETAS: [f64; 4] = [0.0, 0.03, 0.5, 1.0];
const NOISES: [f64; 3] = [0.0, 0.1, 1.0];
const DARK_PROBS: [f64; 3] = [0.0, 0.1, 0.5];
const PIXELS: [usize; 3] = [1, 2, 8];

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

#[test]
fn infinite_kernels_are_column_stochastic() {
    for &t_eta in &T_ETAS {
        for &noise in &NOISES {
            let k = DetectionChain::infinite(t_eta, noise)
                .unwrap()
                .kernel(140, 100);
            for (n, s) in k.column_sums().iter().enumerate() {
                assert!(
                    (s - 1.0).abs() < 1e-10,
                    "T eta {t_eta}, D {noise}, n {n}: {s}"
                );
            }
        }
    }
}

#[test]
fn finite_kernels_are_column_stochastic() {
    for &t_eta in &T_ETAS {
        for &dark in &DARK_PROBS {
            for &pixels in &PIXELS {
                let k = DetectionChain::finite(t_eta, pixels, dark)
                    .unwrap()
                    .kernel(pixels, 100);
                for (n, s) in k.column_sums().iter().enumerate() {
                    assert!(
                        (s - 1.0).abs() < 1e-10,
                        "T eta {t_eta}, d {dark}, N {pixels}, n {n}: {s}"
                    );
                }
            }
        }
    }
}

#[test]
fn many_pixels_approach_the_infinite_limit() {
    let pixels = 10_000;
    for &t_eta in &[0.0, 0.03, 0.5] {
        for &noise in &NOISES {
            for n in 0..=30 {
                for c in 0..=10 {
                    let finite =
                        k_coeff_finite(c, n, pixels, t_eta, noise / pixels as f64).unwrap();
                    let infinite = k_coeff_infinite(c, n, t_eta, noise).unwrap();
                    assert!(
                        (finite - infinite).abs() < 1e-3,
                        "c {c}, n {n}, T eta {t_eta}, D {noise}"
                    );
                }
            }
        }
    }
}

#[test]
fn limit_gap_shrinks_with_pixel_count() {
    let gap = |pixels: usize| {
        (0..=20)
            .map(|c| {
                (k_coeff_finite(c, 20, pixels, 0.5, 0.2 / pixels as f64).unwrap()
                    - k_coeff_infinite(c, 20, 0.5, 0.2).unwrap())
                .abs()
            })
            .fold(0.0, f64::max)
    };
    let gaps: Vec<f64> = [30, 100, 1_000, 10_000].into_iter().map(gap).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

proptest! {
    #[test]
    fn symmetric_multiport_matches_brute_force(
        pixels in 1usize..=4,
        n in 0usize..=6,
        transmission in 0.0f64..=1.0,
        efficiency in 0.0f64..=1.0,
        dark in 0.0f64..0.95,
    ) {
        let ports = symmetric_detectors(pixels, efficiency, dark);
        for c in 0..=pixels {
            let pattern: Vec<bool> = (0..pixels).map(|k| k < c).collect();
            let exact = exact_multidetector_prob(n, &pattern, &ports, transmission).unwrap();
            let fast = k_coeff_finite(c, n, pixels, transmission * efficiency, dark).unwrap();
            prop_assert!((binomial(pixels, c) * exact - fast).abs() < 1e-10);
        }
    }
}

#[test]
fn forward_map_preserves_mass_within_budget() {
    let sources = [
        JointPnd::poisson_pairs(20.0, DEFAULT_TRUNCATION).unwrap(),
        JointPnd::gaussian_pairs(5.0, DEFAULT_TRUNCATION).unwrap(),
        JointPnd::vacuum(),
    ];
    for p in &sources {
        for &t_eta in &T_ETAS {
            for &noise in &NOISES {
                let chain = DetectionChain::infinite(t_eta, noise).unwrap();
                let f = forward_map(p, &chain, &chain, None).unwrap();
                assert!((p.mass() - f.mass()).abs() <= TRUNCATION_BUDGET);
            }
            for &pixels in &PIXELS {
                let chain = DetectionChain::finite(t_eta, pixels, 0.1).unwrap();
                let f = forward_map(p, &chain, &chain, None).unwrap();
                assert!((p.mass() - f.mass()).abs() <= TRUNCATION_BUDGET);
            }
        }
    }
}

fn diagonal(weights: &[f64]) -> JointPnd {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut probs = vec![0.0; n * n];
    for (k, w) in weights.iter().enumerate() {
        probs[k * n + k] = w / total;
    }
    JointPnd::from_row_major(n - 1, n - 1, probs, 0.0).unwrap()
}

#[test]
fn detection_never_increases_correlation_of_diagonal_sources() {
    let sources = [
        JointPnd::poisson_pairs(1.0, DEFAULT_TRUNCATION).unwrap(),
        JointPnd::poisson_pairs(20.0, DEFAULT_TRUNCATION).unwrap(),
        JointPnd::gaussian_pairs(5.0, DEFAULT_TRUNCATION).unwrap(),
        diagonal(&[0.1, 0.0, 0.3, 0.05, 0.0, 0.55]),
    ];
    for p in &sources {
        let input = p.covariance().unwrap();
        for &t_eta in &T_ETAS[1..] {
            let mut chains = vec![];
            for &noise in &NOISES {
                chains.push(DetectionChain::infinite(t_eta, noise).unwrap());
            }
            for &pixels in &PIXELS {
                chains.push(DetectionChain::finite(t_eta, pixels, 0.1).unwrap());
            }
            for chain in &chains {
                let f = forward_map(p, chain, chain, None).unwrap();
                let detected = twinbeam::pnd::JointMoments::of(f.probabilities().view());
                if let Ok(c) = detected.correlation() {
                    assert!(c <= input + 1e-12, "{chain:?}: {c} > {input}");
                }
            }
        }
    }
}

#[test]
fn product_sources_stay_uncorrelated_after_detection() {
    let ms = Marginal::new(MarginalKind::Signal, vec![0.2, 0.5, 0.3]).unwrap();
    let mi = Marginal::new(MarginalKind::Idler, vec![0.6, 0.1, 0.1, 0.2]).unwrap();
    let p = JointPnd::product(&ms, &mi).unwrap();
    let chain = DetectionChain::finite(0.4, 3, 0.05).unwrap();
    let f = forward_map(
        &p,
        &chain,
        &DetectionChain::infinite(0.7, 0.2).unwrap(),
        None,
    )
    .unwrap();
    let c = twinbeam::pnd::JointMoments::of(f.probabilities().view()).cov;
    assert!(c.abs() < 1e-12);
}
