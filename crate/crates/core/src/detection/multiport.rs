//! Brute-force probability that a given subset of detectors behind a general
//! multiport clicks while the rest stay silent. Used as an oracle for the
//! symmetric-multiport coefficients.

use crate::error::{Error, Result};
use crate::special::ln_fact;

/// One multiport output followed by a detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputDetector {
    /// Intensity transmission `|t_i|^2` from the multiport input to this output.
    pub coupling: f64,
    pub efficiency: f64,
    pub dark_prob: f64,
}

pub const MAX_PHOTONS: usize = 20;
pub const MAX_DETECTORS: usize = 8;

/// Probability that exactly the detectors flagged in `clicked` register a
/// photon, given `n` photons before a loss beamsplitter of transmissivity `t`.
///
/// Enumerates every distribution of the `n` photons over {lost, output 1, ...,
/// output N} with its multinomial weight, and for each one the product of the
/// per-detector click / no-click probabilities
/// `1 - (1 - d)(1 - eta)^k` / `(1 - d)(1 - eta)^k`.
pub fn exact_multidetector_prob(
    n: usize,
    clicked: &[bool],
    detectors: &[OutputDetector],
    t: f64,
) -> Result<f64> {
    if n > MAX_PHOTONS || detectors.len() > MAX_DETECTORS {
        return Err(Error::domain(format!(
            "enumeration limited to n <= {MAX_PHOTONS} photons and {MAX_DETECTORS} detectors (got {n}, {})",
            detectors.len()
        )));
    }
    if detectors.is_empty() || clicked.len() != detectors.len() {
        return Err(Error::domain(
            "click pattern must have one flag per detector",
        ));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!(
            "transmissivity must lie in [0, 1], got {t}"
        )));
    }
    let coupling: f64 = detectors.iter().map(|d| d.coupling).sum();
    if detectors.iter().any(|d| d.coupling < 0.0) || coupling > 1.0 + 1e-12 {
        return Err(Error::domain(
            "output couplings must be nonnegative and sum to at most 1",
        ));
    }
    for d in detectors {
        if !(0.0..=1.0).contains(&d.efficiency) || !(0.0..1.0).contains(&d.dark_prob) {
            return Err(Error::domain(
                "detector efficiency must lie in [0, 1] and dark probability in [0, 1)",
            ));
        }
    }

    // Photons not reaching any output: reflected at the beamsplitter or
    // coupled out of the multiport.
    let lost = (1.0 - t * coupling).max(0.0);
    let mut cell_probs: Vec<f64> = detectors.iter().map(|d| t * d.coupling).collect();
    cell_probs.push(lost);

    let mut counts = vec![0usize; cell_probs.len()];
    let mut total = 0.0;
    enumerate(n, 0, &mut counts, &mut |counts| {
        let ln_weight = ln_fact(n)
            + counts
                .iter()
                .zip(&cell_probs)
                .map(|(&k, &p)| {
                    if k == 0 {
                        0.0
                    } else {
                        k as f64 * p.ln() - ln_fact(k)
                    }
                })
                .sum::<f64>();
        if ln_weight == f64::NEG_INFINITY {
            return;
        }
        let outcome: f64 = detectors
            .iter()
            .zip(clicked)
            .zip(counts)
            .map(|((d, &click), &k)| {
                let silent = (1.0 - d.dark_prob) * (1.0 - d.efficiency).powi(k as i32);
                if click {
                    1.0 - silent
                } else {
                    silent
                }
            })
            .product();
        total += ln_weight.exp() * outcome;
    });
    Ok(total)
}

/// Visits every composition of `remaining` into `counts[slot..]`.
fn enumerate(
    remaining: usize,
    slot: usize,
    counts: &mut [usize],
    visit: &mut impl FnMut(&[usize]),
) {
    if slot + 1 == counts.len() {
        counts[slot] = remaining;
        visit(counts);
        return;
    }
    for k in 0..=remaining {
        counts[slot] = k;
        enumerate(remaining - k, slot + 1, counts, visit);
    }
}

/// `N` identical detectors behind a symmetric splitter.
pub fn symmetric_detectors(count: usize, efficiency: f64, dark_prob: f64) -> Vec<OutputDetector> {
    vec![
        OutputDetector {
            coupling: 1.0 / count as f64,
            efficiency,
            dark_prob
        };
        count
    ]
}
