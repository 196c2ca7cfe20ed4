//! Response coefficients `K(c, n)`: probability of `c` clicks given `n`
//! photons at the source plane.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::special::{binomial_pmf, ln_binomial, pairwise_sum, poisson_pmf};

fn check_efficiency(t_eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t_eta) {
        return Err(Error::domain(format!(
            "overall efficiency T*eta must lie in [0, 1], got {t_eta}"
        )));
    }
    Ok(())
}

fn check_noise_mean(noise: f64) -> Result<()> {
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::domain(format!(
            "noise mean D must be finite and >= 0, got {noise}"
        )));
    }
    Ok(())
}

fn check_dark_prob(dark: f64) -> Result<()> {
    if !(0.0..1.0).contains(&dark) {
        return Err(Error::domain(format!(
            "dark-count probability must lie in [0, 1), got {dark}"
        )));
    }
    Ok(())
}

/// Infinite-pixel coefficient: binomial thinning convolved with Poisson noise,
/// `sum_l C(n,l) (T eta)^l (1 - T eta)^(n-l) D^(c-l) e^{-D} / (c-l)!`.
pub fn k_coeff_infinite(c: usize, n: usize, t_eta: f64, noise: f64) -> Result<f64> {
    check_efficiency(t_eta)?;
    check_noise_mean(noise)?;
    Ok(infinite_entry(c, n, t_eta, noise))
}

fn infinite_entry(c: usize, n: usize, t_eta: f64, noise: f64) -> f64 {
    let terms: Vec<f64> = (0..=c.min(n))
        .map(|l| binomial_pmf(n, l, t_eta) * poisson_pmf(noise, c - l))
        .collect();
    pairwise_sum(&terms)
}

/// Finite-multiport coefficient for `pixels` identical detectors behind a
/// symmetric `1 x N` splitter.
///
/// Evaluated through the occupancy distribution of detected photons over the
/// detectors followed by binomial dark clicks on the unoccupied ones. All
/// terms are nonnegative, so this stays accurate for large `N` where the
/// inclusion-exclusion form cancels catastrophically.
pub fn k_coeff_finite(c: usize, n: usize, pixels: usize, t_eta: f64, dark: f64) -> Result<f64> {
    check_finite_args(c, pixels, t_eta, dark)?;
    Ok(finite_column(n, pixels, t_eta, dark, c)[c])
}

/// Inclusion-exclusion form of the finite-multiport coefficient,
/// `C(N,c) (1-d)^N (1-T eta)^n (-1)^c sum_l C(c,l) (-1)^l (1-d)^-l (1 + l/N * T eta/(1 - T eta))^n`.
///
/// Accurate only while `C(N,c)` stays moderate; kept as an independent route
/// for small detector counts.
pub fn k_coeff_finite_alternating(
    c: usize,
    n: usize,
    pixels: usize,
    t_eta: f64,
    dark: f64,
) -> Result<f64> {
    check_finite_args(c, pixels, t_eta, dark)?;
    let big_n = pixels as f64;
    // Written with (1 - T eta + l T eta / N)^n so that T eta = 1 needs no special case.
    let mut acc = 0.0;
    for l in 0..=c {
        let sign = if (c - l).is_multiple_of(2) { 1.0 } else { -1.0 };
        let silent = (pixels - l) as f64;
        let base = 1.0 - t_eta * silent / big_n;
        let term = ln_binomial(c, l).exp() * (1.0 - dark).powf(silent) * base.powi(n as i32);
        acc += sign * term;
    }
    Ok((ln_binomial(pixels, c).exp() * acc).max(0.0))
}

fn check_finite_args(c: usize, pixels: usize, t_eta: f64, dark: f64) -> Result<()> {
    if pixels == 0 {
        return Err(Error::domain("detector count must be positive"));
    }
    if c > pixels {
        return Err(Error::domain(format!(
            "{c} clicks exceed the {pixels} available detectors"
        )));
    }
    check_efficiency(t_eta)?;
    check_dark_prob(dark)
}

/// Distribution of the number of occupied detectors after `k` photons are
/// spread uniformly over `pixels` detectors, for `k = 0..=k_max`.
fn occupancy_table(k_max: usize, pixels: usize) -> Vec<Vec<f64>> {
    let big_n = pixels as f64;
    let mut table = Vec::with_capacity(k_max + 1);
    let mut row = vec![1.0];
    table.push(row.clone());
    for _ in 0..k_max {
        let width = (row.len() + 1).min(pixels + 1);
        let mut next = vec![0.0; width];
        for (m, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            // lands on an occupied detector
            next[m] += p * m as f64 / big_n;
            if m < pixels {
                next[m + 1] += p * (pixels - m) as f64 / big_n;
            }
        }
        row = next;
        table.push(row.clone());
    }
    table
}

/// `K(c, n)` for `c = 0..=c_max` (entries beyond `pixels` are zero).
fn finite_column(n: usize, pixels: usize, t_eta: f64, dark: f64, c_max: usize) -> Vec<f64> {
    let occupancy = occupancy_table(n, pixels);
    finite_column_with(&occupancy, n, pixels, t_eta, dark, c_max)
}

fn finite_column_with(
    occupancy: &[Vec<f64>],
    n: usize,
    pixels: usize,
    t_eta: f64,
    dark: f64,
    c_max: usize,
) -> Vec<f64> {
    // P(m occupied | n) = sum_k Binom(n, k; T eta) Occ(k -> m)
    let width = (n + 1).min(pixels + 1);
    let mut occupied = vec![0.0; width];
    for k in 0..=n {
        let w = binomial_pmf(n, k, t_eta);
        if w == 0.0 {
            continue;
        }
        for (m, &q) in occupancy[k].iter().enumerate() {
            occupied[m] += w * q;
        }
    }
    (0..=c_max)
        .map(|c| {
            if c > pixels {
                return 0.0;
            }
            let terms: Vec<f64> = occupied
                .iter()
                .enumerate()
                .take(c + 1)
                .map(|(m, &pm)| pm * binomial_pmf(pixels - m, c - m, dark))
                .collect();
            pairwise_sum(&terms)
        })
        .collect()
}

/// Per-arm detector configuration: the symbolic infinite-pixel limit with a
/// fixed overall noise mean, or a finite number of identical detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PixelMode {
    Infinite { noise_mean: f64 },
    Finite { detectors: usize, dark_prob: f64 },
}

/// Loss beamsplitter, multiport and detectors of one arm.
///
/// Transmissivity and efficiency only ever enter as their product, which is
/// what gets stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionChain {
    t_eta: f64,
    pixels: PixelMode,
}

impl DetectionChain {
    pub fn new(transmissivity: f64, efficiency: f64, pixels: PixelMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmissivity) {
            return Err(Error::domain(format!(
                "transmissivity must lie in [0, 1], got {transmissivity}"
            )));
        }
        if !(0.0..=1.0).contains(&efficiency) {
            return Err(Error::domain(format!(
                "quantum efficiency must lie in [0, 1], got {efficiency}"
            )));
        }
        Self::from_product(transmissivity * efficiency, pixels)
    }

    pub fn from_product(t_eta: f64, pixels: PixelMode) -> Result<Self> {
        check_efficiency(t_eta)?;
        match pixels {
            PixelMode::Infinite { noise_mean } => check_noise_mean(noise_mean)?,
            PixelMode::Finite {
                detectors,
                dark_prob,
            } => {
                if detectors == 0 {
                    return Err(Error::domain("detector count must be positive"));
                }
                check_dark_prob(dark_prob)?;
            }
        }
        Ok(Self { t_eta, pixels })
    }

    /// Infinite-pixel chain with overall noise mean `noise`.
    pub fn infinite(t_eta: f64, noise: f64) -> Result<Self> {
        Self::from_product(t_eta, PixelMode::Infinite { noise_mean: noise })
    }

    pub fn finite(t_eta: f64, detectors: usize, dark_prob: f64) -> Result<Self> {
        Self::from_product(
            t_eta,
            PixelMode::Finite {
                detectors,
                dark_prob,
            },
        )
    }

    pub fn t_eta(&self) -> f64 {
        self.t_eta
    }

    pub fn pixels(&self) -> PixelMode {
        self.pixels
    }

    /// Largest click count the arm can produce, if bounded.
    pub fn max_clicks(&self) -> Option<usize> {
        match self.pixels {
            PixelMode::Finite { detectors, .. } => Some(detectors),
            PixelMode::Infinite { .. } => None,
        }
    }

    pub fn coefficient(&self, c: usize, n: usize) -> Result<f64> {
        match self.pixels {
            PixelMode::Infinite { noise_mean } => k_coeff_infinite(c, n, self.t_eta, noise_mean),
            PixelMode::Finite {
                detectors,
                dark_prob,
            } => {
                if c > detectors {
                    return Ok(0.0);
                }
                k_coeff_finite(c, n, detectors, self.t_eta, dark_prob)
            }
        }
    }

    /// Response matrix over `c = 0..=c_max`, `n = 0..=n_max`.
    pub fn kernel(&self, c_max: usize, n_max: usize) -> KernelMatrix {
        let mut k = Array2::zeros((c_max + 1, n_max + 1));
        match self.pixels {
            PixelMode::Infinite { noise_mean } => {
                for ((c, n), v) in k.indexed_iter_mut() {
                    *v = infinite_entry(c, n, self.t_eta, noise_mean);
                }
            }
            PixelMode::Finite {
                detectors,
                dark_prob,
            } => {
                let occupancy = occupancy_table(n_max, detectors);
                for n in 0..=n_max {
                    let col =
                        finite_column_with(&occupancy, n, detectors, self.t_eta, dark_prob, c_max);
                    for (c, v) in col.into_iter().enumerate() {
                        k[[c, n]] = v;
                    }
                }
            }
        }
        KernelMatrix { k }
    }

    /// Smallest `c_max` for which the click mass above it is below `budget`
    /// for every photon number up to `n_max`.
    pub fn default_c_max(&self, n_max: usize, budget: f64) -> usize {
        // Click counts grow stochastically with n, so the last column bounds the rest.
        let mut mass = 0.0;
        let cap = self.max_clicks().unwrap_or(usize::MAX);
        let mut c = 0;
        loop {
            mass += self.coefficient(c, n_max).unwrap_or(0.0);
            if 1.0 - mass < budget || c >= cap {
                return c;
            }
            c += 1;
        }
    }
}

/// Precomputed `K(c, n)` with rows indexed by clicks and columns by photons.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    k: Array2<f64>,
}

impl KernelMatrix {
    pub fn from_array(k: Array2<f64>) -> Self {
        Self { k }
    }

    pub fn c_max(&self) -> usize {
        self.k.nrows() - 1
    }

    pub fn n_max(&self) -> usize {
        self.k.ncols() - 1
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.k
    }

    /// `sum_c K(c, n)` per column.
    pub fn column_sums(&self) -> Vec<f64> {
        self.k.columns().into_iter().map(|col| col.sum()).collect()
    }
}
