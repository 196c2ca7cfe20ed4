//! Small numerical helpers shared across modules.

use statrs::function::factorial::ln_factorial;

pub fn ln_fact(n: usize) -> f64 {
    ln_factorial(n as u64)
}

pub fn ln_binomial(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_fact(n) - ln_fact(k) - ln_fact(n - k)
}

/// `ln(p^k)` with the convention `0^0 = 1`.
fn ln_pow(p: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * p.ln()
    }
}

/// Binomial probability `C(n,k) p^k (1-p)^(n-k)`.
pub fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    (ln_binomial(n, k) + ln_pow(p, k) + ln_pow(1.0 - p, n - k)).exp()
}

/// Poisson probability `mean^k e^{-mean} / k!`.
pub fn poisson_pmf(mean: f64, k: usize) -> f64 {
    (ln_pow(mean, k) - mean - ln_fact(k)).exp()
}

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Pairwise summation with a fixed, length-determined order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
