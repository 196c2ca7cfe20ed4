//! Truncated joint signal-idler photon-number distributions and their
//! moment statistics.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{poisson_pmf, CompensatedSum};

/// Tolerance on `sum(probs) + tail_mass == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Default truncation tolerance for model constructors.
pub const DEFAULT_TRUNCATION: f64 = 1e-12;

/// Joint photon-number distribution `p(n_S, n_I)` on `[0, n_max_s] x [0, n_max_i]`.
///
/// Mass outside the stored square is carried in `tail_mass` rather than dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointPndRepr", into = "JointPndRepr")]
pub struct JointPnd {
    probs: Array2<f64>,
    tail_mass: f64,
}

#[derive(Serialize, Deserialize)]
struct JointPndRepr {
    n_max_s: usize,
    n_max_i: usize,
    tail_mass: f64,
    probs: Vec<f64>,
}

impl TryFrom<JointPndRepr> for JointPnd {
    type Error = Error;

    fn try_from(r: JointPndRepr) -> Result<Self> {
        JointPnd::from_row_major(r.n_max_s, r.n_max_i, r.probs, r.tail_mass)
    }
}

impl From<JointPnd> for JointPndRepr {
    fn from(p: JointPnd) -> Self {
        JointPndRepr {
            n_max_s: p.n_max_s(),
            n_max_i: p.n_max_i(),
            tail_mass: p.tail_mass,
            probs: p.probs.iter().copied().collect(),
        }
    }
}

impl JointPnd {
    /// Validates and wraps a probability table.
    pub fn new(probs: Array2<f64>, tail_mass: f64) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::domain(
                "joint distribution must have at least one cell",
            ));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::domain(format!(
                "probability {bad} is negative or non-finite"
            )));
        }
        if !tail_mass.is_finite() || tail_mass < 0.0 {
            return Err(Error::domain(format!(
                "tail mass {tail_mass} must be a nonnegative number"
            )));
        }
        let mass = kahan_total(probs.view()) + tail_mass;
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Normalization {
                mass,
                expected: 1.0,
            });
        }
        Ok(Self { probs, tail_mass })
    }

    pub fn from_row_major(
        n_max_s: usize,
        n_max_i: usize,
        probs: Vec<f64>,
        tail_mass: f64,
    ) -> Result<Self> {
        let shape = (n_max_s + 1, n_max_i + 1);
        if probs.len() != shape.0 * shape.1 {
            return Err(Error::domain(format!(
                "expected {} probabilities for n_max = ({n_max_s}, {n_max_i}), got {}",
                shape.0 * shape.1,
                probs.len()
            )));
        }
        let probs =
            Array2::from_shape_vec(shape, probs).map_err(|e| Error::domain(e.to_string()))?;
        Self::new(probs, tail_mass)
    }

    /// Rescales an arbitrary nonnegative table to unit mass (tail mass zero).
    pub fn normalized_from(mut probs: Array2<f64>) -> Result<Self> {
        let total = kahan_total(probs.view());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Normalization {
                mass: total,
                expected: 1.0,
            });
        }
        probs.mapv_inplace(|p| p / total);
        Self::new(probs, 0.0)
    }

    /// The vacuum state `p(0, 0) = 1`.
    pub fn vacuum() -> Self {
        Self {
            probs: Array2::from_elem((1, 1), 1.0),
            tail_mass: 0.0,
        }
    }

    /// Uniform distribution over the full support.
    pub fn uniform(n_max_s: usize, n_max_i: usize) -> Self {
        let cells = ((n_max_s + 1) * (n_max_i + 1)) as f64;
        Self {
            probs: Array2::from_elem((n_max_s + 1, n_max_i + 1), 1.0 / cells),
            tail_mass: 0.0,
        }
    }

    /// Poissonian photon pairs: `p(n,n) = mu^n e^{-mu} / n!`.
    pub fn poisson_pairs(mu: f64, truncation: f64) -> Result<Self> {
        check_model_params(mu, truncation)?;
        let (diag, tail) = truncate_poisson(mu, truncation);
        Ok(Self::diagonal(&diag, tail))
    }

    /// Single-mode (thermal) photon pairs: `p(n,n) = mu^n / (mu+1)^(n+1)`.
    pub fn gaussian_pairs(mu: f64, truncation: f64) -> Result<Self> {
        check_model_params(mu, truncation)?;
        let (diag, tail) = truncate_geometric(mu, truncation);
        Ok(Self::diagonal(&diag, tail))
    }

    fn diagonal(diag: &[f64], tail_mass: f64) -> Self {
        let n = diag.len();
        let mut probs = Array2::zeros((n, n));
        for (k, &p) in diag.iter().enumerate() {
            probs[[k, k]] = p;
        }
        Self { probs, tail_mass }
    }

    /// Independent joint distribution `m_S(n_S) m_I(n_I)`.
    pub fn product(signal: &Marginal, idler: &Marginal) -> Result<Self> {
        for m in [signal, idler] {
            if m.offset != 0 {
                return Err(Error::domain(
                    "product distribution needs marginals indexed from n = 0",
                ));
            }
            let mass = m.total();
            if (mass - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Normalization {
                    mass,
                    expected: 1.0,
                });
            }
        }
        let probs = Array2::from_shape_fn((signal.probs.len(), idler.probs.len()), |(a, b)| {
            signal.probs[a] * idler.probs[b]
        });
        let tail = (1.0 - kahan_total(probs.view())).max(0.0);
        Self::new(probs, tail)
    }

    pub fn n_max_s(&self) -> usize {
        self.probs.nrows() - 1
    }

    pub fn n_max_i(&self) -> usize {
        self.probs.ncols() - 1
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn get(&self, n_s: usize, n_i: usize) -> f64 {
        self.probs.get((n_s, n_i)).copied().unwrap_or(0.0)
    }

    /// Total stored mass, `1 - tail_mass` up to rounding.
    pub fn mass(&self) -> f64 {
        kahan_total(self.probs.view())
    }

    pub fn into_probs(self) -> Array2<f64> {
        self.probs
    }

    /// Signal and idler marginals.
    pub fn marginals(&self) -> (Marginal, Marginal) {
        let signal = self
            .probs
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().collect::<CompensatedSum>().value());
        let idler = self
            .probs
            .columns()
            .into_iter()
            .map(|c| c.iter().copied().collect::<CompensatedSum>().value());
        (
            Marginal {
                probs: signal.collect(),
                offset: 0,
                label: MarginalKind::Signal,
            },
            Marginal {
                probs: idler.collect(),
                offset: 0,
                label: MarginalKind::Idler,
            },
        )
    }

    /// Distribution of `n_S - n_I` over `[-n_max_i, n_max_s]`.
    pub fn difference_distribution(&self) -> Marginal {
        let offset = self.n_max_i();
        let mut probs = vec![0.0; self.n_max_s() + self.n_max_i() + 1];
        for ((a, b), &p) in self.probs.indexed_iter() {
            probs[a + offset - b] += p;
        }
        Marginal {
            probs,
            offset,
            label: MarginalKind::Difference,
        }
    }

    /// Distribution of `n_S + n_I` over `[0, n_max_s + n_max_i]`.
    pub fn sum_distribution(&self) -> Marginal {
        let mut probs = vec![0.0; self.n_max_s() + self.n_max_i() + 1];
        for ((a, b), &p) in self.probs.indexed_iter() {
            probs[a + b] += p;
        }
        Marginal {
            probs,
            offset: 0,
            label: MarginalKind::Sum,
        }
    }

    /// Product of this distribution's own marginals.
    pub fn independent_counterpart(&self) -> Result<Self> {
        let (s, i) = self.marginals();
        Self::product(&s, &i)
    }

    pub fn moments(&self) -> JointMoments {
        JointMoments::of(self.probs.view())
    }

    /// Normalized covariance `<dn_S dn_I> / sqrt(<dn_S^2><dn_I^2>)`.
    pub fn covariance(&self) -> Result<f64> {
        self.moments().correlation()
    }

    /// Direct variances of `n_S -+ n_I` alongside their expansion in terms of
    /// the arm variances and the normalized covariance.
    pub fn variance_identity(&self) -> VarianceIdentity {
        let m = self.moments();
        let diff = self.difference_distribution();
        let sum = self.sum_distribution();
        let spread = (m.var_s * m.var_i).sqrt();
        // With a degenerate arm the normalized covariance is undefined, but the
        // product sqrt(Var_S Var_I) * C reduces to the raw cross moment.
        let cross = match m.correlation() {
            Ok(c) => spread * c,
            Err(_) => m.cov,
        };
        VarianceIdentity {
            var_difference: diff.variance(),
            var_sum: sum.variance(),
            expansion_difference: m.var_s + m.var_i - 2.0 * cross,
            expansion_sum: m.var_s + m.var_i + 2.0 * cross,
        }
    }
}

fn check_model_params(mu: f64, truncation: f64) -> Result<()> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::domain(format!(
            "mean pair number must be finite and >= 0, got {mu}"
        )));
    }
    if !(truncation > 0.0 && truncation < 1.0) {
        return Err(Error::domain(format!(
            "truncation tolerance must lie in (0, 1), got {truncation}"
        )));
    }
    Ok(())
}

/// Poisson pmf on `[0, n_max]` with the smallest `n_max` whose tail is below
/// `truncation`; tails are summed directly from the far end.
fn truncate_poisson(mu: f64, truncation: f64) -> (Vec<f64>, f64) {
    if mu == 0.0 {
        return (vec![1.0], 0.0);
    }
    // Extend until past the mode and the terms are negligible against the budget.
    let mut pmf = Vec::new();
    let mut k = 0usize;
    loop {
        let p = poisson_pmf(mu, k);
        pmf.push(p);
        if k as f64 > mu && p < truncation * 1e-6 {
            break;
        }
        k += 1;
    }
    // tails[k] = mass strictly above k, within the computed window
    let mut tails = vec![0.0; pmf.len()];
    let mut acc = CompensatedSum::new();
    for k in (0..pmf.len()).rev() {
        tails[k] = acc.value();
        acc.add(pmf[k]);
    }
    let n_max = tails
        .iter()
        .position(|&t| t < truncation)
        .unwrap_or(pmf.len() - 1);
    let tail = tails[n_max];
    pmf.truncate(n_max + 1);
    (pmf, tail)
}

fn truncate_geometric(mu: f64, truncation: f64) -> (Vec<f64>, f64) {
    if mu == 0.0 {
        return (vec![1.0], 0.0);
    }
    let ratio = mu / (mu + 1.0);
    // mass above n is ratio^(n+1)
    let mut n_max = 0usize;
    while ratio.powi(n_max as i32 + 1) >= truncation {
        n_max += 1;
    }
    let pmf = (0..=n_max)
        .map(|n| ratio.powi(n as i32) / (mu + 1.0))
        .collect();
    (pmf, ratio.powi(n_max as i32 + 1))
}

pub(crate) fn kahan_total(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().copied().collect::<CompensatedSum>().value()
}

/// First and second moments of a two-dimensional table indexed from zero,
/// normalized by its stored mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointMoments {
    pub mass: f64,
    pub mean_s: f64,
    pub mean_i: f64,
    pub var_s: f64,
    pub var_i: f64,
    /// Unnormalized covariance `<dn_S dn_I>`.
    pub cov: f64,
}

impl JointMoments {
    pub fn of(table: ArrayView2<'_, f64>) -> Self {
        let mass = kahan_total(table);
        let mut ms = CompensatedSum::new();
        let mut mi = CompensatedSum::new();
        for ((a, b), &p) in table.indexed_iter() {
            ms.add(a as f64 * p);
            mi.add(b as f64 * p);
        }
        let mean_s = ms.value() / mass;
        let mean_i = mi.value() / mass;
        let mut vs = CompensatedSum::new();
        let mut vi = CompensatedSum::new();
        let mut c = CompensatedSum::new();
        for ((a, b), &p) in table.indexed_iter() {
            let ds = a as f64 - mean_s;
            let di = b as f64 - mean_i;
            vs.add(ds * ds * p);
            vi.add(di * di * p);
            c.add(ds * di * p);
        }
        Self {
            mass,
            mean_s,
            mean_i,
            var_s: vs.value() / mass,
            var_i: vi.value() / mass,
            cov: c.value() / mass,
        }
    }

    /// Normalized covariance, an error when either arm has zero variance.
    pub fn correlation(&self) -> Result<f64> {
        let degenerate = |var: f64, mean: f64| var <= 1e-14 * mean.powi(2).max(1.0);
        if degenerate(self.var_s, self.mean_s) || degenerate(self.var_i, self.mean_i) {
            return Err(Error::UndefinedStatistic(format!(
                "covariance needs nonzero variance in both arms (Var_S = {:e}, Var_I = {:e})",
                self.var_s, self.var_i
            )));
        }
        Ok((self.cov / (self.var_s * self.var_i).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Output of [`JointPnd::variance_identity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceIdentity {
    pub var_difference: f64,
    pub var_sum: f64,
    pub expansion_difference: f64,
    pub expansion_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalKind {
    Signal,
    Idler,
    Sum,
    Difference,
}

/// One-dimensional distribution over `n in [-offset, len - 1 - offset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    probs: Vec<f64>,
    offset: usize,
    label: MarginalKind,
}

impl Marginal {
    /// Distribution over `n = 0, 1, ...` for the given arm.
    pub fn new(label: MarginalKind, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain(
                "marginal probabilities must be nonempty, finite and >= 0",
            ));
        }
        Ok(Self {
            probs,
            offset: 0,
            label,
        })
    }

    /// Point mass at `n = k`.
    pub fn point_mass(label: MarginalKind, k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        Self {
            probs,
            offset: 0,
            label,
        }
    }

    pub fn label(&self) -> MarginalKind {
        self.label
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Smallest represented `n` (negative for difference distributions).
    pub fn min_index(&self) -> i64 {
        -(self.offset as i64)
    }

    pub fn max_index(&self) -> i64 {
        self.probs.len() as i64 - 1 - self.offset as i64
    }

    pub fn at(&self, n: i64) -> f64 {
        let idx = n + self.offset as i64;
        if idx < 0 {
            return 0.0;
        }
        self.probs.get(idx as usize).copied().unwrap_or(0.0)
    }

    /// `(n, p(n))` pairs in increasing `n`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let off = self.offset as i64;
        self.probs
            .iter()
            .enumerate()
            .map(move |(k, &p)| (k as i64 - off, p))
    }

    pub fn total(&self) -> f64 {
        self.probs
            .iter()
            .copied()
            .collect::<CompensatedSum>()
            .value()
    }

    /// Raw moment `<n^k>` normalized by the stored mass.
    pub fn raw_moment(&self, k: i32) -> f64 {
        let acc: CompensatedSum = self.iter().map(|(n, p)| (n as f64).powi(k) * p).collect();
        acc.value() / self.total()
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let acc: CompensatedSum = self
            .iter()
            .map(|(n, p)| (n as f64 - mean).powi(2) * p)
            .collect();
        acc.value() / self.total()
    }

    /// Statistics coefficient `<n^2>/<n>^2 - 1/<n>`: 1 for Poisson, 2 for thermal light.
    pub fn s_coefficient(&self) -> Result<f64> {
        let mean = self.mean();
        if !(mean.abs() > 1e-300) {
            return Err(Error::UndefinedStatistic(format!(
                "statistics coefficient needs a nonzero mean, got {mean:e}"
            )));
        }
        Ok(self.raw_moment(2) / (mean * mean) - 1.0 / mean)
    }
}
