//! Joint signal-idler integrated-intensity quasi-distributions `P(W_S, W_I, s)`.
//!
//! The s-ordered distribution is obtained from the photon-number distribution
//! through the Laguerre series
//!
//! ```text
//! P(W_S, W_I, s) = 4/(1-s)^2 exp(-2(W_S+W_I)/(1-s))
//!     * sum rho(n_S, n_I) ((s+1)/(s-1))^(n_S+n_I) L_{n_S}(4W_S/(1-s^2)) L_{n_I}(4W_I/(1-s^2))
//! ```
//!
//! For `s = -1` the series collapses to a mixture of Poisson kernels in `W`,
//! evaluated in closed form. Negative values at `s = 0` witness nonclassical light.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnd::JointPnd;
use crate::special::{ln_fact, CompensatedSum};

/// Ordering parameter `s` in `[-1, 1)`: -1 antinormal, 0 symmetric.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct OrderingParam(f64);

impl OrderingParam {
    pub const ANTINORMAL: OrderingParam = OrderingParam(-1.0);
    pub const SYMMETRIC: OrderingParam = OrderingParam(0.0);

    pub fn new(s: f64) -> Result<Self> {
        if !s.is_finite() || s < -1.0 {
            return Err(Error::domain(format!(
                "ordering parameter must lie in [-1, 1), got {s}"
            )));
        }
        if s >= 1.0 {
            return Err(Error::domain(
                "normal ordering (s >= 1) is unsupported: the distribution needs generalized functions",
            ));
        }
        Ok(Self(s))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_antinormal(self) -> bool {
        self.0 == -1.0
    }
}

impl TryFrom<f64> for OrderingParam {
    type Error = Error;

    fn try_from(s: f64) -> Result<Self> {
        Self::new(s)
    }
}

impl From<OrderingParam> for f64 {
    fn from(s: OrderingParam) -> f64 {
        s.0
    }
}

/// `sign * exp(ln_abs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub sign: f64,
    pub ln_abs: f64,
}

impl SignedLog {
    pub fn value(self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.ln_abs.exp()
        }
    }
}

const RESCALE_ABOVE: f64 = 1e150;

/// `L_0(x), ..., L_n(x)` as signed logarithms.
///
/// Runs `(k+1) L_{k+1} = (2k+1-x) L_k - k L_{k-1}` on a rescaled pair so the
/// magnitudes never overflow; the scale is kept as a separate logarithm.
pub fn laguerre_table(n: usize, x: f64) -> Vec<SignedLog> {
    let mut out = Vec::with_capacity(n + 1);
    let to_log = |v: f64, scale: f64| SignedLog {
        sign: if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        },
        ln_abs: if v == 0.0 {
            f64::NEG_INFINITY
        } else {
            v.abs().ln() + scale
        },
    };
    let (mut prev, mut cur, mut scale) = (1.0f64, 1.0 - x, 0.0f64);
    out.push(SignedLog {
        sign: 1.0,
        ln_abs: 0.0,
    });
    if n == 0 {
        return out;
    }
    out.push(to_log(cur, scale));
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_ABOVE || prev.abs() > RESCALE_ABOVE {
            prev /= RESCALE_ABOVE;
            cur /= RESCALE_ABOVE;
            scale += RESCALE_ABOVE.ln();
        }
        out.push(to_log(cur, scale));
    }
    out
}

/// Laguerre polynomial `L_n(x)`.
pub fn laguerre_eval(n: usize, x: f64) -> f64 {
    laguerre_table(n, x)[n].value()
}

/// Nonzero cells of a joint distribution, prepared for repeated series evaluation.
#[derive(Debug, Clone)]
pub struct SeriesTerms {
    /// `(n_S, n_I, ln rho)` with `n_S <= n_I` paired with its mirror cell when present.
    pairs: Vec<CellPair>,
    n_max_s: usize,
    n_max_i: usize,
}

#[derive(Debug, Clone, Copy)]
struct CellPair {
    a: usize,
    b: usize,
    ln_ab: f64,
    /// `ln rho(b, a)` for `a != b`.
    ln_ba: Option<f64>,
}

impl SeriesTerms {
    pub fn new(rho: &JointPnd) -> Self {
        let ln = |a: usize, b: usize| {
            let p = rho.get(a, b);
            if p > 0.0 {
                Some(p.ln())
            } else {
                None
            }
        };
        let top = rho.n_max_s().max(rho.n_max_i());
        let mut pairs = Vec::new();
        for a in 0..=top {
            for b in a..=top {
                let ab = ln(a, b);
                let ba = if a == b { None } else { ln(b, a) };
                match (ab, ba) {
                    (None, None) => {}
                    (Some(x), y) => pairs.push(CellPair {
                        a,
                        b,
                        ln_ab: x,
                        ln_ba: y,
                    }),
                    // Only the mirrored cell is populated: store it as the primary.
                    (None, Some(y)) => pairs.push(CellPair {
                        a: b,
                        b: a,
                        ln_ab: y,
                        ln_ba: None,
                    }),
                }
            }
        }
        Self {
            pairs,
            n_max_s: rho.n_max_s(),
            n_max_i: rho.n_max_i(),
        }
    }

    /// Series value and the largest single-term magnitude.
    fn evaluate(&self, s: f64, w_s: f64, w_i: f64) -> Result<(f64, f64)> {
        let r = (s + 1.0) / (s - 1.0);
        let ln_r = r.abs().ln();
        let x_s = 4.0 * w_s / (1.0 - s * s);
        let x_i = 4.0 * w_i / (1.0 - s * s);
        let top = self.n_max_s.max(self.n_max_i);
        let l_s = laguerre_table(top, x_s);
        let l_i = laguerre_table(top, x_i);
        let ln_pref = 4f64.ln() - 2.0 * (1.0 - s).ln() - 2.0 * (w_s + w_i) / (1.0 - s);

        let term = |a: usize, b: usize, ln_rho: f64| -> Result<f64> {
            let (la, lb) = (l_s[a], l_i[b]);
            if la.sign == 0.0 || lb.sign == 0.0 {
                return Ok(0.0);
            }
            let parity = if (a + b).is_multiple_of(2) { 1.0 } else { -1.0 };
            let ln_r_pow = if a + b == 0 {
                0.0
            } else {
                (a + b) as f64 * ln_r
            };
            let v = parity
                * la.sign
                * lb.sign
                * ((ln_pref + ln_rho + ln_r_pow) + (la.ln_abs + lb.ln_abs)).exp();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Overflow { n_s: a, n_i: b })
            }
        };

        let mut acc = CompensatedSum::new();
        let mut largest = 0.0f64;
        for cell in &self.pairs {
            let t = term(cell.a, cell.b, cell.ln_ab)?;
            largest = largest.max(t.abs());
            let combined = match cell.ln_ba {
                Some(ln_ba) => {
                    let u = term(cell.b, cell.a, ln_ba)?;
                    largest = largest.max(u.abs());
                    t + u
                }
                None => t,
            };
            acc.add(combined);
        }
        Ok((acc.value(), largest))
    }
}

/// Magnitude ratio below which a series result is flagged as cancellation-dominated.
pub const CANCELLATION_RATIO: f64 = 1e-8;

/// `P(W_S, W_I, s)` from the Laguerre series, or the closed form when `s = -1`.
pub fn quasi_distribution(rho: &JointPnd, s: OrderingParam, w_s: f64, w_i: f64) -> Result<f64> {
    check_intensities(w_s, w_i)?;
    if s.is_antinormal() {
        return Ok(antinormal_closed_form(rho, w_s, w_i));
    }
    let (value, largest) = SeriesTerms::new(rho).evaluate(s.value(), w_s, w_i)?;
    if value.abs() < CANCELLATION_RATIO * largest {
        log::warn!("P({w_s}, {w_i}, {}) = {value:e} lost precision to cancellation (largest term {largest:e})", s.0);
    }
    Ok(value)
}

fn check_intensities(w_s: f64, w_i: f64) -> Result<()> {
    if !(w_s >= 0.0 && w_i >= 0.0) || !w_s.is_finite() || !w_i.is_finite() {
        return Err(Error::domain(format!(
            "integrated intensities must be finite and >= 0, got ({w_s}, {w_i})"
        )));
    }
    Ok(())
}

/// `ln(e^{-W} W^n / n!)`.
fn ln_poisson_kernel(w: f64, n: usize) -> f64 {
    if n == 0 {
        -w
    } else {
        n as f64 * w.ln() - w - ln_fact(n)
    }
}

/// Antinormally ordered distribution: `sum rho(a,b) e^{-W_S} W_S^a/a! e^{-W_I} W_I^b/b!`.
pub fn antinormal_closed_form(rho: &JointPnd, w_s: f64, w_i: f64) -> f64 {
    let ks: Vec<f64> = (0..=rho.n_max_s())
        .map(|a| ln_poisson_kernel(w_s, a))
        .collect();
    let ki: Vec<f64> = (0..=rho.n_max_i())
        .map(|b| ln_poisson_kernel(w_i, b))
        .collect();
    let mut acc = CompensatedSum::new();
    for ((a, b), &p) in rho.probs().indexed_iter() {
        if p > 0.0 {
            acc.add(p * (ks[a] + ki[b]).exp());
        }
    }
    acc.value().max(0.0)
}

/// Values of `P(W_S, W_I, s)` on a rectangular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct IntensityGrid {
    w_s_axis: Vec<f64>,
    w_i_axis: Vec<f64>,
    values: Array2<f64>,
    s: OrderingParam,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    s: OrderingParam,
    w_s_axis: Vec<f64>,
    w_i_axis: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<GridRepr> for IntensityGrid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        let values = Array2::from_shape_vec((r.w_s_axis.len(), r.w_i_axis.len()), r.values)
            .map_err(|e| Error::domain(e.to_string()))?;
        IntensityGrid::new(r.w_s_axis, r.w_i_axis, values, r.s)
    }
}

impl From<IntensityGrid> for GridRepr {
    fn from(g: IntensityGrid) -> Self {
        GridRepr {
            s: g.s,
            w_s_axis: g.w_s_axis,
            w_i_axis: g.w_i_axis,
            values: g.values.into_iter().collect(),
        }
    }
}

impl IntensityGrid {
    pub fn new(
        w_s_axis: Vec<f64>,
        w_i_axis: Vec<f64>,
        values: Array2<f64>,
        s: OrderingParam,
    ) -> Result<Self> {
        for axis in [&w_s_axis, &w_i_axis] {
            if axis.is_empty() || axis[0] < 0.0 || axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::domain(
                    "grid axes must be nonnegative and strictly increasing",
                ));
            }
        }
        if values.dim() != (w_s_axis.len(), w_i_axis.len()) {
            return Err(Error::domain("grid values do not match the axes"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("grid values must be finite"));
        }
        Ok(Self {
            w_s_axis,
            w_i_axis,
            values,
            s,
        })
    }

    pub fn w_s_axis(&self) -> &[f64] {
        &self.w_s_axis
    }

    pub fn w_i_axis(&self) -> &[f64] {
        &self.w_i_axis
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn s(&self) -> OrderingParam {
        self.s
    }

    /// Trapezoidal integral over the grid rectangle.
    pub fn integral(&self) -> f64 {
        self.weighted_sum(
            &trapezoid_weights(&self.w_s_axis),
            &trapezoid_weights(&self.w_i_axis),
        )
    }

    /// Composite Simpson integral (3/8 rule on the last three intervals when
    /// their count is odd). Requires uniformly spaced axes.
    pub fn integral_simpson(&self) -> Result<f64> {
        Ok(self.weighted_sum(
            &simpson_weights(&self.w_s_axis)?,
            &simpson_weights(&self.w_i_axis)?,
        ))
    }

    fn weighted_sum(&self, ws: &[f64], wi: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for ((a, b), &v) in self.values.indexed_iter() {
            acc.add(ws[a] * wi[b] * v);
        }
        acc.value()
    }

    /// CSV with the `W_I` axis as header row and `W_S` as first column.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "W_S\\W_I")?;
        for w in &self.w_i_axis {
            write!(out, ",{w:?}")?;
        }
        writeln!(out)?;
        for (row, w) in self.values.rows().into_iter().zip(&self.w_s_axis) {
            write!(out, "{w:?}")?;
            for v in row {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..n)
        .map(|k| {
            let left = if k > 0 { axis[k] - axis[k - 1] } else { 0.0 };
            let right = if k + 1 < n {
                axis[k + 1] - axis[k]
            } else {
                0.0
            };
            0.5 * (left + right)
        })
        .collect()
}

fn simpson_weights(axis: &[f64]) -> Result<Vec<f64>> {
    let n = axis.len();
    if n < 3 {
        return Ok(trapezoid_weights(axis));
    }
    let h = (axis[n - 1] - axis[0]) / (n - 1) as f64;
    if axis
        .windows(2)
        .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0))
    {
        return Err(Error::domain(
            "Simpson quadrature needs a uniformly spaced axis",
        ));
    }
    let intervals = n - 1;
    let mut w = vec![0.0; n];
    let simpson_end = if intervals.is_multiple_of(2) {
        intervals
    } else {
        intervals - 3
    };
    for k in (0..simpson_end).step_by(2) {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
    }
    if simpson_end < intervals {
        let k = simpson_end;
        for (j, c) in [1.0, 3.0, 3.0, 1.0].into_iter().enumerate() {
            w[k + j] += 3.0 * h / 8.0 * c;
        }
    }
    Ok(w)
}

/// `points` equally spaced values on `[0, w_max]`.
fn linspace(w_max: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| w_max * k as f64 / (points - 1) as f64)
        .collect()
}

/// Grid extent `2.5 (<n_S> + <n_I>)`, or 10 for the vacuum.
pub fn default_w_max(rho: &JointPnd) -> f64 {
    let m = rho.moments();
    let w = 2.5 * (m.mean_s + m.mean_i);
    if w > 0.0 {
        w
    } else {
        10.0
    }
}

pub const DEFAULT_POINTS: usize = 201;

/// Evaluates `P(W_S, W_I, s)` on a uniform `points x points` grid over `[0, w_max]^2`.
pub fn grid_scan(
    rho: &JointPnd,
    s: OrderingParam,
    w_max: f64,
    points: usize,
) -> Result<IntensityGrid> {
    if !(w_max > 0.0) || !w_max.is_finite() {
        return Err(Error::domain(format!(
            "w_max must be positive, got {w_max}"
        )));
    }
    if points < 2 {
        return Err(Error::domain("a grid needs at least two points per axis"));
    }
    let axis = linspace(w_max, points);
    let terms = SeriesTerms::new(rho);
    let rows: Vec<Result<(Vec<f64>, usize)>> =
        axis.par_iter()
            .map(|&w_s| {
                let mut row = Vec::with_capacity(points);
                let mut cancelled = 0;
                for &w_i in &axis {
                    let v = if s.is_antinormal() {
                        antinormal_closed_form(rho, w_s, w_i)
                    } else {
                        let (v, largest) = terms.evaluate(s.value(), w_s, w_i).map_err(|e| {
                            Error::AtGridPoint {
                                w_s,
                                w_i,
                                source: Box::new(e),
                            }
                        })?;
                        if v.abs() < CANCELLATION_RATIO * largest {
                            cancelled += 1;
                        }
                        v
                    };
                    row.push(v);
                }
                Ok((row, cancelled))
            })
            .collect();
    let mut values = Array2::zeros((points, points));
    let mut cancelled = 0;
    for (a, row) in rows.into_iter().enumerate() {
        let (row, c) = row?;
        cancelled += c;
        for (b, v) in row.into_iter().enumerate() {
            values[[a, b]] = v;
        }
    }
    if cancelled > 0 {
        log::warn!("{cancelled} grid points are dominated by cancellation in the Laguerre series");
    }
    IntensityGrid::new(axis.clone(), axis, values, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativityReport {
    pub min_value: f64,
    pub min_location: (f64, f64),
    /// Fraction of grid points with a strictly negative value.
    pub negative_fraction: f64,
}

pub fn negativity_report(grid: &IntensityGrid) -> NegativityReport {
    let mut min_value = f64::INFINITY;
    let mut min_location = (grid.w_s_axis[0], grid.w_i_axis[0]);
    let mut negative = 0usize;
    for ((a, b), &v) in grid.values.indexed_iter() {
        if v < min_value {
            min_value = v;
            min_location = (grid.w_s_axis[a], grid.w_i_axis[b]);
        }
        if v < 0.0 {
            negative += 1;
        }
    }
    NegativityReport {
        min_value,
        min_location,
        negative_fraction: negative as f64 / grid.values.len() as f64,
    }
}
