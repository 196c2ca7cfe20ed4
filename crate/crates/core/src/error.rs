use thiserror::Error;

/// Errors raised by the twin-beam library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// A distribution does not sum to one within tolerance.
    #[error("distribution is not normalized: total mass {mass} (expected {expected})")]
    Normalization { mass: f64, expected: f64 },

    /// A normalized statistic has a zero denominator (zero variance or zero mean).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// The count range of a histogram is too small to hold the forward-mapped mass.
    #[error("truncation: residual mass {residual:e} exceeds budget {budget:e} at c_max = ({c_max_s}, {c_max_i})")]
    Truncation {
        residual: f64,
        budget: f64,
        c_max_s: usize,
        c_max_i: usize,
    },

    /// EM update hit a histogram bin with data but (numerically) no model support.
    #[error("numerical degeneracy at bin ({c_s}, {c_i}): model probability {model:e} with observed frequency {observed:e}")]
    Degeneracy {
        c_s: usize,
        c_i: usize,
        model: f64,
        observed: f64,
    },

    /// A quasi-distribution term overflowed despite log-domain evaluation.
    #[error("numerical overflow in series term (n_s = {n_s}, n_i = {n_i})")]
    Overflow { n_s: usize, n_i: usize },

    /// Grid evaluation failed at a specific coordinate.
    #[error("at (W_S = {w_s}, W_I = {w_i}): {source}")]
    AtGridPoint {
        w_s: f64,
        w_i: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::UndefinedStatistic(_) | Error::Degeneracy { .. } | Error::Overflow { .. } => {
                true
            }
            Error::AtGridPoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
