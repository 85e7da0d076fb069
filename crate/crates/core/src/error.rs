use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("non-constant exponent `{0}`")]
    NonConstantExponent(String),

    /// Evaluation left the domain of some operation or of the metric.
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },

    #[error("quadrature on [{a}, {b}] exhausted {panels} panels (error estimate {estimate:e})")]
    Quadrature {
        a: f64,
        b: f64,
        panels: usize,
        estimate: f64,
    },

    #[error("zero vector input")]
    ZeroVector,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("jet degree {have} is too low, need {need}")]
    JetDegree { need: usize, have: usize },

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("log-derivatives are not cross-consistent at (r={r}, s={s}): defect {defect:e}")]
    Inconsistent { r: f64, s: f64, defect: f64 },

    #[error("unknown catalog id `{0}`")]
    UnknownCatalog(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid metric spec: {0}")]
    Spec(String),

    /// A finite-difference stencil could not be fit inside the domain.
    #[error("stencil does not fit inside the domain with steps above {h_min:e}")]
    Boundary { h_min: f64 },

    #[error("construction failed at stage `{stage}`: {message}")]
    Construct { stage: &'static str, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(expr: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Domain {
            expr: expr.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by evaluating outside the admissible domain.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain { .. } | Error::Quadrature { .. })
    }
}
