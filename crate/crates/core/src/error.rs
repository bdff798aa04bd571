use thiserror::Error;

/// Every failure the library can report. Each variant maps onto one
/// machine-readable category so the CLI can exit with a distinct code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FptError {
    #[error("invalid parameter: {rule}")]
    InvalidParameter { rule: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sampler unsupported for {family}")]
    UnsupportedSampler { family: String },

    #[error("operation unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible truncation: no probability mass above N = {level}")]
    InfeasibleTruncation { level: f64 },

    #[error("cumulant series did not reach its tail bound at u = {u} after {terms} terms")]
    SeriesDivergence { u: f64, terms: usize },

    #[error("integrability condition fails at y = {y}, v = {v} (log-slope {log_slope} at u = {witness_u})")]
    Divergent { y: f64, v: f64, witness_u: f64, log_slope: f64 },

    #[error("integrability check indeterminate at y = {y}, v = {v}")]
    Indeterminate { y: f64, v: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("no crossing possible: P(eta > a(1 - lambda)) = 0, so tau is infinite")]
    NoCrossing,

    #[error("no admissible v in the sweep yields a certificate")]
    CertificateInfeasible,

    #[error("empirical MGF does not cover quadrature node u = {u}")]
    Coverage { u: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl FptError {
    pub fn invalid(rule: impl Into<String>) -> Self {
        FptError::InvalidParameter { rule: rule.into() }
    }

    /// Short stable tag written into error reports.
    pub fn category(&self) -> &'static str {
        match self {
            FptError::InvalidParameter { .. } => "invalid-parameter",
            FptError::Precondition(_) => "precondition",
            FptError::UnsupportedSampler { .. } => "unsupported-sampler",
            FptError::Unsupported(_) => "unsupported",
            FptError::InfeasibleTruncation { .. } => "infeasible-truncation",
            FptError::SeriesDivergence { .. } => "series-divergence",
            FptError::Divergent { .. } => "divergent",
            FptError::Indeterminate { .. } => "indeterminate",
            FptError::Quadrature(_) => "quadrature",
            FptError::NoCrossing => "no-crossing",
            FptError::CertificateInfeasible => "certificate-infeasible",
            FptError::Coverage { .. } => "coverage",
            FptError::Config { .. } => "config",
            FptError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            FptError::Config { .. } => 2,
            FptError::InvalidParameter { .. } => 3,
            FptError::Precondition(_) => 4,
            FptError::NoCrossing => 5,
            FptError::Divergent { .. } | FptError::Indeterminate { .. } => 6,
            FptError::SeriesDivergence { .. } => 7,
            FptError::Quadrature(_) => 8,
            FptError::CertificateInfeasible => 9,
            FptError::Coverage { .. } => 10,
            FptError::UnsupportedSampler { .. } | FptError::Unsupported(_) => 11,
            FptError::InfeasibleTruncation { .. } => 12,
            FptError::Io(_) => 13,
        }
    }
}

pub type Result<T> = std::result::Result<T, FptError>;
