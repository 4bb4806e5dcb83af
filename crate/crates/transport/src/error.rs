//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]; variants are grouped by the
//! stage that produces them (data ingestion, nuisance fitting, estimation,
//! simulation) so callers can match on the failure mode rather than parse
//! message strings.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Unknown effect-measure identifier.
    #[error("unknown measure `{name}`; valid identifiers: {valid}")]
    UnknownMeasure { name: String, valid: String },

    /// Unknown estimator identifier.
    #[error("unknown estimator `{name}`; valid identifiers: {valid}")]
    UnknownEstimator { name: String, valid: String },

    /// A point fell outside a measure's domain (or an effect function's
    /// admissible set). `constraint` names the violated condition; the point
    /// is (psi1, psi0) for Φ-side calls and (tau, psi0) for Γ-side calls.
    #[error("{measure}: domain violation at ({arg1}, {arg0}): requires {constraint}")]
    Domain {
        measure: &'static str,
        arg1: f64,
        arg0: f64,
        constraint: &'static str,
    },

    /// Derivative requested where it does not exist.
    #[error("{measure}: derivative does not exist at ({arg1}, {arg0}): requires {constraint}")]
    Derivative {
        measure: &'static str,
        arg1: f64,
        arg0: f64,
        constraint: &'static str,
    },

    /// Malformed input file or value.
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    /// Structural validation of a dataset failed.
    #[error("invalid data: {0}")]
    Validation(String),

    /// A conditional effect evaluation left the measure's domain.
    #[error("conditional effect undefined at {}x = {x:?}: {source}", row.map(|r| format!("row {r}, ")).unwrap_or_default())]
    Cate {
        row: Option<usize>,
        x: Vec<f64>,
        source: Box<Error>,
    },

    /// Iterative fit did not converge. `trace` holds the per-iteration
    /// gradient max-norms.
    #[error("{what} did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        grad_norm: f64,
        trace: Vec<f64>,
    },

    /// Perfect or quasi-perfect separation in a logistic fit.
    #[error("{what}: separation detected (|beta|_inf = {beta_norm:.3e} with gradient norm {grad_norm:.3e})")]
    Separation {
        what: &'static str,
        beta_norm: f64,
        grad_norm: f64,
    },

    /// Singular or numerically rank-deficient linear system.
    #[error("{what}: singular system: {message}")]
    Singular { what: &'static str, message: String },

    /// Too few observations to fit a model.
    #[error("{what}: under-determined fit ({rows} rows for {cols} coefficients)")]
    UnderDetermined {
        what: &'static str,
        rows: usize,
        cols: usize,
    },

    /// A fitted selection probability left no support for the density ratio.
    #[error("no overlap at row {row}: fitted selection probability {sigma:.3e} below {floor:.1e}")]
    Overlap { row: usize, sigma: f64, floor: f64 },

    /// The requested analysis needs data the set does not carry.
    #[error("capability: {0}")]
    Capability(String),

    /// Variance estimation failed.
    #[error("variance: {0}")]
    Variance(String),

    /// Bootstrap failed (too many broken replicates).
    #[error("bootstrap: {failed} of {total} replicates failed (tolerance {tolerance:.0}%): {detail}")]
    Bootstrap {
        failed: usize,
        total: usize,
        tolerance: f64,
        detail: String,
    },

    /// A simulation study exceeded its failure budget.
    #[error("simulation study: {0}")]
    Study(String),

    /// Bad configuration or argument combination.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for reports and the C API.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownMeasure { .. } => "unknown_measure",
            Error::UnknownEstimator { .. } => "unknown_estimator",
            Error::Domain { .. } => "domain",
            Error::Derivative { .. } => "derivative",
            Error::Cate { .. } => "cate",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Separation { .. } => "separation",
            Error::Singular { .. } => "singular",
            Error::UnderDetermined { .. } => "under_determined",
            Error::Overlap { .. } => "overlap",
            Error::Capability(_) => "capability",
            Error::Variance(_) => "variance",
            Error::Bootstrap { .. } => "bootstrap",
            Error::Study(_) => "study",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
