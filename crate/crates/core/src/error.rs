use thiserror::Error;

/// Which Markov chain raised a divergence. Algorithms that run a prior
/// chain next to the posterior chain need to report them separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    Posterior,
    Prior,
}

impl std::fmt::Display for ChainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainKind::Posterior => write!(f, "posterior"),
            ChainKind::Prior => write!(f, "prior"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// A chain state left the admissible region (NaN/Inf coordinates).
    /// Carries the step-size settings and the iteration at which the
    /// blow-up was detected so the caller can adjust gamma/lambda.
    #[error(
        "{chain} chain diverged at step {step} (gamma={gamma:.3e}, lambda={lambda:.3e}, theta={theta:?})"
    )]
    Divergence {
        chain: ChainKind,
        step: u64,
        gamma: f64,
        lambda: f64,
        theta: Vec<f64>,
    },

    #[error("proximal inner solver stalled: residual {residual:.3e} after {iterations} iterations")]
    ProxFailure { residual: f64, iterations: usize },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("model validation failed: {0}")]
    Validation(String),

    #[error("constant series has zero variance; autocorrelation is undefined")]
    ZeroVariance,

    #[error("optimiser did not reach the requested tolerance: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
