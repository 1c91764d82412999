use thiserror::Error;

/// Errors raised anywhere in the reduction and reachability pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or box had the wrong number of components.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: usize,
        found: usize,
    },

    /// A network failed structural validation.
    #[error("invalid network: {}", .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetwork(Vec<crate::network::Finding>),

    /// A box had `lower > upper` or a non-finite bound.
    #[error("invalid interval box: {0}")]
    InvalidBox(String),

    /// A network or config document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// An operation precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The partition would create more cells than the configured cap.
    #[error("refinement budget exceeded: {requested} cells requested, cap is {cap}")]
    Budget { requested: u128, cap: usize },

    /// Picard iteration could not find an a-priori enclosure.
    #[error("no a-priori enclosure found at t = {time} after {iterations} iterations; shrink dt")]
    Enclosure { time: f64, iterations: usize },

    /// A controller input box left the set the precision bound was computed on.
    #[error(
        "controller input box at t = {time} escapes the precision input set (component {component}: \
         [{lower}, {upper}] not within [{domain_lower}, {domain_upper}]); recompute rho over a larger set"
    )]
    PrecisionDomain {
        time: f64,
        component: usize,
        lower: f64,
        upper: f64,
        domain_lower: f64,
        domain_upper: f64,
    },

    /// Distillation did not reduce the training loss.
    #[error("training failed: {0}")]
    Training(String),

    /// The adaptive simulator could not meet its tolerance.
    #[error("simulation failed at t = {time}: {reason}")]
    Simulation { time: f64, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            found,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
