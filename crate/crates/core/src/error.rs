use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty factor set")]
    EmptySet,

    #[error("degenerate tangent space: sigma_{rank} = {sigma:e} is below 1e-10 * sigma_1 = {top:e}")]
    DegenerateTangent { rank: usize, sigma: f64, top: f64 },

    /// The Gram matrix R or C of the Operator Sinkhorn iteration lost rank.
    #[error("{which} is numerically singular (condition number {condition:e})")]
    Singular { which: &'static str, condition: f64 },

    #[error("Operator Sinkhorn stalled after {iterations} iterations at residual {residual:e}")]
    NormalizationStalled { iterations: usize, residual: f64 },

    #[error("divergence detected after {iteration} iterations: residual {residual:e} exceeds 10x the best {best:e}")]
    Divergence {
        iteration: usize,
        residual: f64,
        best: f64,
    },

    #[error("objective increased at iteration {iteration} ({previous:e} -> {current:e}); step size exceeds 1/||L||^2")]
    StepSize {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("q = {q} exceeds the dense materialization limit {limit}")]
    TooLarge { q: usize, limit: usize },

    #[error("column {0} has zero norm")]
    ZeroColumn(usize),

    #[error("column {index}: {source}")]
    Column {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("probe {index}: {source}")]
    Probe {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("outer iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at_column(self, index: usize) -> Self {
        Error::Column {
            index,
            source: Box::new(self),
        }
    }

    /// True for divergence, singularity and step-size failures; false for
    /// argument and shape problems.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::Divergence { .. }
            | Error::StepSize { .. }
            | Error::NormalizationStalled { .. }
            | Error::DegenerateTangent { .. }
            | Error::NonFinite(_) => true,
            Error::Column { source, .. }
            | Error::Probe { source, .. }
            | Error::Iteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
