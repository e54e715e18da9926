use thiserror::Error;

/// Every failure the toolkit reports.
///
/// Variants split into two families: validation errors (bad input, bad
/// configuration, malformed files) and runtime errors (numerical trouble,
/// I/O). The CLI maps the first family to exit code 1 and the second to 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown element symbol `{0}`")]
    UnknownElement(String),

    #[error("dangling bond index: bond ({i}, {j}) references a molecule with {n} atoms")]
    DanglingBond { i: usize, j: usize, n: usize },

    #[error("bond connects atom {0} to itself")]
    SelfBond(usize),

    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),

    #[error("invalid coordinates: {0}")]
    InvalidCoords(String),

    #[error("node index {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("node {node} has more than {cap} simple paths; switch to path sampling")]
    PathCapExceeded { node: usize, cap: usize },

    #[error("degenerate geometry at atoms {atoms:?}: {reason}")]
    DegenerateGeometry {
        atoms: Vec<usize>,
        reason: &'static str,
    },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss([usize; 2]),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("the {0} split is empty")]
    EmptySplit(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the caller's input rather than by the run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFinite(_) | Error::Io(_) | Error::DegenerateGeometry { .. }
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
