use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A builder or operation precondition on its arguments failed.
    InvalidArgument(String),
    /// A spectral function was not finite at this eigenvalue.
    NonFinite { eigenvalue: f64 },
    /// Dense path requested above the point cap.
    DenseCapExceeded { points: usize, cap: usize },
    /// Quadrature too coarse; carries the number of nodes that would resolve it.
    UnderResolved { required: usize },
    /// Profile without decay passed to a Gaussian fit.
    NoDecay,
    /// Fewer usable samples than the operation needs.
    TooFewSamples { got: usize, need: usize },
    /// Half-step refinement disagreed beyond tolerance.
    RefinementMismatch { relative: f64 },
    /// Graph is not connected.
    Disconnected,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite { eigenvalue } => {
                write!(
                    f,
                    "spectral function is not finite at eigenvalue {eigenvalue}"
                )
            }
            Error::DenseCapExceeded { points, cap } => write!(
                f,
                "{points} points exceed the dense cap of {cap}; use the matrix-free path"
            ),
            Error::UnderResolved { required } => {
                write!(
                    f,
                    "quadrature under-resolved; at least {required} points required"
                )
            }
            Error::NoDecay => write!(f, "profile has no decay; Gaussian fit is undefined"),
            Error::TooFewSamples { got, need } => {
                write!(f, "{got} usable samples, at least {need} required")
            }
            Error::RefinementMismatch { relative } => write!(
                f,
                "half-grid refinement differs by {relative:.3e}; use a finer time step"
            ),
            Error::Disconnected => write!(f, "graph is not connected"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
