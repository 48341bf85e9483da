use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix had the wrong length.
    Shape {
        expected: usize,
        found: usize,
    },
    /// Architecture description is unusable.
    Architecture(&'static str),
    /// Output layer is wider than one neuron.
    UnsupportedOutput {
        width: usize,
    },
    NonFinite,
    InvalidConfig(&'static str),
    Underdetermined {
        equations: usize,
        unknowns: usize,
    },
    /// Rank fell below the relative pivot tolerance.
    Degenerate {
        rank: usize,
        unknowns: usize,
    },
    /// No label flip was found along either direction.
    BoundaryNotFound,
    /// Both sign probes returned label 1: the point is not on the boundary.
    InvalidBoundaryPoint {
        axis: usize,
    },
    /// Every coordinate of the recovered slope vanished.
    ZeroAffine,
    /// Fewer usable tuples than required slots.
    InsufficientData {
        available: usize,
        required: usize,
    },
    /// All sampled outputs were too close to zero to estimate a scale.
    IndeterminateScale,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { expected, found } => {
                write!(f, "shape mismatch: expected {expected}, found {found}")
            }
            Error::Architecture(msg) => write!(f, "invalid architecture: {msg}"),
            Error::UnsupportedOutput { width } => {
                write!(f, "unsupported architecture: output width {width}, only scalar outputs are supported")
            }
            Error::NonFinite => f.write_str("non-finite value"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Underdetermined {
                equations,
                unknowns,
            } => {
                write!(
                    f,
                    "system has {equations} equations for {unknowns} unknowns"
                )
            }
            Error::Degenerate { rank, unknowns } => {
                write!(f, "degenerate system: numerical rank {rank} < {unknowns}")
            }
            Error::BoundaryNotFound => f.write_str("no decision boundary found"),
            Error::InvalidBoundaryPoint { axis } => {
                write!(f, "point is not on the decision boundary (both probes along axis {axis} are positive)")
            }
            Error::ZeroAffine => f.write_str("recovered affine slope is identically zero"),
            Error::InsufficientData {
                available,
                required,
            } => write!(
                f,
                "insufficient data: {available} usable tuples, {required} required (short by {})",
                required - available
            ),
            Error::IndeterminateScale => {
                f.write_str("scale is indeterminate: all outputs below cutoff")
            }
        }
    }
}

impl core::error::Error for Error {}
