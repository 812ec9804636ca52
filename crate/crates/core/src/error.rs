use core::fmt;

use crate::tensor::{Coord, GridShape};

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A grid extent or channel count was zero.
    EmptyDimension(&'static str),
    CoordOutOfBounds { coord: Coord, shape: GridShape },
    DuplicateCoord(Coord),
    LengthMismatch { what: &'static str, expected: usize, actual: usize },
    ChannelMismatch { expected: usize, actual: usize },
    InvalidKernel([usize; 3]),
    InvalidStride([usize; 3]),
    /// Submanifold convolution with a stride other than one.
    StridedSubmanifold,
    /// A block received a convolution of the wrong mode, stride or shape.
    BlockSpec(&'static str),
    /// Rulebook row indices do not fit the tensor it is applied to.
    StaleRulebook,
    NonDivisibleShape { from: GridShape, to: GridShape },
    TooLarge(&'static str),
    InvalidConfig(&'static str),
    /// A matching cost was NaN or infinite.
    NonFiniteCost,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyDimension(what) => write!(f, "{what} must be at least 1"),
            Error::CoordOutOfBounds { coord, shape } => {
                write!(f, "coordinate {coord:?} outside grid {shape}")
            }
            Error::DuplicateCoord(c) => write!(f, "duplicate coordinate {c:?}"),
            Error::LengthMismatch { what, expected, actual } => {
                write!(f, "{what}: expected length {expected}, got {actual}")
            }
            Error::ChannelMismatch { expected, actual } => {
                write!(f, "channel mismatch: expected {expected}, got {actual}")
            }
            Error::InvalidKernel(k) => write!(f, "kernel {k:?} must be positive and odd"),
            Error::InvalidStride(s) => write!(f, "stride {s:?} must be positive"),
            Error::StridedSubmanifold => write!(f, "submanifold convolution requires stride (1,1,1)"),
            Error::BlockSpec(msg) => write!(f, "invalid block layer: {msg}"),
            Error::StaleRulebook => write!(f, "rulebook does not match the input tensor"),
            Error::NonDivisibleShape { from, to } => {
                write!(f, "grid {from} is not an integer multiple of {to}")
            }
            Error::TooLarge(what) => write!(f, "{what} too large"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFiniteCost => write!(f, "cost matrix contains a non-finite entry"),
        }
    }
}

impl core::error::Error for Error {}
