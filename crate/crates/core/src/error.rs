use std::fmt;

use thiserror::Error;

/// Shape of a rank-3 feature map, `[channels, height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}]", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: non-finite value at {coord}")]
    NonFinite { op: &'static str, coord: String },

    #[error("{branch} branch: {source}")]
    Branch {
        branch: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("peak set is not Hermitian: ({u}, {v}) has no conjugate partner")]
    NotHermitian { u: usize, v: usize },

    #[error("unknown layer kind `{0}`")]
    UnknownLayer(String),

    #[error("{0} is undefined")]
    Undefined(&'static str),

    #[error("malformed data at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn in_branch(self, branch: &'static str) -> Self {
        Error::Branch {
            branch,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input data or arguments rather than the
    /// filesystem.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io(_) => false,
            Error::Branch { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
