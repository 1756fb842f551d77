use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The container bytes or manifest do not describe a valid story file.
    #[error("format error: {0}")]
    Format(String),

    /// Span layouts are out of range, overlapping, or inconsistent across frames.
    #[error("layout error: {0}")]
    Layout(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Wraps an error raised while processing one frame of a story.
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_frame(self, frame: usize) -> Self {
        match self {
            e @ Error::Frame { .. } => e,
            e => Error::Frame {
                frame,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping frame context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Frame { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn frame_index(&self) -> Option<usize> {
        match self {
            Error::Frame { frame, .. } => Some(*frame),
            _ => None,
        }
    }

    /// Process exit status for the command-line front end: 2 for numeric
    /// failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
