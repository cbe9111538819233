use std::path::PathBuf;

/// Errors produced anywhere in the analysis / conversion / evaluation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("unsupported WAV format: {field} = {value} ({expected})")]
    UnsupportedFormat {
        field: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("input is empty")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("bad frame specification: {0}")]
    BadFrameSpec(String),
    #[error("bad window specification: {0}")]
    BadWindowSpec(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("lag {lag} must be smaller than frame length {len}")]
    LagTooLarge { lag: usize, len: usize },
    #[error("singular autocorrelation (silent or degenerate frame)")]
    SingularInput,
    #[error("synthesis filter diverged (|y| > 1e6): unstable model")]
    UnstableModel,
    #[error("polynomial root finding did not converge")]
    RootFindingFailure,
    #[error("LPC frame is not minimum phase")]
    UnstableFrame,
    #[error("PSOLA factor {0} outside [0.25, 4]")]
    BadFactor(f64),
    #[error("pitch tracks do not align: {0} vs {1} frames")]
    TrackMismatch(usize, usize),
    #[error("too few training pairs: {got} < {min}")]
    TooFewPairs { got: usize, min: usize },
    #[error("frame sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no frame is non-silent on both sides")]
    NoValidFrames,
    #[error("source and target are spectrally identical; success rate undefined")]
    DegenerateBaseline,
    #[error("phoneme segment '{0}' covers no frame center")]
    EmptySegment(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("model error: {0}")]
    ModelMismatch(String),
    #[error("unknown scenario '{0}'")]
    ScenarioUnknown(String),
    #[error("bad synthetic speaker spec: {0}")]
    BadSpec(String),
    #[error("bad training configuration: {0}")]
    BadConfig(String),
    #[error("malformed document: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            BadFrameSpec(_) | BadWindowSpec(_) | BadFactor(_) | ScenarioUnknown(_)
            | BadConfig(_) | BadSpec(_) => ErrorClass::Usage,
            SingularInput | UnstableModel | RootFindingFailure | UnstableFrame
            | NoValidFrames | DegenerateBaseline | NonFiniteInput => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            hound::Error::FormatError(msg) => Error::UnsupportedFormat {
                field: "header",
                value: msg.to_string(),
                expected: "RIFF/WAVE",
            },
            hound::Error::Unsupported => Error::UnsupportedFormat {
                field: "format",
                value: "unsupported".into(),
                expected: "PCM",
            },
            other => Error::UnsupportedFormat {
                field: "header",
                value: other.to_string(),
                expected: "PCM 16-bit mono",
            },
        }
    }
}
