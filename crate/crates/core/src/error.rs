use thiserror::Error;

/// Errors raised anywhere along the simulate → extract → test chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("integration diverged at step {step} (non-finite state)")]
    IntegrationDiverged { step: u64 },

    #[error("low-pass cutoff {bandwidth} GHz is not below the Nyquist frequency {nyquist} GHz")]
    FilterDesign { bandwidth: f64, nyquist: f64 },

    #[error("sample spacing mismatch: trace dt = {trace} ns, kernel dt = {kernel} ns")]
    DtMismatch { trace: f64, kernel: f64 },

    #[error("trace of {samples} samples is shorter than one frame ({needed} samples)")]
    TraceTooShort { samples: usize, needed: usize },

    #[error("integration window of frame {frame} is empty after discretization")]
    EmptyWindow { frame: usize },

    #[error("degenerate frame: zero total energy")]
    DegenerateFrame,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no extractable entropy (h_min = {h_min}, P = {p_window})")]
    NoExtractableEntropy { h_min: f64, p_window: f64 },

    #[error("reduction factor {0} < 1 would expand the input")]
    ExpandingReduction(f64),

    #[error("seed length {got} does not equal m + n - 1 = {expected}")]
    SeedLength { expected: usize, got: usize },

    #[error("length mismatch: expected {expected} bits, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("von Neumann bootstrap short by {shortfall} seed bits")]
    SeedShortfall { shortfall: usize },

    #[error("sequence of {got} bits is too short for {test} (needs {needed})")]
    TooShort {
        test: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
