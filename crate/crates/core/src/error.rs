use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("wall `{wall}` references story {story} but the building has {n_stories} stories")]
    StoryOutOfRange {
        wall: String,
        story: usize,
        n_stories: usize,
    },

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("rayleigh damping target frequencies coincide ({0} rad/s)")]
    CoincidentFrequencies(f64),

    #[error("newton iteration failed at step {step} (t = {time} s): residual {residual:e} kN")]
    NewtonDivergence { step: usize, time: f64, residual: f64 },

    #[error("non-finite response at step {step} (t = {time} s)")]
    NonFiniteResponse { step: usize, time: f64 },

    #[error("error transfer matrix is singular at omega = {omega} rad/s")]
    SingularTransfer { omega: f64 },

    #[error("non-finite error spectral density at omega = {omega} rad/s (undamped resonance on grid?)")]
    NonFiniteIntegrand { omega: f64 },

    #[error("trace is empty")]
    EmptyTrace,

    #[error("high-pass corner {corner_hz} Hz is too high for sample interval {dt} s")]
    CornerTooHigh { corner_hz: f64, dt: f64 },

    #[error("resampling from dt = {dt} s to {target} s is outside the supported ratio range [1/8, 8]")]
    ResampleRatio { dt: f64, target: f64 },

    #[error("noise intensity for channel `{0}` is negative")]
    NegativeIntensity(String),

    #[error("channel `{channel}` has unit `{found}`, expected `{expected}`")]
    UnitMismatch {
        channel: String,
        expected: &'static str,
        found: String,
    },

    #[error("unrestrained degrees of freedom: {0:?}")]
    Unrestrained(Vec<usize>),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
