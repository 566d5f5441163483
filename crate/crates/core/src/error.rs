use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration is not on (S^2)^N: {0}")]
    NotOnManifold(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("noise intensity nu = 0 is unsupported: the Hopf-Cole constant is undefined without noise")]
    NoNoise,

    #[error(
        "value function vanished numerically ({context}); all samples underflowed. \
         This happens when lambda*nu^2 << delta*C_ext^2*(1+alpha^2): increase lambda or nu, or reduce delta"
    )]
    ValueVanished { context: String },

    #[error("log of non-positive estimate w = {0}; the value function is undefined (exponential underflow regime)")]
    NonPositiveEstimate(f64),

    #[error("numerical failure at grid index {step} (t = {time}): {source}")]
    StepFailure {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("control provider failed: {0}")]
    Control(String),

    #[error("unknown preset '{0}' (expected one of test1, test2, spin3, spin4-setup1, spin4-setup2, spin10)")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the user's configuration rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::NotOnManifold(_)
                | Error::InvalidParameter(_)
                | Error::NoNoise
                | Error::UnknownPreset(_)
                | Error::Config(_)
        )
    }
}
