use thiserror::Error;

pub type Result<T> = std::result::Result<T, MvocError>;

#[derive(Debug, Error)]
pub enum MvocError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular affine transform (|det| = {det:e})")]
    SingularTransform { det: f64 },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("timestep {t} outside [{lo}, {hi}]")]
    Range { t: usize, lo: usize, hi: usize },

    #[error("sigma {sigma} too large at t_prev={t_prev}: 1 - alpha_bar - sigma^2 = {residual}")]
    InvalidSigma {
        sigma: f64,
        t_prev: usize,
        residual: f64,
    },

    #[error("no dataset samples match condition {0:?}")]
    UnknownCondition(Vec<u32>),

    #[error("arity mismatch: expected {expected} terms, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("injection shape mismatch at {site}: {detail}")]
    InjectionShape { site: String, detail: String },

    #[error("latent cache has no entry for object {object} at t={t}")]
    CacheMiss { object: u32, t: usize },

    #[error("warping error undefined: every pixel is occluded")]
    UndefinedMetric,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid scene: {0}")]
    Spec(String),

    #[error("bad .vten data: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl MvocError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        MvocError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        MvocError::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the `mvoc` binary: 2 config, 3 I/O, 4 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            MvocError::Io { .. } | MvocError::Format(_) => 3,
            MvocError::SingularTransform { .. }
            | MvocError::InvalidSigma { .. }
            | MvocError::UndefinedMetric
            | MvocError::NonFinite(_) => 4,
            _ => 2,
        }
    }
}
