use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("invalid sample `{id}`: {msg}")]
    InvalidSample { id: String, msg: String },

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("distribution axis mismatch: {0} vs {1}")]
    AxisMismatch(String, String),

    #[error("distribution undefined for an empty dataset")]
    EmptyDataset,

    #[error("KL divergence is infinite: p({0}) > 0 where m({0}) = 0")]
    DivergenceInfinite(String),

    #[error("entropy undefined: mistake-type vocabulary has {0} labels (need at least 2)")]
    UndefinedEntropy(usize),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("provider unavailable after {attempts} attempts: {msg}")]
    ProviderUnavailable { attempts: u32, msg: String },

    #[error("format error for template `{template}`: {msg}; raw output: {raw}")]
    Format {
        template: String,
        msg: String,
        raw: String,
    },

    #[error("expansion failed for sample `{0}`: no usable candidate")]
    ExpansionFailed(String),

    #[error("generation failed: {0}")]
    GenerationFailed(String),

    #[error("mistake-type mining failed: {0}")]
    MiningFailed(String),

    #[error("rating failed for sample `{0}`: no judge round parsed")]
    RatingFailed(String),

    #[error("exact solver cap exceeded: {vars} decision variables > cap {cap}")]
    SolverCapExceeded { vars: usize, cap: usize },

    #[error("sandbox environment error: {0}")]
    Sandbox(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
