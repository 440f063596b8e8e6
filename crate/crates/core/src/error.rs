use thiserror::Error;

/// Errors produced across the simulation library.
#[derive(Debug, Error)]
pub enum EscError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation error at f = {f}: {what}")]
    Evaluation { f: f64, what: String },

    #[error("missing capability: {0}")]
    Capability(String),

    #[error("integration error at t = {t}: {what}")]
    Integration { t: f64, what: String },

    #[error("state left the domain at t = {t} (|x| = {norm}, limit {limit})")]
    Divergence { t: f64, norm: f64, limit: f64 },

    #[error("filter diverged at t = {t}: {what}")]
    FilterDivergence { t: f64, what: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("unknown preset `{name}` (available: {available})")]
    Lookup { name: String, available: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = EscError> = std::result::Result<T, E>;
