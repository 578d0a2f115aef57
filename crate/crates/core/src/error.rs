use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: not valid UTF-8 text")]
    Decode { path: String },

    #[error("{path}: syntax error near line {line}")]
    Syntax { path: String, line: usize },

    #[error("schema error at {0}")]
    Schema(String),

    #[error("repository split overlap: {}", .0.join(", "))]
    SplitOverlap(Vec<String>),

    #[error("fetch failed for {url}: {reason}")]
    Fetch { url: String, reason: String },

    #[error("revision {revision} not found in {url}")]
    RevisionNotFound { url: String, revision: String },

    #[error("no eligible caller for {0}")]
    NoEligibleCaller(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("caller {caller} has no call site on {target}")]
    NoCallSite { caller: String, target: String },

    #[error("no pool snippet within {tolerance} of the caller length")]
    NoLengthMatch { tolerance: f64 },

    #[error("could not parse input: {0}")]
    ParseFailure(String),

    #[error("rewrite verification failed: {0}")]
    RewriteVerificationFailure(String),

    #[error("task {0} has no caller and synthesis is disabled")]
    MissingCaller(String),

    #[error("fragment cannot be normalized: {0}")]
    FragmentParse(String),

    #[error("fragment does not call {0}")]
    NoTargetCall(String),

    #[error("sandbox backend unavailable: {0}")]
    SandboxUnavailable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("reference text is empty")]
    EmptyReference,

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
