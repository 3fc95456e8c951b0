use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid geometry in {op}: {detail}")]
    Geometry { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model graph: {0}")]
    Graph(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("invalid prune site {layer}: {reason}")]
    Site { layer: String, reason: String },

    #[error("pruning `{layer}` would break add_junction `{junction}`")]
    JunctionConstraint { layer: String, junction: String },

    #[error("blob `{blob}`: {reason}")]
    Blob { blob: String, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("site `{site}`: {source}")]
    AtSite {
        site: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_site(site: &str, err: Error) -> Self {
        Error::AtSite {
            site: site.to_string(),
            source: Box::new(err),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
