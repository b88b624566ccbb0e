use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the routing library and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("node {0} is in the oracle layer and has no uplinks")]
    NoUplinks(u32),

    #[error("unknown node {0}")]
    UnknownNode(u32),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("trace {path}:{line}: {reason}")]
    Trace {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("non-finite loss {value} for expert {expert} at node {node}, task {task}")]
    NonFiniteLoss {
        node: u32,
        task: usize,
        expert: usize,
        value: f64,
    },

    #[error("reach probability {rho} at node {node} is not positive")]
    ReachProbability { node: u32, rho: f64 },

    #[error("routing invariant violated: {0}")]
    Routing(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
