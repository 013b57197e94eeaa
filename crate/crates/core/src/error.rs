use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input row. `line` is 1-based and counts the header.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("adjacency graph is disconnected ({} components: {})", .components.len(), summarize_components(.components))]
    Disconnected { components: Vec<Vec<String>> },

    #[error("{}district {district}: {what} is zero", plan_prefix(*.plan))]
    ZeroDenominator {
        plan: Option<usize>,
        district: usize,
        what: &'static str,
    },

    #[error("enumeration is capped at {cap} precincts, map has {precincts}")]
    TooLarge { cap: usize, precincts: usize },

    #[error("plan sampler gave up on plan {plan} after {attempts} spanning-tree draws")]
    SamplerExhausted { plan: usize, attempts: usize },
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }

    /// Attaches a plan index to evaluation errors raised while scanning an ensemble.
    pub(crate) fn in_plan(self, index: usize) -> Self {
        match self {
            Error::ZeroDenominator {
                plan: None,
                district,
                what,
            } => Error::ZeroDenominator {
                plan: Some(index),
                district,
                what,
            },
            other => other,
        }
    }
}

fn plan_prefix(plan: Option<usize>) -> String {
    match plan {
        Some(i) => format!("plan {}: ", i + 1),
        None => String::new(),
    }
}

fn summarize_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| {
            let shown: Vec<&str> = c.iter().take(5).map(String::as_str).collect();
            if c.len() > shown.len() {
                format!("[{}, ... ({} precincts)]", shown.join(", "), c.len())
            } else {
                format!("[{}]", shown.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
