use thiserror::Error;

/// Errors surfaced by model construction and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed network, demand table, state vector, or problem dimensions.
    #[error("structural error: {0}")]
    Structure(String),

    /// A flow was evaluated outside the domain of its active branch.
    #[error("domain error on link {link}: flow {flow} outside [{lower}, {upper}]")]
    Domain {
        link: String,
        flow: f64,
        lower: f64,
        upper: f64,
    },

    /// A box or interval of zero width was handed to an operation that needs width.
    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
