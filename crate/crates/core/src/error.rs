use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A function evaluation produced a NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The predicted cost of a run exceeds the configured budget.
    #[error("budget exceeded: {what} = {predicted} > {limit}")]
    Budget {
        what: &'static str,
        predicted: u128,
        limit: u128,
    },

    /// Checked integer arithmetic overflowed.
    #[error("integer overflow in {0}")]
    Overflow(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("the problem `{0}` does not provide {1}")]
    Unavailable(String, &'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
