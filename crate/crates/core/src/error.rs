use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid atom number, trajectory count, grid size or similar.
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// `⟨J_x⟩` is zero or statistically indistinguishable from zero.
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    /// Homodyne record carries no variance, so no feedback gain exists.
    #[error("degenerate homodyne record: {0}")]
    DegenerateRecord(String),

    /// Request exceeds what an exact reference calculation supports.
    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("optimization failed: {reason} ({evaluations} evaluations)")]
    OptimizationFailed { reason: String, evaluations: usize },

    #[error("non-finite amplitude after {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
