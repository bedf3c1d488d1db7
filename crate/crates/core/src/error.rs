use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("generator is reducible: state {from} cannot reach state {to}")]
    Reducible { from: usize, to: usize },

    #[error("eigen-solver failed to converge after {iterations} iterations")]
    EigenSolver { iterations: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("integration blowup at step {step}, cell {cell}, term {term}")]
    Blowup {
        step: usize,
        cell: usize,
        term: &'static str,
    },

    #[error(
        "least-squares system is rank deficient along {directions:?}; \
         the data lack excitation, try a richer behavior policy or wider initial states"
    )]
    RankDeficient { directions: Vec<String> },

    #[error("zero sample variance: automatic bandwidth undefined, pass an explicit bandwidth")]
    ZeroVariance,
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    /// Short machine-friendly tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Reducible { .. } => "reducible_generator",
            Error::EigenSolver { .. } => "eigen_solver",
            Error::Numeric(_) => "numeric",
            Error::Blowup { .. } => "blowup",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::ZeroVariance => "zero_variance",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Collects validation failures so they can be reported at once.
#[derive(Debug, Default)]
pub struct Violations(Vec<String>);

impl Violations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }

    pub fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    pub fn extend(&mut self, other: Violations) {
        self.0.extend(other.0);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self.0))
        }
    }
}
