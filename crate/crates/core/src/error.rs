use thiserror::Error;

/// Failure modes of the model routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} = {value} outside its domain ({domain})")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("spam gas {spam_gas} exceeds block capacity {capacity}")]
    InfeasibleSpam { spam_gas: f64, capacity: f64 },

    #[error("price {price} exceeds the marginal valuation {valuation} of the included quantity")]
    InconsistentPrice { price: f64, valuation: f64 },

    #[error("price floor is zero, so spam at the floor is unbounded")]
    UnboundedPlateau,

    #[error("{solver} did not converge: {detail}")]
    NonConvergence { solver: &'static str, detail: String },
}

impl ModelError {
    pub(crate) fn domain(what: &'static str, value: impl Into<f64>, domain: &'static str) -> Self {
        ModelError::Domain {
            what,
            value: value.into(),
            domain,
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
