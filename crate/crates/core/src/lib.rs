pub mod distributions;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod log_tensor;
pub mod model;
pub mod oracle;
pub mod proposals;
pub mod training;
pub mod verify;

pub use error::{Error, GraphError, Result};

// The guide's chapters run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/log-tensors.md")]
    mod log_tensors {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
