//! Slow reference computations used by tests and the `verify` suites.
//!
//! The contraction oracles enumerate index combinations and sum terms one at
//! a time, sharing no code with the planner, the executor, or the factor
//! builders. [`expected_evidence`] is the exception: it enumerates batches
//! and scores each one with the estimator under test.

mod enumerate;
mod explicit;
mod finite_diff;
mod unbiased;

pub use enumerate::{brute_force_log_contraction, brute_force_marginals};
pub use explicit::{explicit_log_evidence, explicit_posterior_moment, explicit_rws_gradients, explicit_weights};
pub use finite_diff::{central_difference, relative_error};
pub use unbiased::expected_evidence;
