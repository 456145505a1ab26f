//! Log-domain tensors over named axes and their contraction.
//!
//! A [`LogFactor`] holds log-probabilities indexed by sample axes (the K
//! particles of one latent) and plate axes (members of a replicated block).
//! [`plan_contraction`] orders the reductions so that no intermediate grows
//! beyond what the graph structure requires, and [`execute`] runs the plan.

mod axis;
mod contract;
mod factor;
mod plan;

pub use axis::{AxisInfo, AxisKind, AxisName, AxisTable};
pub use contract::{
    contract, execute, execute_traced, posterior_marginals, FactorRef, LazyFactor, Trace,
};
pub use factor::{FactorSignature, LogFactor, Reduction, Weights};
pub use plan::{plan_contraction, plan_with_order, ContractionPlan, PlanStep};

pub(crate) use factor::broadcast_strides;

/// `ln Σ exp(x)`, computed relative to the maximum. Empty or all `-inf` input
/// gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln((1/n) Σ exp(x))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    // Dividing before the log keeps uniform rows exact.
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}
