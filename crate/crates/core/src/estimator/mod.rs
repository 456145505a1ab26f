//! Evidence estimates from a sample batch.

mod factors;
mod smc;

use crate::error::{Error, Result};
use crate::log_tensor::{execute, log_mean_exp, ContractionPlan};
use crate::model::{Dataset, ModelGraph};
use crate::proposals::{ProposalKind, SampleBatch};

pub use factors::{FactorSet, FactorSource, NodeFactor};
pub use smc::smc_log_evidence;

/// A log-evidence estimate and the contraction that produced it.
#[derive(Clone, Debug)]
pub struct EvidenceEstimate {
    pub log_value: f64,
    pub kind: ProposalKind,
    pub plan: Option<ContractionPlan>,
    /// Per-draw `log P(x, z^k) - log Q(z^k)` of a global estimate.
    pub log_weights: Option<Vec<f64>>,
}

/// Contracts every factor. The batch kind decides which estimator this is.
///
/// A −∞ estimate is returned as such; callers decide whether it is an error.
pub fn log_evidence(fs: &FactorSet<'_>) -> Result<EvidenceEstimate> {
    let plan = fs.plan()?;
    let log_value = execute(&plan, &fs.refs())?;
    Ok(EvidenceEstimate {
        log_value,
        kind: fs.kind(),
        plan: Some(plan),
        log_weights: None,
    })
}

/// `log (1/K^n) Σ_k r_k` over every index combination, for TMC and MP batches.
pub fn log_evidence_mp(fs: &FactorSet<'_>) -> Result<EvidenceEstimate> {
    if fs.kind() == ProposalKind::Global {
        return Err(Error::Capability("a global batch has no per-latent sample axes".into()));
    }
    log_evidence(fs)
}

/// `log (1/K) Σ_k P(x, z^k) / Q(z^k)` for a global batch, summed per draw
/// without any contraction.
pub fn log_evidence_global(model: &ModelGraph, batch: &SampleBatch, data: &Dataset) -> Result<EvidenceEstimate> {
    if batch.kind() != ProposalKind::Global {
        return Err(Error::Capability("expected a global batch".into()));
    }
    let fs = FactorSet::build(model, batch, data)?;
    let k = batch.k();
    let mut logw = vec![0.0; k];
    for f in fs.factors() {
        let np = f.shape().len() - usize::from(f.axes().last().is_some_and(|a| a.is_sample()));
        let members: usize = f.shape()[..np].iter().product();
        let mut idx = vec![0; f.shape().len()];
        for m in 0..members {
            let mut rem = m;
            for d in (0..np).rev() {
                idx[d] = rem % f.shape()[d];
                rem /= f.shape()[d];
            }
            for (kk, w) in logw.iter_mut().enumerate() {
                if f.shape().len() > np {
                    idx[np] = kk;
                }
                *w += f.entry(&idx);
            }
        }
    }
    Ok(EvidenceEstimate {
        log_value: log_mean_exp(&logw),
        kind: ProposalKind::Global,
        plan: None,
        log_weights: Some(logw),
    })
}

/// `log P̂(train ∪ test) - log P̂(train)` on one batch: the self-normalized
/// posterior average of `P(test | z)`, scored with the batch's own estimator.
pub fn predictive_log_likelihood(
    model: &ModelGraph,
    batch: &SampleBatch,
    train: &Dataset,
    test: &Dataset,
) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let mut fs = FactorSet::build(model, batch, train)?;
    let base = log_evidence(&fs)?.log_value;
    if base == f64::NEG_INFINITY {
        return Err(Error::DegenerateEvidence);
    }
    fs.add_data(model, batch, test, true)?;
    let joint = log_evidence(&fs)?.log_value;
    Ok(joint - base)
}
