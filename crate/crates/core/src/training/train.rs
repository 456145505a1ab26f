use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{predictive_log_likelihood, FactorSet};
use crate::model::{Dataset, ModelGraph};
use crate::proposals::{ProposalGraph, SampleBatch};

use super::adam::{AdamConfig, AdamState};
use super::rws::rws_update;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub iters: usize,
    pub seed: u64,
    /// Held-out scoring happens after every `eval_every` updates.
    pub eval_every: usize,
    /// Batches averaged per held-out score.
    pub eval_draws: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 10,
            iters: 0,
            seed: 0,
            eval_every: 100,
            eval_draws: 1,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub log_phat: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    /// Number of updates applied before scoring.
    pub iteration: usize,
    pub pred_ll: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub seed: u64,
    pub records: Vec<TrainRecord>,
    pub evals: Vec<EvalRecord>,
    /// Iterations whose estimate was zero, so no update was applied.
    pub skipped: Vec<usize>,
}

/// Sample, build factors, compute the wake-phase updates, take an Adam step;
/// repeated `iters` times with the proposal's own sampling scheme.
///
/// Training draws come from `ChaCha8(seed)`; held-out scoring uses a separate
/// stream of the same seed so that the evaluation cadence does not change the
/// training trajectory.
pub fn train(
    model: &mut ModelGraph,
    q: &mut ProposalGraph,
    data: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    if config.k == 0 || config.eval_every == 0 || config.eval_draws == 0 {
        return Err(Error::InvalidValue("K, eval cadence and eval draws must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(1);
    let mut theta_opt = AdamState::new(model.theta(), config.adam);
    let mut phi_opt = AdamState::new(q.phi(), config.adam);
    let mut trace = TrainTrace {
        seed: config.seed,
        ..TrainTrace::default()
    };
    for it in 0..config.iters {
        let start = Instant::now();
        let batch = SampleBatch::sample(model, q, config.k, &mut rng)?;
        let fs = FactorSet::build(model, &batch, data)?;
        match rws_update(model, q, &batch, &fs) {
            Ok(g) => {
                if !g.theta.is_finite() || !g.phi.is_finite() {
                    return Err(Error::Parameter(format!("non-finite gradient at iteration {it}")));
                }
                if !model.theta().is_empty() {
                    theta_opt.step(model.theta_mut(), &g.theta)?;
                }
                if !q.phi().is_empty() {
                    phi_opt.step(q.phi_mut(), &g.phi)?;
                }
                trace.records.push(TrainRecord {
                    iteration: it,
                    log_phat: g.log_evidence,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
            Err(Error::DegenerateEvidence) => {
                log::debug!("iteration {it}: zero evidence estimate, skipped");
                trace.skipped.push(it);
            }
            Err(e) => return Err(e),
        }
        if (it + 1) % config.eval_every == 0 && !test.is_empty() {
            let pred_ll = evaluate(model, q, data, test, config, &mut eval_rng)?;
            trace.evals.push(EvalRecord {
                iteration: it + 1,
                pred_ll,
            });
        }
    }
    Ok(trace)
}

/// Mean held-out predictive log-likelihood over `eval_draws` fresh batches.
/// Draws whose training estimate is zero are left out.
pub fn evaluate(
    model: &ModelGraph,
    q: &ProposalGraph,
    data: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for _ in 0..config.eval_draws {
        let batch = SampleBatch::sample(model, q, config.k, rng)?;
        match predictive_log_likelihood(model, &batch, data, test) {
            Ok(v) => {
                total += v;
                used += 1;
            }
            Err(Error::DegenerateEvidence) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(if used == 0 {
        f64::NEG_INFINITY
    } else {
        total / used as f64
    })
}
