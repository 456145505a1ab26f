//! Self-checks of the estimators against the slow oracles, grouped into the
//! suites the command line exposes.

pub mod fixtures;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::estimator::{log_evidence, log_evidence_global, smc_log_evidence, FactorSet};
use crate::experiments::{build_ts_single, enumerate_evidence, exact_log_evidence};
use crate::model::{Dataset, GradientStore, ModelGraph, NodeData};
use crate::oracle::{
    central_difference, expected_evidence, explicit_log_evidence, explicit_rws_gradients, relative_error,
};
use crate::proposals::{ProposalGraph, ProposalKind, SampleBatch};
use crate::training::{rws_update, rws_update_global, RwsGradients};

use fixtures::{discrete_pair, random_instance, Instance};

/// Relative-error floor for finite-difference comparisons.
pub const FD_FLOOR: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The compared quantity, e.g. a maximum error.
    pub measured: f64,
    pub threshold: f64,
    pub seconds: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, threshold: f64, seconds: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: measured <= threshold,
            measured,
            threshold,
            seconds,
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e} (limit {:.1e}, {:.2}s){}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.seconds,
            if self.detail.is_empty() { "" } else { "; " },
            self.detail
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Unbiasedness,
    Equivalence,
    Gradients,
    Bounds,
    Complexity,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Unbiasedness,
        Suite::Equivalence,
        Suite::Gradients,
        Suite::Bounds,
        Suite::Complexity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Unbiasedness => "unbiasedness",
            Suite::Equivalence => "equivalence",
            Suite::Gradients => "gradients",
            Suite::Bounds => "bounds",
            Suite::Complexity => "complexity",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown verify suite `{s}`")))
    }
}

/// Sizes of the verify suites.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Random instances for the contraction check.
    pub contraction_instances: usize,
    /// Random instances for the update-form check.
    pub update_instances: usize,
    /// Draws per method and K in the bound check.
    pub bound_draws: usize,
    /// K of the large-sample convergence check.
    pub large_k: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            contraction_instances: 200,
            update_instances: 50,
            bound_draws: 10_000,
            large_k: 10_000,
        }
    }
}

pub fn run_suite(suite: Suite, config: &VerifyConfig) -> Result<Vec<Check>> {
    match suite {
        Suite::Unbiasedness => unbiasedness(config.seed),
        Suite::Equivalence => Ok(vec![
            contraction_equivalence(config.seed, config.contraction_instances)?,
            update_equivalence(config.seed, config.update_instances)?,
        ]),
        Suite::Gradients => Ok(vec![distribution_gradients(config.seed)?, update_gradients(config.seed)?]),
        Suite::Bounds => bounds(config.seed, config.bound_draws, config.large_k),
        Suite::Complexity => complexity(config.seed),
    }
}

fn kind_name(kind: ProposalKind) -> &'static str {
    match kind {
        ProposalKind::Global => "global",
        ProposalKind::Tmc => "tmc",
        ProposalKind::Mp => "mp",
    }
}

/// `E[P̂]` over every batch the sampler can draw, against the enumerated
/// evidence, on the two-latent discrete model at K = 2, for both
/// observations and every proposal kind.
pub fn unbiasedness(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for kind in [ProposalKind::Mp, ProposalKind::Tmc, ProposalKind::Global] {
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        let mut detail = String::new();
        for x in [0.0, 1.0] {
            let inst = discrete_pair(&mut rng, kind, x)?;
            let exact = enumerate_evidence(&inst.model, &inst.data)?.exp();
            let expected = expected_evidence(&inst.model, &inst.q, &inst.data, 2)?;
            worst = worst.max((expected - exact).abs());
            detail.push_str(&format!("x={x}: E[P̂]={expected:.12} P(x)={exact:.12} "));
        }
        out.push(Check::at_most(
            &format!("unbiasedness/{}", kind_name(kind)),
            worst,
            1e-10,
            start.elapsed().as_secs_f64(),
            detail.trim_end().to_string(),
        ));
    }
    Ok(out)
}

fn random_batch(inst: &Instance, k: usize, rng: &mut ChaCha8Rng) -> Result<SampleBatch> {
    SampleBatch::sample(&inst.model, &inst.q, k, rng)
}

fn random_kind(rng: &mut ChaCha8Rng) -> ProposalKind {
    [ProposalKind::Mp, ProposalKind::Tmc, ProposalKind::Global][rng.random_range(0..3)]
}

/// Contraction against the explicit `(1/K^n) Σ_k r_k` on random models with
/// at most three latents and K ≤ 4.
pub fn contraction_equivalence(seed: u64, instances: usize) -> Result<Check> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for _ in 0..instances {
        let kind = random_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 3, true)?;
        let k = rng.random_range(1..=4);
        let batch = random_batch(&inst, k, &mut rng)?;
        let fs = FactorSet::build(&inst.model, &batch, &inst.data)?;
        let fast = log_evidence(&fs)?.log_value;
        let slow = explicit_log_evidence(&inst.model, &inst.q, &batch, &inst.data)?;
        let err = if fast == slow { 0.0 } else { (fast - slow).abs() };
        if err.is_nan() {
            worst = f64::INFINITY;
        } else {
            worst = worst.max(err);
        }
        compared += 1;
    }
    Ok(Check::at_most(
        "equivalence/contraction",
        worst,
        1e-12,
        start.elapsed().as_secs_f64(),
        format!("{compared} instances"),
    ))
}

fn max_abs_diff(a: &GradientStore, b: &GradientStore) -> f64 {
    a.flat()
        .iter()
        .zip(b.flat())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn fast_updates(inst: &Instance, batch: &SampleBatch) -> Result<RwsGradients> {
    if batch.kind() == ProposalKind::Global {
        rws_update_global(&inst.model, &inst.q, batch, &inst.data)
    } else {
        let fs = FactorSet::build(&inst.model, batch, &inst.data)?;
        rws_update(&inst.model, &inst.q, batch, &fs)
    }
}

/// The factor-weight updates against the explicit weighted sum of
/// per-combination gradients.
pub fn update_equivalence(seed: u64, instances: usize) -> Result<Check> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    while compared < instances {
        let kind = random_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 3, true)?;
        let k = rng.random_range(1..=3);
        let batch = random_batch(&inst, k, &mut rng)?;
        let fast = match fast_updates(&inst, &batch) {
            Err(Error::DegenerateEvidence) => continue,
            other => other?,
        };
        let slow = explicit_rws_gradients(&inst.model, &inst.q, &batch, &inst.data)?;
        let d = max_abs_diff(&fast.theta, &slow.theta).max(max_abs_diff(&fast.phi, &slow.phi));
        worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
        compared += 1;
    }
    Ok(Check::at_most(
        "equivalence/updates",
        worst,
        1e-8,
        start.elapsed().as_secs_f64(),
        format!("{compared} instances"),
    ))
}

/// Score functions of every distribution against central differences of
/// the log-density.
pub fn distribution_gradients(seed: u64) -> Result<Check> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let cases = [
            (
                Distribution::normal_log_var(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0))?,
                rng.random_range(-3.0..3.0),
            ),
            (
                Distribution::categorical_logits(&[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ])?,
                rng.random_range(0..3) as f64,
            ),
            (
                Distribution::bernoulli_logit(rng.random_range(-3.0..3.0))?,
                rng.random_range(0..2) as f64,
            ),
            (
                Distribution::negative_binomial(130.0, rng.random_range(-5.0..0.0))?,
                rng.random_range(0..40) as f64,
            ),
        ];
        for (d, x) in cases {
            let analytic = d.grad_log_prob(x)?;
            let p = d.params();
            for (i, a) in analytic.iter().enumerate() {
                let fd = central_difference(&p, i, FD_STEP, |q| d.with_params(q).map_or(f64::NAN, |e| e.log_prob(x)));
                worst = worst.max(relative_error(*a, fd, FD_FLOOR));
            }
        }
    }
    Ok(Check::at_most(
        "gradients/distributions",
        worst,
        1e-5,
        start.elapsed().as_secs_f64(),
        "Normal, Categorical, Bernoulli, NegativeBinomial".into(),
    ))
}

fn batch_log_evidence(model: &ModelGraph, batch: &SampleBatch, data: &Dataset) -> f64 {
    FactorSet::build(model, batch, data)
        .and_then(|fs| log_evidence(&fs))
        .map_or(f64::NAN, |e| e.log_value)
}

/// Finite-difference check of one batch: `Δθ = ∂ log P̂ / ∂θ` and
/// `Δφ = -∂ log P̂ / ∂φ` with the particles held fixed.
pub fn fd_update_error(inst: &Instance, batch: &SampleBatch) -> Result<f64> {
    let g = fast_updates(inst, batch)?;
    let mut worst: f64 = 0.0;
    let theta0 = inst.model.theta().flat();
    let analytic = g.theta.flat();
    for i in 0..theta0.len() {
        let mut model = inst.model.clone();
        let fd = central_difference(&theta0, i, FD_STEP, |t| {
            model.theta_mut().set_flat(t).expect("same length");
            batch_log_evidence(&model, batch, &inst.data)
        });
        worst = worst.max(relative_error(analytic[i], fd, FD_FLOOR));
    }
    let phi0 = inst.q.phi().flat();
    let analytic = g.phi.flat();
    let values: Vec<Vec<f64>> = batch.latents().iter().map(|l| l.values.clone()).collect();
    let ancestors: Vec<Vec<Vec<usize>>> = batch.latents().iter().map(|l| l.ancestors.clone()).collect();
    for i in 0..phi0.len() {
        let mut q: ProposalGraph = inst.q.clone();
        let fd = central_difference(&phi0, i, FD_STEP, |p| {
            q.phi_mut().set_flat(p).expect("same length");
            SampleBatch::from_particles(&inst.model, &q, batch.k(), values.clone(), ancestors.clone())
                .map_or(f64::NAN, |b| batch_log_evidence(&inst.model, &b, &inst.data))
        });
        worst = worst.max(relative_error(analytic[i], -fd, FD_FLOOR));
    }
    Ok(if worst.is_nan() { f64::INFINITY } else { worst })
}

/// Wake-phase updates against finite differences of the fixed-batch
/// log-evidence, on random instances of every proposal kind.
pub fn update_gradients(seed: u64) -> Result<Check> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0004);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    while compared < 30 {
        let kind = random_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 3, true)?;
        let k = rng.random_range(1..=4);
        let batch = random_batch(&inst, k, &mut rng)?;
        match fd_update_error(&inst, &batch) {
            Err(Error::DegenerateEvidence) => continue,
            r => worst = worst.max(r?),
        }
        compared += 1;
    }
    Ok(Check::at_most(
        "gradients/updates",
        worst,
        1e-4,
        start.elapsed().as_secs_f64(),
        format!("{compared} instances, floor {FD_FLOOR}"),
    ))
}

/// The evidence estimators compared by the bound check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Mp,
    Tmc,
    Global,
    Smc,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Mp, Estimator::Tmc, Estimator::Global, Estimator::Smc];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Mp => "mp",
            Estimator::Tmc => "tmc",
            Estimator::Global => "global",
            Estimator::Smc => "smc",
        }
    }
}

/// One `log P̂` draw with the proposal's own scheme.
pub fn draw_log_evidence(
    model: &ModelGraph,
    q: &ProposalGraph,
    data: &Dataset,
    estimator: Estimator,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let kind = match estimator {
        Estimator::Smc => return smc_log_evidence(model, data, k, rng),
        Estimator::Mp => ProposalKind::Mp,
        Estimator::Tmc => ProposalKind::Tmc,
        Estimator::Global => ProposalKind::Global,
    };
    let q = if q.kind() == kind { q.clone() } else { q.with_kind(kind) };
    let batch = SampleBatch::sample(model, &q, k, rng)?;
    if kind == ProposalKind::Global {
        return Ok(log_evidence_global(model, &batch, data)?.log_value);
    }
    let fs = FactorSet::build(model, &batch, data)?;
    Ok(log_evidence(&fs)?.log_value)
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// The single-observation chain with `x = 0`.
pub fn ts_single_instance(n: usize) -> Result<(ModelGraph, ProposalGraph, Dataset)> {
    let (model, q) = build_ts_single(n)?;
    Ok((model, q, Dataset::new(vec![NodeData::new(vec![0.0], Vec::new())])))
}

/// Jensen bound for every estimator and K ∈ {3, 10, 30} on the N = 30
/// chain, then large-K convergence of the global and MP estimates.
pub fn bounds(seed: u64, draws: usize, large_k: usize) -> Result<Vec<Check>> {
    let (model, q, data) = ts_single_instance(30)?;
    let exact = exact_log_evidence(&model, &data)?;
    let mut out = Vec::new();
    for est in Estimator::ALL {
        for k in [3, 10, 30] {
            let start = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let xs = (0..draws)
                .map(|_| draw_log_evidence(&model, &q, &data, est, k, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (mean, se) = mean_se(&xs);
            out.push(Check::at_most(
                &format!("bounds/jensen/{}/K={k}", est.as_str()),
                mean - exact,
                3.0 * se,
                start.elapsed().as_secs_f64(),
                format!("mean {mean:.5} exact {exact:.5} se {se:.2e} over {draws} draws"),
            ));
        }
    }
    for est in [Estimator::Global, Estimator::Mp] {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(large_k as u64);
        let v = draw_log_evidence(&model, &q, &data, est, large_k, &mut rng)?;
        out.push(Check::at_most(
            &format!("bounds/convergence/{}/K={large_k}", est.as_str()),
            (v - exact).abs(),
            0.05,
            start.elapsed().as_secs_f64(),
            format!("estimate {v:.5} exact {exact:.5}"),
        ));
    }
    Ok(out)
}

/// Wall-clock of one MP evidence pass (sampling, factors, contraction) on
/// the N = 30 chain, as the median of `reps` runs.
pub fn time_mp_pass(k: usize, reps: usize, seed: u64) -> Result<(f64, usize)> {
    let (model, q, data) = ts_single_instance(30)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(reps);
    let mut peak = 0;
    for _ in 0..reps {
        let start = Instant::now();
        let batch = SampleBatch::sample(&model, &q, k, &mut rng)?;
        let fs = FactorSet::build(&model, &batch, &data)?;
        let est = log_evidence(&fs)?;
        times.push(start.elapsed().as_secs_f64());
        peak = est.plan.map_or(0, |p| p.peak_size());
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], peak))
}

/// Least-squares slope of `log y` on `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runtime and peak factor size of the MP pass on the N = 30 chain at
/// K = 128, and the fitted exponent of K over K ∈ {128, 256, 512}.
pub fn complexity(seed: u64) -> Result<Vec<Check>> {
    let n = 30usize;
    let ks = [128usize, 256, 512];
    let mut times = Vec::new();
    let mut peaks = Vec::new();
    for &k in &ks {
        let (t, peak) = time_mp_pass(k, 9, seed)?;
        times.push(t);
        peaks.push(peak);
    }
    let slope = log_log_slope(&ks.map(|k| k as f64), &times);
    let bound = n * 128 * 128;
    Ok(vec![
        Check::at_most("complexity/time/K=128", times[0], 1.0, times[0], String::new()),
        Check::at_most(
            "complexity/peak/K=128",
            peaks[0] as f64,
            bound as f64,
            0.0,
            format!("largest tensor {} entries, N·K² = {bound}", peaks[0]),
        ),
        Check {
            name: "complexity/exponent".into(),
            passed: (1.7..=2.3).contains(&slope),
            measured: slope,
            threshold: 2.3,
            seconds: times.iter().sum(),
            detail: format!(
                "fit over K = {ks:?}: {}",
                times.iter().map(|t| format!("{:.1}ms", t * 1e3)).collect::<Vec<_>>().join(", ")
            ),
        },
    ])
}
