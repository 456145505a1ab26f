//! Executes a run configuration and writes its CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mpinfer::experiments::{DataSource, Experiment, ExperimentSpec};
use mpinfer::proposals::ProposalKind;
use mpinfer::training::{train, AdamConfig, TrainConfig};
use mpinfer::verify::{draw_log_evidence, mean_se, Estimator};
use mpinfer::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Method, RunConfig};

pub const CSV_HEADER: &str = "method,K,seed,iteration,metric,value";
pub const SUMMARY_HEADER: &str = "method,K,metric,iteration,seeds,mean,se";

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub iteration: usize,
    pub metric: &'static str,
    pub value: f64,
}

/// Per-(method, K) mean and standard error over seeds of each metric's
/// final value.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub k: usize,
    pub metric: &'static str,
    pub iteration: usize,
    pub seeds: usize,
    pub mean: f64,
    pub se: f64,
}

pub fn experiment_spec(config: &RunConfig) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(config.experiment);
    spec.source = match &config.data {
        Some(p) => DataSource::File(p.clone()),
        None => DataSource::Synthetic(config.data_seed),
    };
    spec.split_seed = config.data_seed;
    spec.items = config.items.clone();
    if let Some(u) = config.users {
        spec.users = u;
    }
    if let Some(f) = config.films_per_user {
        spec.films_per_user = f;
    }
    if let Some(n) = config.n {
        spec.n = n;
    }
    spec
}

/// Runs one seed at one K.
pub fn run_seed(config: &RunConfig, e: &Experiment, k: usize, seed: u64) -> Result<Vec<Row>> {
    let row = |iteration, metric, value| Row {
        method: config.method,
        k,
        seed,
        iteration,
        metric,
        value,
    };
    let mut rows = Vec::new();
    if config.method.trains() {
        let kind = if config.method == Method::MpRws {
            ProposalKind::Mp
        } else {
            ProposalKind::Global
        };
        let mut model = e.model.clone();
        let mut q = e.proposal.with_kind(kind);
        let tc = TrainConfig {
            k,
            iters: config.iters,
            seed,
            eval_every: config.eval_every,
            eval_draws: config.eval_draws,
            adam: AdamConfig::with_lr(config.lr),
        };
        let trace = train(&mut model, &mut q, &e.train, &e.test, &tc)?;
        for r in &trace.records {
            rows.push(row(r.iteration, "log-phat", r.log_phat));
            if config.timing {
                rows.push(row(r.iteration, "iter-seconds", r.seconds));
            }
        }
        // Held-out scores are indexed by updates applied; the stable sort
        // puts them after the training rows of the same index.
        rows.extend(trace.evals.iter().map(|ev| row(ev.iteration, "pred-ll", ev.pred_ll)));
        rows.sort_by_key(|r| r.iteration);
        return Ok(rows);
    }
    let est = match config.method {
        Method::MpViEval => Estimator::Mp,
        Method::TmcViEval => Estimator::Tmc,
        Method::GlobalIwaeEval => Estimator::Global,
        _ => Estimator::Smc,
    };
    let q = match est {
        Estimator::Mp => e.proposal.with_kind(ProposalKind::Mp),
        Estimator::Tmc => e.proposal.with_kind(ProposalKind::Tmc),
        _ => e.proposal.with_kind(ProposalKind::Global),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut total = 0.0;
    for _ in 0..config.draws {
        total += draw_log_evidence(&e.model, &q, &e.train, est, k, &mut rng)?;
    }
    rows.push(row(0, "log-phat", total / config.draws as f64));
    Ok(rows)
}

/// Runs every (K, seed) job, on `parallel_seeds` workers when asked. Results
/// come back in (K, seed) order whatever the scheduling.
pub fn run_jobs(config: &RunConfig, e: &Experiment) -> Vec<(usize, u64, Result<Vec<Row>>)> {
    let jobs: Vec<(usize, u64)> = config
        .ks
        .iter()
        .flat_map(|&k| config.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let slots: Vec<Mutex<Option<Result<Vec<Row>>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.parallel_seeds.min(jobs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(k, seed)) = jobs.get(i) else { break };
                let r = run_seed(config, e, k, seed);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    jobs.into_iter()
        .zip(slots)
        .map(|((k, seed), slot)| (k, seed, slot.into_inner().unwrap().expect("every job runs")))
        .collect()
}

pub fn format_rows(rows: &[Row]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.method.as_str(),
            r.k,
            r.seed,
            r.iteration,
            r.metric,
            r.value
        );
    }
    s
}

pub fn summarize(rows: &[Row]) -> Vec<SummaryRow> {
    // Final value per (method, K, metric, seed).
    let mut last: BTreeMap<(Method, usize, &'static str, u64), (usize, f64)> = BTreeMap::new();
    for r in rows {
        let e = last.entry((r.method, r.k, r.metric, r.seed)).or_insert((r.iteration, r.value));
        if r.iteration >= e.0 {
            *e = (r.iteration, r.value);
        }
    }
    let mut groups: BTreeMap<(Method, usize, &'static str), (usize, Vec<f64>)> = BTreeMap::new();
    for ((method, k, metric, _), (it, v)) in last {
        let g = groups.entry((method, k, metric)).or_insert((0, Vec::new()));
        g.0 = g.0.max(it);
        g.1.push(v);
    }
    groups
        .into_iter()
        .map(|((method, k, metric), (iteration, vals))| {
            let (mean, se) = mean_se(&vals);
            SummaryRow {
                method,
                k,
                metric,
                iteration,
                seeds: vals.len(),
                mean,
                se,
            }
        })
        .collect()
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method.as_str(),
            r.k,
            r.metric,
            r.iteration,
            r.seeds,
            r.mean,
            r.se
        );
    }
    s
}

pub fn csv_path(out: &Path, method: Method, k: usize) -> PathBuf {
    out.join(format!("{}_K{k}.csv", method.as_str()))
}

pub fn summary_path(out: &Path, method: Method) -> PathBuf {
    out.join(format!("{}_summary.csv", method.as_str()))
}

/// Runs the configuration and writes its files. Returns the summary and
/// the seeds that failed, with their errors.
pub fn execute(config: &RunConfig) -> Result<(Vec<SummaryRow>, Vec<String>)> {
    let e = experiment_spec(config).build()?;
    let results = run_jobs(config, &e);
    fs::create_dir_all(&config.out)?;
    let mut failures = Vec::new();
    let mut all = Vec::new();
    for &k in &config.ks {
        let mut rows = Vec::new();
        for (_, seed, r) in results.iter().filter(|(kk, _, _)| *kk == k) {
            match r {
                Ok(v) => rows.extend(v.iter().cloned()),
                Err(err) => failures.push(format!("K={k} seed={seed}: {err}")),
            }
        }
        fs::write(csv_path(&config.out, config.method, k), format_rows(&rows))?;
        all.extend(rows);
    }
    let summary = summarize(&all);
    fs::write(summary_path(&config.out, config.method), format_summary(&summary))?;
    Ok((summary, failures))
}
