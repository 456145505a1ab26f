//! Run configuration: a flat `key=value` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mpinfer::experiments::ExperimentId;

/// Keys accepted in a config file. Flags use the same names.
pub const KEYS: [&str; 18] = [
    "experiment",
    "method",
    "K",
    "iters",
    "seeds",
    "lr",
    "out",
    "parallel-seeds",
    "draws",
    "eval-every",
    "eval-draws",
    "timing",
    "data",
    "items",
    "data-seed",
    "users",
    "films-per-user",
    "N",
];

/// Problems with the configuration itself; the process exits with 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    MpRws,
    GlobalRws,
    MpViEval,
    TmcViEval,
    GlobalIwaeEval,
    SmcEval,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::MpRws,
        Method::GlobalRws,
        Method::MpViEval,
        Method::TmcViEval,
        Method::GlobalIwaeEval,
        Method::SmcEval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MpRws => "mp-rws",
            Method::GlobalRws => "global-rws",
            Method::MpViEval => "mp-vi-eval",
            Method::TmcViEval => "tmc-vi-eval",
            Method::GlobalIwaeEval => "global-iwae-eval",
            Method::SmcEval => "smc-eval",
        }
    }

    pub fn trains(self) -> bool {
        matches!(self, Method::MpRws | Method::GlobalRws)
    }
}

impl FromStr for Method {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
            UsageError(format!("unknown method `{s}`; valid methods: {}", valid.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub method: Method,
    pub ks: Vec<usize>,
    pub iters: usize,
    pub seeds: Vec<u64>,
    pub lr: f64,
    pub out: PathBuf,
    pub parallel_seeds: usize,
    /// Estimates averaged per seed by the evaluation methods.
    pub draws: usize,
    pub eval_every: usize,
    pub eval_draws: usize,
    /// Emit `iter-seconds` rows. Off by default since wall-clock values
    /// differ between otherwise identical runs.
    pub timing: bool,
    pub data: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub data_seed: u64,
    pub users: Option<usize>,
    pub films_per_user: Option<usize>,
    pub n: Option<usize>,
}

/// Reads `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(UsageError(format!("config line {}: unknown key `{k}`", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn num<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, UsageError> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| UsageError(format!("bad value `{v}` for {key}"))),
    }
}

fn opt_num<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, UsageError> {
    map.get(key)
        .map(|v| v.parse().map_err(|_| UsageError(format!("bad value `{v}` for {key}"))))
        .transpose()
}

fn positive(v: usize, key: &str) -> Result<usize, UsageError> {
    if v == 0 {
        return Err(UsageError(format!("{key} must be at least 1")));
    }
    Ok(v)
}

/// `5` means five seeds counting up from `base`; `3,8,11` lists them.
pub fn parse_seeds(s: &str, base: u64) -> Result<Vec<u64>, UsageError> {
    let bad = || UsageError(format!("bad seeds `{s}`: expected a count or a comma list"));
    if s.contains(',') {
        let seeds = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        if seeds.is_empty() {
            return Err(bad());
        }
        return Ok(seeds);
    }
    let count: u64 = s.trim().parse().map_err(|_| bad())?;
    if count == 0 {
        return Err(UsageError("at least one seed is needed".into()));
    }
    Ok((0..count).map(|i| base.wrapping_add(i)).collect())
}

impl RunConfig {
    /// Builds a config from merged settings. `base_seed` is where counted
    /// seeds start.
    pub fn from_map(map: &BTreeMap<String, String>, base_seed: u64) -> Result<Self, UsageError> {
        let experiment = map
            .get("experiment")
            .ok_or_else(|| UsageError("--experiment is required".into()))?;
        let experiment: ExperimentId = experiment.parse().map_err(|_| {
            let valid: Vec<&str> = ExperimentId::ALL.iter().map(|e| e.as_str()).collect();
            UsageError(format!("unknown experiment `{experiment}`; valid experiments: {}", valid.join(", ")))
        })?;
        let method: Method = map
            .get("method")
            .ok_or_else(|| UsageError("--method is required".into()))?
            .parse()?;
        let ks = map
            .get("K")
            .map_or("10", String::as_str)
            .split(',')
            .map(|t| match t.trim().parse::<usize>() {
                Ok(k) if k > 0 => Ok(k),
                _ => Err(UsageError(format!("bad K `{t}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let seeds = parse_seeds(map.get("seeds").map_or("1", String::as_str), base_seed)?;
        let lr: f64 = num(map, "lr", 1e-3)?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(UsageError(format!("bad learning rate {lr}")));
        }
        let timing = match map.get("timing").map(String::as_str) {
            None | Some("false") | Some("0") => false,
            Some("true") | Some("1") | Some("") => true,
            Some(v) => return Err(UsageError(format!("bad value `{v}` for timing"))),
        };
        Ok(Self {
            experiment,
            method,
            ks,
            iters: num(map, "iters", 1000)?,
            seeds,
            lr,
            out: PathBuf::from(map.get("out").map_or("results", String::as_str)),
            parallel_seeds: positive(num(map, "parallel-seeds", 1)?, "parallel-seeds")?,
            draws: positive(num(map, "draws", 1000)?, "draws")?,
            eval_every: positive(num(map, "eval-every", 100)?, "eval-every")?,
            eval_draws: positive(num(map, "eval-draws", 1)?, "eval-draws")?,
            timing,
            data: map.get("data").map(PathBuf::from),
            items: map.get("items").map(PathBuf::from),
            data_seed: num(map, "data-seed", 0)?,
            users: opt_num(map, "users")?,
            films_per_user: opt_num(map, "films-per-user")?,
            n: opt_num(map, "N")?,
        })
    }
}
