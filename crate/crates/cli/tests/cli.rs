use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mpinfer"));
    c.env_remove("MPINFER_SEED");
    c
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("mpinfer-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("run").args(args).arg("--out").arg(out).output().unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn records(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn writes_one_csv_per_k_and_a_summary() {
    let out = scratch("shape");
    let o = run(
        &out,
        &["--experiment", "ts-single", "--method", "mp-vi-eval", "--K", "3,10,30", "--seeds", "2", "--draws", "5"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for k in [3, 10, 30] {
        let text = read(&out.join(format!("mp-vi-eval_K{k}.csv")));
        assert!(text.starts_with("method,K,seed,iteration,metric,value\n"));
        let rows = records(&text);
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r[0], "mp-vi-eval");
            assert_eq!(r[1], k.to_string());
            assert_eq!(r[4], "log-phat");
            assert!(r[5].parse::<f64>().unwrap().is_finite());
        }
    }
    let summary = records(&read(&out.join("mp-vi-eval_summary.csv")));
    assert_eq!(summary.len(), 3);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn training_emits_heldout_scores_at_the_cadence() {
    let out = scratch("train");
    let o = run(
        &out,
        &[
            "--experiment", "movielens", "--method", "mp-rws", "--K", "3", "--iters", "30", "--users", "6",
            "--eval-every", "10",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = records(&read(&out.join("mp-rws_K3.csv")));
    let phat = rows.iter().filter(|r| r[4] == "log-phat").count();
    let pred: Vec<&str> = rows.iter().filter(|r| r[4] == "pred-ll").map(|r| r[3].as_str()).collect();
    assert_eq!(phat, 30);
    assert_eq!(pred, ["10", "20", "30"]);
    assert!(rows.iter().all(|r| r[4] != "iter-seconds"));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let out = scratch("codes");
    let code = |args: &[&str]| run(&out, args).status.code();
    assert_eq!(code(&["--experiment", "ts-single", "--method", "nope"]), Some(2));
    assert_eq!(code(&["--experiment", "nope", "--method", "mp-rws"]), Some(2));
    assert_eq!(code(&["--method", "mp-rws"]), Some(2));
    assert_eq!(code(&["--experiment", "bus", "--method", "mp-rws", "--K", "0"]), Some(2));
    // SMC needs a chain of latents.
    let o = run(&out, &["--experiment", "movielens", "--method", "smc-eval", "--users", "4", "--draws", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let v = bin().args(["verify", "nope"]).output().unwrap();
    assert_eq!(v.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&run(&out, &["--experiment", "bus", "--method", "x"]).stderr).into_owned();
    assert!(stderr.contains("global-iwae-eval"), "{stderr}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn flags_override_the_config_file() {
    let out = scratch("config");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("run.cfg");
    std::fs::write(
        &cfg,
        "# sweep\nexperiment=ts-multi\nmethod=tmc-vi-eval\nK=3,5\nseeds=4\ndraws=2\n",
    )
    .unwrap();
    let res = out.join("res");
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--K", "7", "--seeds", "9,2"])
        .arg("--out")
        .arg(&res)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!res.join("tmc-vi-eval_K3.csv").exists());
    let rows = records(&read(&res.join("tmc-vi-eval_K7.csv")));
    let seeds: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(seeds, ["9", "2"]);
    std::fs::write(&cfg, "colour=blue\n").unwrap();
    let bad = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn seed_env_shifts_counted_seeds() {
    let out = scratch("env");
    let o = bin()
        .args(["run", "--experiment", "ts-single", "--method", "global-iwae-eval", "--K", "4", "--seeds", "3"])
        .args(["--draws", "2", "--out"])
        .arg(&out)
        .env("MPINFER_SEED", "40")
        .output()
        .unwrap();
    assert!(o.status.success());
    let rows = records(&read(&out.join("global-iwae-eval_K4.csv")));
    let seeds: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(seeds, ["40", "41", "42"]);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn parallel_seeds_match_sequential_output() {
    let a = scratch("seq");
    let b = scratch("par");
    let args = ["--experiment", "bus", "--method", "global-rws", "--K", "3,6", "--iters", "8", "--seeds", "3", "--eval-every", "4"];
    assert!(run(&a, &args).status.success());
    let mut par = args.to_vec();
    par.extend(["--parallel-seeds", "3"]);
    assert!(run(&b, &par).status.success());
    for f in ["global-rws_K3.csv", "global-rws_K6.csv", "global-rws_summary.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
}

#[test]
fn summary_matches_raw_csvs() {
    let out = scratch("summary");
    let o = run(
        &out,
        &[
            "--experiment", "movielens", "--method", "global-rws", "--K", "2,4", "--iters", "12", "--users", "5",
            "--seeds", "3", "--eval-every", "5",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Final value per (K, metric, seed), recomputed from the raw rows.
    let mut finals: BTreeMap<(String, String), BTreeMap<String, (usize, f64)>> = BTreeMap::new();
    for k in [2, 4] {
        for r in records(&read(&out.join(format!("global-rws_K{k}.csv")))) {
            let it: usize = r[3].parse().unwrap();
            let v: f64 = r[5].parse().unwrap();
            let e = finals.entry((r[1].clone(), r[4].clone())).or_default().entry(r[2].clone()).or_insert((it, v));
            if it >= e.0 {
                *e = (it, v);
            }
        }
    }
    let summary = records(&read(&out.join("global-rws_summary.csv")));
    assert_eq!(summary.len(), finals.len());
    for s in summary {
        let per_seed = &finals[&(s[1].clone(), s[2].clone())];
        let xs: Vec<f64> = per_seed.values().map(|p| p.1).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert_eq!(s[4], xs.len().to_string());
        assert!((s[5].parse::<f64>().unwrap() - mean).abs() < 1e-12, "{s:?}");
        assert!((s[6].parse::<f64>().unwrap() - se).abs() < 1e-12, "{s:?}");
    }
    let _ = std::fs::remove_dir_all(&out);
}
