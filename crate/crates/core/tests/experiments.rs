use std::path::PathBuf;

use mpinfer::distributions::{log_sigmoid, Distribution};
use mpinfer::experiments::{
    build_bus, build_movielens, build_ts_multi, build_ts_single, exact_log_evidence, load_movielens_ratings,
    parse_bus_csv, parse_ratings, predictive_log_likelihood, split_bus, BusRecord, DataSource, ExperimentId,
    ExperimentSpec, BUS_HEADER, PSI_WEIGHTS,
};
use mpinfer::log_tensor::log_sum_exp;
use mpinfer::model::{Dataset, Expr, Family, ModelBuilder, NodeData, Term};
use mpinfer::proposals::{ProposalKind, SampleBatch};
use mpinfer::verify::ts_single_instance;
use mpinfer::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mpinfer-experiments-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

#[test]
fn single_observation_chain_evidence() {
    let (m, _, data) = ts_single_instance(30).unwrap();
    let got = exact_log_evidence(&m, &data).unwrap();
    // x ~ N(0, 1 + 29/30) since the walk starts at a fixed zero.
    let want = -0.5 * (2.0 * std::f64::consts::PI * 59.0 / 30.0).ln();
    assert!((got - want).abs() < 1e-12);
    assert!((got + 1.2571086).abs() < 1e-7);
}

#[test]
fn two_step_chain_is_a_bivariate_gaussian() {
    let mut b = ModelBuilder::new();
    b.latent("z1", None, &[], Family::normal(Expr::constant(1, 0.3), Expr::constant(1, 0.8f64.ln())));
    b.latent(
        "z2",
        None,
        &["z1"],
        Family::normal(
            Expr::zeros(1).plus(Term::Parent { slot: 0, scale: 0.5 }),
            Expr::constant(1, 0.6f64.ln()),
        ),
    );
    b.data("x1", None, &["z1"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)), &[]);
    b.data("x2", None, &["z2"], Family::normal(Expr::parent(1, 0), Expr::constant(1, 0.5f64.ln())), &[]);
    let m = b.build().unwrap();
    let (x1, x2) = (0.9, -0.4);
    let data = Dataset::new(vec![NodeData::new(vec![x1], vec![]), NodeData::new(vec![x2], vec![])]);
    let got = exact_log_evidence(&m, &data).unwrap();

    let (m1, m2) = (0.3, 0.15);
    let (s11, s22, s12) = (0.8 + 1.0, 0.25 * 0.8 + 0.6 + 0.5, 0.5 * 0.8);
    let det: f64 = s11 * s22 - s12 * s12;
    let (d1, d2) = (x1 - m1, x2 - m2);
    let quad = (s22 * d1 * d1 - 2.0 * s12 * d1 * d2 + s11 * d2 * d2) / det;
    let want = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn chain_evidence_agrees_with_naive_monte_carlo() {
    let (n, tau) = (9, 10.0);
    let (m, _) = build_ts_multi(n, tau).unwrap();
    let (_, data) = m.generate_synthetic(&[], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let exact = exact_log_evidence(&m, &data).unwrap();
    let xs: Vec<f64> = data.nodes().iter().map(|d| d.values[0]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, sd) = (1.0 - 1.0 / tau, (2.0 / tau).sqrt());
    let draws = 10_000_000;
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let mut z: f64 = rng.sample(StandardNormal);
        let mut lw = 0.0;
        for i in 2..=n {
            z = a * z + sd * rng.sample::<f64, _>(StandardNormal);
            if i % 3 == 0 {
                let d = xs[i / 3 - 1] - z;
                lw -= half_ln_2pi + 0.5 * d * d;
            }
        }
        let w = lw.exp();
        sum += w;
        sum_sq += w * w;
    }
    let mean = sum / draws as f64;
    let se = ((sum_sq / draws as f64 - mean * mean) / draws as f64).sqrt();
    assert!((mean - exact.exp()).abs() < 3.0 * se, "{mean} vs {} (se {se})", exact.exp());
}

#[test]
fn discrete_model_evidence_is_a_full_sum() {
    let mut b = ModelBuilder::new();
    b.latent("c", None, &[], Family::categorical_weights(&[0.3, 0.7]).unwrap());
    b.data(
        "x",
        None,
        &["c"],
        Family::bernoulli(Expr::constant(1, -0.5).plus(Term::Parent { slot: 0, scale: 1.5 })),
        &[],
    );
    let m = b.build().unwrap();
    let data = Dataset::new(vec![NodeData::new(vec![1.0], vec![])]);
    let got = exact_log_evidence(&m, &data).unwrap();
    let want = log_sum_exp(&[0.3f64.ln() + log_sigmoid(-0.5), 0.7f64.ln() + log_sigmoid(1.0)]);
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn unsupported_models_have_no_exact_evidence() {
    let mut b = ModelBuilder::new();
    b.latent("z", None, &[], Family::normal(Expr::zeros(1), Expr::zeros(1)));
    b.data("x", None, &["z"], Family::bernoulli(Expr::parent(1, 0)), &[]);
    let m = b.build().unwrap();
    let data = Dataset::new(vec![NodeData::new(vec![1.0], vec![])]);
    assert!(matches!(exact_log_evidence(&m, &data), Err(Error::Capability(_))));
}

#[test]
fn rating_model_shapes() {
    let (m, q) = build_movielens(50, 5, 18).unwrap();
    let mu = &m.latents()[m.latent_index("mu").unwrap()];
    let psi = &m.latents()[m.latent_index("psi").unwrap()];
    assert_eq!(mu.family.value_dim(), 18);
    assert_eq!(psi.family.support_size(), Some(5));
    assert!(q.is_mean_field());
}

#[test]
fn rating_probability_is_one_half_at_zero_features() {
    let (m, _) = build_movielens(1, 1, 18).unwrap();
    let z: Vec<Vec<f64>> = m
        .latents()
        .iter()
        .map(|l| vec![0.0; l.family.value_dim() * m.members(l.plate)])
        .collect();
    let data = |r: f64| Dataset::new(vec![NodeData::new(vec![r], vec![vec![0.0; 18]])]);
    let prior = 2.0 * 18.0 * Distribution::normal(0.0, 1.0).unwrap().log_prob(0.0)
        + (PSI_WEIGHTS[0] / PSI_WEIGHTS.iter().sum::<f64>()).ln();
    for r in [0.0, 1.0] {
        let lj = m.log_joint(&z, &data(r)).unwrap();
        assert!((lj - prior - 0.5f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn bus_model_shapes() {
    let (m, _) = build_bus(3, 3, 30, 10, 5).unwrap();
    assert_eq!(m.members(m.data()[0].node.plate), 270);
    let year_mean = m.latent_index("year_mean").unwrap();
    let n = 20_000;
    let xs: Vec<f64> = (0..n)
        .map(|s| m.sample_latents(&mut ChaCha8Rng::seed_from_u64(s)).unwrap()[year_mean][0])
        .collect();
    let v = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    assert!((v - 1e-4).abs() < 4.0 * 1e-4 * (2.0 / n as f64).sqrt(), "{v}");
}

#[test]
fn zero_covariates_leave_the_route_mean() {
    let (m, _) = build_bus(1, 1, 1, 2, 2).unwrap();
    let idx = |n: &str| m.latent_index(n).unwrap();
    let mut z: Vec<Vec<f64>> = m.latents().iter().map(|l| vec![0.0; l.family.value_dim()]).collect();
    z[idx("id_mean")] = vec![0.3];
    let zero_cov = |delay: f64| Dataset::new(vec![NodeData::new(vec![delay], vec![vec![0.0; 2], vec![0.0; 2]])]);
    let base = m.log_joint(&z, &zero_cov(7.0)).unwrap();
    let mut moved = z.clone();
    moved[idx("company_weights")] = vec![2.0, -1.0];
    moved[idx("journey_weights")] = vec![-0.5, 1.5];
    let std = Distribution::normal(0.0, 1.0).unwrap();
    let prior_shift: f64 = [2.0, -1.0, -0.5, 1.5].iter().map(|w| std.log_prob(*w) - std.log_prob(0.0)).sum();
    let shifted = m.log_joint(&moved, &zero_cov(7.0)).unwrap();
    assert!((shifted - base - prior_shift).abs() < 1e-12);
    // The delay term is NB(130, logit = IdMean).
    let nb = Distribution::negative_binomial(130.0, 0.3).unwrap();
    let other = m.log_joint(&z, &zero_cov(2.0)).unwrap();
    assert!((base - other - (nb.log_prob(7.0) - nb.log_prob(2.0))).abs() < 1e-10);
}

#[test]
fn timeseries_shapes() {
    let (m, _) = build_ts_multi(30, 10.0).unwrap();
    assert_eq!(m.data().len(), 10);
    assert_eq!(m.latents().len(), 30);
    let (m, _) = build_ts_single(30).unwrap();
    assert_eq!(m.data().len(), 1);
    assert!(build_ts_single(1).is_err());
}

#[test]
fn every_experiment_builds() {
    for id in ExperimentId::ALL {
        let e = ExperimentSpec::new(id).build().unwrap();
        assert!(e.truth.is_some());
        e.model.check_dataset(&e.train).unwrap();
        if matches!(id, ExperimentId::MovieLens | ExperimentId::Bus) {
            assert_eq!(e.test.node(0).values.len(), e.train.node(0).values.len());
        }
        assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
    }
    assert!(matches!("nope".parse::<ExperimentId>(), Err(Error::Lookup(_))));
}

#[test]
fn empty_test_set_scores_zero_for_every_estimator() {
    let e = ExperimentSpec::new(ExperimentId::TsMulti).build().unwrap();
    assert!(e.test.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for kind in [ProposalKind::Global, ProposalKind::Tmc, ProposalKind::Mp] {
        let batch = SampleBatch::sample(&e.model, &e.proposal.with_kind(kind), 4, &mut rng).unwrap();
        assert_eq!(predictive_log_likelihood(&e.model, &batch, &e.train, &e.test).unwrap(), 0.0);
    }
}

#[test]
fn rating_lines_binarize() {
    let r = parse_ratings("1\t242\t3\t88125\n1\t243\t4\t88126\n\n2\t10\t5\t1\n").unwrap();
    assert_eq!(r.iter().map(|x| x.binary()).collect::<Vec<_>>(), [0.0, 1.0, 1.0]);
    match parse_ratings("1\t242\t3") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
    match parse_ratings("1\t2\t3\t4\n1\tx\t3\t4\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

fn ratings_file(users: u32, per_user: u32) -> String {
    let mut s = String::new();
    for u in 1..=users {
        for i in 0..per_user {
            s.push_str(&format!("{u}\t{}\t{}\t{}\n", 100 + i, 1 + (u + i) % 5, 1000 + i));
        }
    }
    s
}

#[test]
fn rating_files_split_evenly() {
    let p = scratch("u.data", &ratings_file(12, 10));
    let split = load_movielens_ratings(&p, 5, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(split.train.node(0).values.len(), 20);
    assert_eq!(split.test.node(0).values.len(), 20);
    assert_eq!(split.train.node(0).covariates[0].len(), 20 * 18);
    let again = load_movielens_ratings(&p, 5, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(split.train, again.train);

    // Users need twice the per-user count.
    let err = load_movielens_ratings(&p, 5, 6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");

    let spec = ExperimentSpec {
        users: 5,
        films_per_user: 4,
        source: DataSource::File(p),
        ..ExperimentSpec::new(ExperimentId::MovieLens)
    };
    let e = spec.build().unwrap();
    assert!(e.truth.is_none());
    assert_eq!(e.train.node(0).values.len(), 20);
}

fn bus_records(years: i64, boroughs: i64, ids: i64) -> Vec<BusRecord> {
    let mut out = Vec::new();
    for year in 0..years {
        for borough in 0..boroughs {
            for id in 0..ids {
                for rep in 0..2 {
                    out.push(BusRecord {
                        year: 2015 + year,
                        borough,
                        id,
                        company: (id % 10) as usize,
                        journey: ((id + rep) % 5) as usize,
                        delay: (id * 3 + rep) as u64,
                    });
                }
            }
        }
    }
    out
}

#[test]
fn bus_records_split_per_route() {
    let split = split_bus(&bus_records(3, 3, 30), 3, 3, 30, 10, 5).unwrap();
    let train = split.train.node(0);
    assert_eq!(train.values.len(), 270);
    assert_eq!(split.test.node(0).values.len(), 270);
    assert_eq!(train.covariates[0].len(), 270 * 10);
    assert!(train.covariates[1].chunks(5).all(|row| row.iter().sum::<f64>() == 1.0));
    assert!(matches!(split_bus(&bus_records(2, 3, 30), 3, 3, 30, 10, 5), Err(Error::Data(_))));
    assert!(matches!(split_bus(&bus_records(3, 3, 30), 3, 3, 30, 4, 5), Err(Error::Data(_))));
}

#[test]
fn bus_csv_needs_its_header() {
    let mut text = BUS_HEADER.join(",");
    text.push_str("\n2016,1,7,3,2,12\n");
    let r = parse_bus_csv(&text).unwrap();
    assert_eq!(
        r,
        [BusRecord {
            year: 2016,
            borough: 1,
            id: 7,
            company: 3,
            journey: 2,
            delay: 12
        }]
    );
    assert!(matches!(parse_bus_csv("2016,1,7,3,2,12\n"), Err(Error::Parse { line: 1, .. })));
    let bad = format!("{}\n2016,1,7,3,2\n", BUS_HEADER.join(","));
    assert!(matches!(parse_bus_csv(&bad), Err(Error::Parse { line: 2, .. })));

    let mut csv = BUS_HEADER.join(",");
    csv.push('\n');
    for r in bus_records(3, 3, 30) {
        csv.push_str(&format!("{},{},{},{},{},{}\n", r.year, r.borough, r.id, r.company, r.journey, r.delay));
    }
    let spec = ExperimentSpec {
        source: DataSource::File(scratch("bus.csv", &csv)),
        ..ExperimentSpec::new(ExperimentId::Bus)
    };
    assert_eq!(spec.build().unwrap().train.node(0).values.len(), 270);
}
