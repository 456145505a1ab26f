use mpinfer::distributions::{Distribution, LN_2PI};
use mpinfer::experiments::{build_movielens, build_ts_single, ExperimentId, ExperimentSpec};
use mpinfer::model::{Dataset, Expr, Family, ModelBuilder, NodeData};
use mpinfer::GraphError;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn std_normal() -> Family {
    Family::normal(Expr::zeros(1), Expr::zeros(1))
}

#[test]
fn empty_model_has_empty_order() {
    assert!(ModelBuilder::new().validate().unwrap().is_empty());
}

#[test]
fn chain_orders_parents_first() {
    let mut b = ModelBuilder::new();
    b.latent("z3", None, &["z2"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)));
    b.latent("z1", None, &[], std_normal());
    b.latent("z2", None, &["z1"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)));
    assert_eq!(b.validate().unwrap(), ["z1", "z2", "z3"]);
}

#[test]
fn cycle_names_both_latents() {
    let mut b = ModelBuilder::new();
    b.latent("z1", None, &["z2"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)));
    b.latent("z2", None, &["z1"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)));
    match b.validate() {
        Err(GraphError::Cycle(names)) => {
            assert!(names.contains(&"z1".to_string()) && names.contains(&"z2".to_string()));
        }
        other => panic!("expected a cycle, got {other:?}"),
    }
    let msg = b.build().unwrap_err().to_string();
    assert!(msg.contains("z1") && msg.contains("z2"), "{msg}");
}

#[test]
fn undeclared_and_cross_plate_parents_are_rejected() {
    let mut b = ModelBuilder::new();
    b.latent("z", None, &["w"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)));
    assert_eq!(
        b.validate(),
        Err(GraphError::UndeclaredParent {
            child: "z".into(),
            parent: "w".into()
        })
    );

    let mut b = ModelBuilder::new();
    let p = b.plate("p", 3, None).unwrap();
    b.latent("inner", Some(p), &[], std_normal());
    b.latent("outer", None, &["inner"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)));
    assert!(matches!(b.validate(), Err(GraphError::CrossPlate { .. })));

    let mut b = ModelBuilder::new();
    b.latent("a", None, &[], std_normal());
    b.latent("b", None, &["a", "a"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)));
    assert!(matches!(b.validate(), Err(GraphError::Invalid { .. })));
}

fn one_pair() -> mpinfer::model::ModelGraph {
    let mut b = ModelBuilder::new();
    b.latent("z", None, &[], std_normal());
    b.data("x", None, &["z"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)), &[]);
    b.build().unwrap()
}

#[test]
fn log_joint_of_standard_pair() {
    let m = one_pair();
    let data = Dataset::new(vec![NodeData::new(vec![0.0], vec![])]);
    let lj = m.log_joint(&[vec![0.0]], &data).unwrap();
    assert!((lj + LN_2PI).abs() < 1e-12);
    assert!((lj + 1.837877).abs() < 1e-6);
}

#[test]
fn log_joint_needs_every_latent() {
    let m = one_pair();
    let data = Dataset::new(vec![NodeData::new(vec![0.0], vec![])]);
    assert!(m.log_joint(&[], &data).is_err());
}

#[test]
fn out_of_support_assignment_has_zero_density() {
    let mut b = ModelBuilder::new();
    b.latent("c", None, &[], Family::categorical_weights(&[0.2, 0.8]).unwrap());
    let m = b.build().unwrap();
    assert_eq!(m.log_joint(&[vec![2.0]], &Dataset::empty()).unwrap(), f64::NEG_INFINITY);
    assert_eq!(m.log_joint(&[vec![0.5]], &Dataset::empty()).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn chain_log_joint_matches_term_by_term_sum() {
    let n = 30;
    let (m, _) = build_ts_single(n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (z, data) = m.generate_synthetic(&[], &mut rng).unwrap();
    let var = 1.0 / n as f64;
    let pdf = |x: f64, mean: f64, v: f64| -0.5 * (LN_2PI + v.ln() + (x - mean).powi(2) / v);
    let mut prev = 0.0;
    let mut want = 0.0;
    for zi in &z {
        want += pdf(zi[0], prev, var);
        prev = zi[0];
    }
    want += pdf(data.node(0).values[0], prev, 1.0);
    assert!((m.log_joint(&z, &data).unwrap() - want).abs() < 1e-10);
}

#[test]
fn single_observation_chain_shape() {
    let (m, _) = build_ts_single(30).unwrap();
    // The fixed start is not a random variable; the walk begins at z2.
    assert_eq!(m.latents().len(), 29);
    assert_eq!(m.latents()[0].name, "z2");
    assert_eq!(m.data().len(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, data) = m.generate_synthetic(&[], &mut rng).unwrap();
    assert_eq!(data.node(0).values.len(), 1);
}

#[test]
fn synthetic_ratings_shape_and_range() {
    let e = ExperimentSpec::new(ExperimentId::MovieLens).build().unwrap();
    let ratings = &e.train.node(0).values;
    assert_eq!(ratings.len(), 50 * 5);
    assert!(ratings.iter().all(|r| *r == 0.0 || *r == 1.0));
    assert_eq!(e.test.node(0).values.len(), ratings.len());
    let (m, _) = build_movielens(50, 5, 18).unwrap();
    assert_eq!(m.members(m.data()[0].node.plate), 250);
}

#[test]
fn synthetic_data_is_reproducible() {
    let (m, _) = build_ts_single(30).unwrap();
    let draw = |seed| m.generate_synthetic(&[], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let (za, da) = draw(11);
    let (zb, db) = draw(11);
    assert_eq!(za, zb);
    assert_eq!(da, db);
    assert_ne!(draw(12).0, za);
}

#[test]
fn root_latent_prior_moments() {
    let mut b = ModelBuilder::new();
    let mean = 1.5;
    let var: f64 = 0.7;
    b.latent("z", None, &[], Family::normal(Expr::constant(1, mean), Expr::constant(1, var.ln())));
    let m = b.build().unwrap();
    let n = 100_000;
    let xs: Vec<f64> = (0..n)
        .map(|s| m.sample_latents(&mut ChaCha8Rng::seed_from_u64(s)).unwrap()[0][0])
        .collect();
    let mu = xs.iter().sum::<f64>() / n as f64;
    let v = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se_mean = (var / n as f64).sqrt();
    // The sample variance of a Normal has standard error σ²·sqrt(2/(n-1)).
    let se_var = var * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((mu - mean).abs() < 4.0 * se_mean, "mean {mu}");
    assert!((v - var).abs() < 4.0 * se_var, "variance {v}");
}

proptest! {
    #[test]
    fn log_joint_is_additive(z in -3.0f64..3.0, w in -3.0f64..3.0, x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let base = one_pair();
        let mut b = ModelBuilder::new();
        b.latent("z", None, &[], std_normal());
        b.latent("w", None, &[], Family::normal(Expr::constant(1, 0.5), Expr::constant(1, 0.3)));
        b.data("x", None, &["z"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)), &[]);
        b.data("y", None, &["w"], Family::normal(Expr::parent(1, 0), Expr::constant(1, -0.2)), &[]);
        let bigger = b.build().unwrap();
        let small = base.log_joint(&[vec![z]], &Dataset::new(vec![NodeData::new(vec![x], vec![])])).unwrap();
        let big = bigger
            .log_joint(
                &[vec![z], vec![w]],
                &Dataset::new(vec![NodeData::new(vec![x], vec![]), NodeData::new(vec![y], vec![])]),
            )
            .unwrap();
        let extra = Distribution::normal_log_var(0.5, 0.3).unwrap().log_prob(w)
            + Distribution::normal_log_var(w, -0.2).unwrap().log_prob(y);
        prop_assert!((big - small - extra).abs() < 1e-12);
    }
}
