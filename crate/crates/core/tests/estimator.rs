use mpinfer::distributions::Distribution;
use mpinfer::estimator::{
    log_evidence, log_evidence_global, log_evidence_mp, predictive_log_likelihood, smc_log_evidence, FactorSet,
    FactorSource,
};
use mpinfer::experiments::{build_ts_multi, build_ts_single, exact_log_evidence};
use mpinfer::log_tensor::log_mean_exp;
use mpinfer::model::{Dataset, Expr, Family, ModelBuilder, NodeData};
use mpinfer::oracle::{brute_force_log_contraction, explicit_log_evidence};
use mpinfer::proposals::{ProposalGraph, ProposalKind, SampleBatch};
use mpinfer::verify::fixtures::{conjugate_gaussian, conjugate_posterior, discrete_pair, random_instance};
use mpinfer::verify::{draw_log_evidence, mean_se, ts_single_instance, Estimator};
use mpinfer::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_obs(x: f64) -> Dataset {
    Dataset::new(vec![NodeData::new(vec![x], Vec::new())])
}

#[test]
fn prior_proposal_on_a_root_latent_gives_a_zero_factor() {
    let mut b = ModelBuilder::new();
    b.latent("z", None, &[], Family::normal(Expr::constant(1, 0.3), Expr::constant(1, -0.2)));
    let m = b.build().unwrap();
    let q = ProposalGraph::from_prior(&m, ProposalKind::Mp).unwrap();
    let batch = SampleBatch::sample(&m, &q, 7, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let empty = Dataset::empty();
    let fs = FactorSet::build(&m, &batch, &empty).unwrap();
    let f = fs.dense().unwrap().remove(0);
    assert!(f.values().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn chain_factor_shapes() {
    let (m, q, data) = ts_single_instance(30).unwrap();
    let batch = SampleBatch::sample(&m, &q, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let fs = FactorSet::build(&m, &batch, &data).unwrap();
    for f in fs.factors() {
        match f.source() {
            FactorSource::Latent(0) => assert_eq!(f.shape(), [3]),
            FactorSource::Latent(_) => assert_eq!(f.shape(), [3, 3]),
            FactorSource::Data(_) => assert_eq!(f.shape(), [3]),
            FactorSource::ExtraData(_) => unreachable!(),
        }
    }
    assert_eq!(fs.factors().len(), 30);
}

#[test]
fn prior_proposal_chain_entries_match_direct_recomputation() {
    let (m, q, data) = ts_single_instance(30).unwrap();
    let var = 1.0 / 30.0;
    let batch = SampleBatch::sample(&m, &q, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let fs = FactorSet::build(&m, &batch, &data).unwrap();
    let mut nonzero = false;
    for f in fs.factors() {
        let FactorSource::Latent(i) = f.source() else { continue };
        if i == 0 {
            continue;
        }
        let own = batch.latent(i);
        let parent = batch.latent(i - 1);
        for k in 0..4 {
            for kp in 0..4 {
                let p = Distribution::normal(parent.values[kp], var).unwrap().log_prob(own.values[k]);
                let want = p - own.log_q[k];
                assert!((f.entry(&[k, kp]) - want).abs() < 1e-10);
                nonzero |= want.abs() > 1e-3;
            }
        }
    }
    // The denominator is the mixture, so entries are not identically zero.
    assert!(nonzero);
}

#[test]
fn single_particle_is_the_plain_ratio() {
    let (m, q, data) = ts_single_instance(30).unwrap();
    let batch = SampleBatch::sample(&m, &q, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let fs = FactorSet::build(&m, &batch, &data).unwrap();
    let z: Vec<Vec<f64>> = batch.latents().iter().map(|l| l.values.clone()).collect();
    let log_q: f64 = batch.latents().iter().map(|l| l.log_q[0]).sum();
    let want = m.log_joint(&z, &data).unwrap() - log_q;
    let got = log_evidence_mp(&fs).unwrap().log_value;
    assert!((got - want).abs() < 1e-10);

    let gq = q.with_kind(ProposalKind::Global);
    let gbatch = SampleBatch::sample(&m, &gq, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let global = log_evidence_global(&m, &gbatch, &data).unwrap().log_value;
    assert!((global - got).abs() < 1e-12);
}

#[test]
fn discrete_pair_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [ProposalKind::Mp, ProposalKind::Tmc] {
        for x in [0.0, 1.0] {
            let inst = discrete_pair(&mut rng, kind, x).unwrap();
            let batch = SampleBatch::sample(&inst.model, &inst.q, 3, &mut rng).unwrap();
            let fs = FactorSet::build(&inst.model, &batch, &inst.data).unwrap();
            let got = log_evidence_mp(&fs).unwrap().log_value;
            let explicit = explicit_log_evidence(&inst.model, &inst.q, &batch, &inst.data).unwrap();
            let brute = brute_force_log_contraction(&fs.dense().unwrap(), fs.axis_table());
            assert!((got - explicit).abs() < 1e-12, "{got} vs {explicit}");
            assert!((got - brute).abs() < 1e-12);
        }
    }
}

#[test]
fn posterior_proposal_is_exact_for_every_draw() {
    let (log_px, mean, var) = conjugate_posterior(0.4, 1.3);
    for kind in [ProposalKind::Global, ProposalKind::Mp] {
        let inst = conjugate_gaussian(0.4, 1.3, mean, var.ln(), kind).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let est = match kind {
                ProposalKind::Global => Estimator::Global,
                _ => Estimator::Mp,
            };
            let v = draw_log_evidence(&inst.model, &inst.q, &inst.data, est, 5, &mut rng).unwrap();
            assert!((v - log_px).abs() < 1e-12);
        }
    }
}

#[test]
fn global_estimate_matches_k_term_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let inst = random_instance(&mut rng, ProposalKind::Global, 4, true).unwrap();
        let batch = SampleBatch::sample(&inst.model, &inst.q, 6, &mut rng).unwrap();
        let est = log_evidence_global(&inst.model, &batch, &inst.data).unwrap();
        let lq = batch.joint_log_q().unwrap();
        let terms: Vec<f64> = (0..6)
            .map(|k| {
                let z: Vec<Vec<f64>> = batch
                    .latents()
                    .iter()
                    .map(|l| (0..l.members).flat_map(|m| l.value(m, k).to_vec()).collect())
                    .collect();
                inst.model.log_joint(&z, &inst.data).unwrap() - lq[k]
            })
            .collect();
        assert!((est.log_value - log_mean_exp(&terms)).abs() < 1e-10);
        // The contraction path agrees with the direct per-draw sum.
        let fs = FactorSet::build(&inst.model, &batch, &inst.data).unwrap();
        assert!((log_evidence(&fs).unwrap().log_value - est.log_value).abs() < 1e-10);
    }
}

#[test]
fn estimator_kinds_are_checked() {
    let (m, q, data) = ts_single_instance(5).unwrap();
    let batch = SampleBatch::sample(&m, &q, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(log_evidence_global(&m, &batch, &data), Err(Error::Capability(_))));
    let g = SampleBatch::sample(&m, &q.with_kind(ProposalKind::Global), 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let fs = FactorSet::build(&m, &g, &data).unwrap();
    assert!(matches!(log_evidence_mp(&fs), Err(Error::Capability(_))));
}

#[test]
fn smc_without_observations_is_zero() {
    let (m, _) = build_ts_single(10).unwrap();
    let v = smc_log_evidence(&m, &Dataset::empty(), 50, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn smc_rejects_non_chains() {
    let mut b = ModelBuilder::new();
    b.latent("a", None, &[], Family::normal(Expr::zeros(1), Expr::zeros(1)));
    b.latent("b", None, &[], Family::normal(Expr::zeros(1), Expr::zeros(1)));
    b.latent("c", None, &["a"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)));
    let m = b.build().unwrap();
    let r = smc_log_evidence(&m, &Dataset::empty(), 10, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(r, Err(Error::Structure(_))));
}

#[test]
fn smc_tracks_the_multi_observation_chain() {
    let (m, _) = build_ts_multi(30, 10.0).unwrap();
    let (_, data) = m.generate_synthetic(&[], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let exact = exact_log_evidence(&m, &data).unwrap();
    let v = smc_log_evidence(&m, &data, 10_000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert!((v - exact).abs() < 0.05, "{v} vs {exact}");
}

#[test]
fn smc_with_one_final_observation_behaves_like_global() {
    let (m, q, data) = ts_single_instance(10).unwrap();
    let exact = exact_log_evidence(&m, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let smc: Vec<f64> = (0..2000).map(|_| smc_log_evidence(&m, &data, 5, &mut rng).unwrap()).collect();
    let global: Vec<f64> = (0..2000)
        .map(|_| draw_log_evidence(&m, &q, &data, Estimator::Global, 5, &mut rng).unwrap())
        .collect();
    let (ms, ss) = mean_se(&smc);
    let (mg, sg) = mean_se(&global);
    assert!((ms - mg).abs() < 4.0 * (ss * ss + sg * sg).sqrt(), "{ms} vs {mg}");
    assert!(ms < exact + 3.0 * ss);
}

#[test]
fn mp_estimate_increases_with_k() {
    let (m, q, data) = ts_single_instance(30).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut prev: Option<(f64, f64)> = None;
    for k in [1, 3, 10, 30] {
        let xs: Vec<f64> = (0..300)
            .map(|_| draw_log_evidence(&m, &q, &data, Estimator::Mp, k, &mut rng).unwrap())
            .collect();
        let (mean, se) = mean_se(&xs);
        if let Some((pm, ps)) = prev {
            assert!(mean >= pm - 2.0 * (se * se + ps * ps).sqrt(), "K={k}: {mean} < {pm}");
        }
        prev = Some((mean, se));
    }
}

#[test]
fn large_k_converges_on_one_latent() {
    let inst = conjugate_gaussian(0.0, 0.7, 0.0, 0.0, ProposalKind::Mp).unwrap();
    let (log_px, _, _) = conjugate_posterior(0.0, 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for est in [Estimator::Global, Estimator::Mp] {
        let v = draw_log_evidence(&inst.model, &inst.q, &inst.data, est, 10_000, &mut rng).unwrap();
        assert!((v - log_px).abs() < 0.02, "{est:?}: {v} vs {log_px}");
    }
}

#[test]
fn predictive_log_likelihood_cases() {
    let inst = conjugate_gaussian(0.0, 0.7, 0.0, 0.0, ProposalKind::Mp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch = SampleBatch::sample(&inst.model, &inst.q, 5, &mut rng).unwrap();
    assert_eq!(
        predictive_log_likelihood(&inst.model, &batch, &inst.data, &Dataset::empty()).unwrap(),
        0.0
    );

    let one = SampleBatch::sample(&inst.model, &inst.q, 1, &mut rng).unwrap();
    let z = one.latent(0).values[0];
    let got = predictive_log_likelihood(&inst.model, &one, &inst.data, &one_obs(-0.4)).unwrap();
    let want = Distribution::normal(z, 1.0).unwrap().log_prob(-0.4);
    assert!((got - want).abs() < 1e-12);

    // Posterior N(0.35, 0.5), so a fresh observation is N(0.35, 1.5).
    let big = SampleBatch::sample(&inst.model, &inst.q, 10_000, &mut rng).unwrap();
    let got = predictive_log_likelihood(&inst.model, &big, &inst.data, &one_obs(-0.4)).unwrap();
    let want = Distribution::normal(0.35, 1.5).unwrap().log_prob(-0.4);
    assert!((got - want).abs() < 0.02, "{got} vs {want}");
}
