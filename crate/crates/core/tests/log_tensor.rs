use mpinfer::log_tensor::{
    contract, execute, execute_traced, plan_contraction, plan_with_order, posterior_marginals,
    AxisName, AxisTable, FactorRef, FactorSignature, LazyFactor, LogFactor, Reduction,
};
use mpinfer::oracle::{brute_force_log_contraction, brute_force_marginals};
use mpinfer::Error;
use proptest::prelude::*;

const NEG: f64 = f64::NEG_INFINITY;

fn k(name: &str) -> AxisName {
    AxisName::sample(name)
}

#[test]
fn log_mul_examples() {
    let a = LogFactor::scalar(0.0).unwrap();
    let b = LogFactor::new(vec![(k("k"), 2)], vec![2f64.ln(), 3f64.ln()]).unwrap();
    assert_eq!(a.log_mul(&b).unwrap().values(), b.values());

    let a = LogFactor::new(vec![(k("k1"), 2)], vec![0.0, 0.0]).unwrap();
    let b = LogFactor::new(vec![(k("k2"), 1)], vec![0.0]).unwrap();
    let c = a.log_mul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 1]);
    assert_eq!(c.values(), &[0.0, 0.0]);

    let a = LogFactor::new(vec![(k("k"), 2)], vec![2f64.ln(), NEG]).unwrap();
    let b = LogFactor::new(vec![(k("k"), 2)], vec![3f64.ln(), 5f64.ln()]).unwrap();
    let c = a.log_mul(&b).unwrap();
    assert!((c.values()[0] - 6f64.ln()).abs() < 1e-15);
    assert_eq!(c.values()[1], NEG);

    let bad = LogFactor::new(vec![(k("k"), 3)], vec![0.0; 3]).unwrap();
    assert!(matches!(a.log_mul(&bad), Err(Error::Shape(_))));
}

#[test]
fn construction_rejects_nan_and_bad_lengths() {
    assert!(matches!(
        LogFactor::new(vec![(k("k"), 2)], vec![0.0, f64::NAN]),
        Err(Error::InvalidValue(_))
    ));
    assert!(matches!(
        LogFactor::new(vec![(k("k"), 2)], vec![0.0]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn reduce_examples() {
    let f = LogFactor::new(vec![(k("k"), 2)], vec![2f64.ln(), 2f64.ln()]).unwrap();
    assert_eq!(f.reduce(&k("k"), Reduction::Mean).unwrap().values(), &[2f64.ln()]);
    let f = LogFactor::new(vec![(k("k"), 2)], vec![0.0, 0.0]).unwrap();
    assert_eq!(f.reduce(&k("k"), Reduction::Mean).unwrap().values(), &[0.0]);
    let f = LogFactor::new(vec![(k("k"), 2)], vec![NEG, NEG]).unwrap();
    assert_eq!(f.reduce(&k("k"), Reduction::Mean).unwrap().values(), &[NEG]);
    assert!(matches!(f.reduce(&k("j"), Reduction::Sum), Err(Error::Shape(_))));
}

#[test]
fn execute_examples() {
    let mut t = AxisTable::new();
    t.declare_sample("k", 2, &[]).unwrap();
    let f = LogFactor::new(vec![(k("k"), 2)], vec![2f64.ln(), 4f64.ln()]).unwrap();
    assert!((contract(&[f], &t).unwrap() - 3f64.ln()).abs() < 1e-15);

    let mut t = AxisTable::new();
    t.declare_sample("k1", 2, &[]).unwrap();
    t.declare_sample("k2", 2, &[]).unwrap();
    let a = LogFactor::new(vec![(k("k1"), 2)], vec![0.0, 0.0]).unwrap();
    let b = LogFactor::new(vec![(k("k2"), 2)], vec![0.0, 0.0]).unwrap();
    assert_eq!(contract(&[a, b], &t).unwrap(), 0.0);
}

#[test]
fn signature_mismatch_is_a_shape_error() {
    let mut t = AxisTable::new();
    t.declare_sample("k", 2, &[]).unwrap();
    let sig = FactorSignature::new(vec![(k("k"), 2)]);
    let plan = plan_contraction(&[sig], &t).unwrap();
    let other = LogFactor::new(vec![(k("j"), 2)], vec![0.0, 0.0]).unwrap();
    assert!(matches!(execute(&plan, &[FactorRef::from(&other)]), Err(Error::Shape(_))));
    assert!(matches!(execute(&plan, &[]), Err(Error::Shape(_))));
}

fn chain(n: usize, kk: usize) -> (AxisTable, Vec<FactorSignature>) {
    let mut t = AxisTable::new();
    let axes: Vec<AxisName> = (0..n)
        .map(|i| t.declare_sample(format!("k{i}"), kk, &[]).unwrap())
        .collect();
    let mut sigs = vec![FactorSignature::new(vec![(axes[0].clone(), kk)])];
    for i in 1..n {
        sigs.push(FactorSignature::new(vec![
            (axes[i].clone(), kk),
            (axes[i - 1].clone(), kk),
        ]));
    }
    sigs.push(FactorSignature::new(vec![(axes[n - 1].clone(), kk)]));
    (t, sigs)
}

fn permutations(items: &[AxisName]) -> Vec<Vec<AxisName>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

#[test]
fn chain_plan_peak_is_quadratic_and_optimal() {
    let (t, sigs) = chain(3, 4);
    let plan = plan_contraction(&sigs, &t).unwrap();
    assert!(plan.peak_size() <= 16);
    let axes: Vec<AxisName> = t.iter().map(|i| i.name.clone()).collect();
    let best = permutations(&axes)
        .iter()
        .map(|o| plan_with_order(&sigs, &t, o).unwrap().peak_size())
        .min()
        .unwrap();
    assert_eq!(plan.peak_size(), best);
}

#[test]
fn long_chain_stays_quadratic() {
    let (t, sigs) = chain(30, 128);
    let plan = plan_contraction(&sigs, &t).unwrap();
    assert_eq!(plan.peak_size(), 128 * 128);
}

#[test]
fn single_factor_is_one_step() {
    let mut t = AxisTable::new();
    t.declare_sample("k", 3, &[]).unwrap();
    let plan = plan_contraction(&[FactorSignature::new(vec![(k("k"), 3)])], &t).unwrap();
    assert_eq!(plan.steps().len(), 1);
}

/// Factors with the layout of the hierarchical ratings model: two global
/// latents, a per-user latent depending on both, and per-user observations.
fn ratings_shape(kk: usize, m: usize, seed: u64) -> (AxisTable, Vec<LogFactor>) {
    let mut t = AxisTable::new();
    let mu = t.declare_sample("k_mu", kk, &[]).unwrap();
    let psi = t.declare_sample("k_psi", kk, &[]).unwrap();
    let users = t.declare_plate("users", m, &[]).unwrap();
    let z = t.declare_sample("k_z", kk, &[users.clone()]).unwrap();
    let mut rng = Lcg(seed);
    let mut f = |axes: Vec<(AxisName, usize)>| {
        let n: usize = axes.iter().map(|a| a.1).product();
        LogFactor::new(axes, (0..n).map(|_| rng.next() * 4.0 - 2.0).collect()).unwrap()
    };
    let factors = vec![
        f(vec![(mu.clone(), kk)]),
        f(vec![(psi.clone(), kk)]),
        f(vec![(users.clone(), m), (z.clone(), kk), (mu, kk), (psi, kk)]),
        f(vec![(users, m), (z, kk)]),
    ];
    (t, factors)
}

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[test]
fn ratings_shape_plan_order_and_value() {
    let (t, factors) = ratings_shape(3, 4, 7);
    let sigs: Vec<FactorSignature> = factors.iter().map(LogFactor::signature).collect();
    let plan = plan_contraction(&sigs, &t).unwrap();
    let order = plan.elimination_order();
    assert_eq!(order[0], k("k_z"));
    let plate_step = plan
        .steps()
        .iter()
        .position(|s| s.reduction == Reduction::Sum && s.axis == AxisName::plate("users"))
        .unwrap();
    let z_step = plan.steps().iter().position(|s| s.axis == k("k_z")).unwrap();
    assert!(z_step < plate_step);
    assert!(plan.peak_size() <= 27 * 4);
    let v = contract(&factors, &t).unwrap();
    assert!((v - brute_force_log_contraction(&factors, &t)).abs() < 1e-12);
}

#[test]
fn crossed_plates_cannot_be_planned() {
    let mut t = AxisTable::new();
    let p = t.declare_plate("p", 2, &[]).unwrap();
    let q = t.declare_plate("q", 2, &[]).unwrap();
    let a = t.declare_sample("a", 2, &[p.clone()]).unwrap();
    let b = t.declare_sample("b", 2, &[q.clone()]).unwrap();
    let sig = FactorSignature::new(vec![(p, 2), (q, 2), (a, 2), (b, 2)]);
    assert!(matches!(plan_contraction(&[sig], &t), Err(Error::Plan(_))));
}

#[test]
fn unit_sample_axes_give_unit_weights() {
    let mut t = AxisTable::new();
    let a = t.declare_sample("a", 1, &[]).unwrap();
    let b = t.declare_sample("b", 1, &[]).unwrap();
    let f1 = LogFactor::new(vec![(a.clone(), 1)], vec![-0.3]).unwrap();
    let f2 = LogFactor::new(vec![(b, 1), (a, 1)], vec![1.7]).unwrap();
    let sigs = vec![f1.signature(), f2.signature()];
    let plan = plan_contraction(&sigs, &t).unwrap();
    let refs = [FactorRef::from(&f1), FactorRef::from(&f2)];
    for target in 0..2 {
        let w = posterior_marginals(&plan, &refs, target).unwrap();
        assert_eq!(w.values(), &[1.0]);
    }
    assert!(matches!(posterior_marginals(&plan, &refs, 2), Err(Error::Lookup(_))));
}

#[test]
fn constant_factors_give_uniform_weights() {
    let mut t = AxisTable::new();
    let a = t.declare_sample("a", 3, &[]).unwrap();
    let b = t.declare_sample("b", 3, &[]).unwrap();
    let f1 = LogFactor::new(vec![(a.clone(), 3)], vec![0.5; 3]).unwrap();
    let f2 = LogFactor::new(vec![(b, 3), (a, 3)], vec![0.5; 9]).unwrap();
    let plan = plan_contraction(&[f1.signature(), f2.signature()], &t).unwrap();
    let refs = [FactorRef::from(&f1), FactorRef::from(&f2)];
    let w = posterior_marginals(&plan, &refs, 1).unwrap();
    for v in w.values() {
        assert!((v - 1.0 / 9.0).abs() < 1e-15);
    }
}

#[test]
fn degenerate_evidence_is_reported() {
    let mut t = AxisTable::new();
    let a = t.declare_sample("a", 2, &[]).unwrap();
    let f = LogFactor::new(vec![(a, 2)], vec![NEG, NEG]).unwrap();
    let plan = plan_contraction(&[f.signature()], &t).unwrap();
    let refs = [FactorRef::from(&f)];
    assert_eq!(execute(&plan, &refs).unwrap(), NEG);
    assert!(matches!(
        posterior_marginals(&plan, &refs, 0),
        Err(Error::DegenerateEvidence)
    ));
}

/// A lazy view of a dense factor, to check the row interface.
struct Rows(LogFactor);

impl LazyFactor for Rows {
    fn axes(&self) -> &[AxisName] {
        self.0.axes()
    }
    fn shape(&self) -> &[usize] {
        self.0.shape()
    }
    fn add_row(&self, index: &[usize], axis: usize, out: &mut [f64]) {
        let mut idx = index.to_vec();
        for (j, o) in out.iter_mut().enumerate() {
            idx[axis] = j;
            *o += self.0.get(&idx);
        }
    }
}

#[test]
fn lazy_inputs_match_dense_inputs() {
    let (t, factors) = ratings_shape(3, 2, 11);
    let sigs: Vec<FactorSignature> = factors.iter().map(LogFactor::signature).collect();
    let plan = plan_contraction(&sigs, &t).unwrap();
    let lazy: Vec<Rows> = factors.iter().cloned().map(Rows).collect();
    let dense_refs: Vec<FactorRef> = factors.iter().map(FactorRef::from).collect();
    let lazy_refs: Vec<FactorRef> = lazy.iter().map(|l| FactorRef::Lazy(l)).collect();
    assert_eq!(
        execute(&plan, &dense_refs).unwrap(),
        execute(&plan, &lazy_refs).unwrap()
    );
}

/// A random set of factors over up to three sample axes and, optionally, one
/// plate holding the last latent.
#[derive(Debug, Clone)]
struct Instance {
    kk: usize,
    n: usize,
    parents: Vec<Vec<bool>>,
    data_on: Vec<bool>,
    plate: Option<usize>,
    values: Vec<f64>,
}

fn instance(with_plate: bool) -> impl Strategy<Value = Instance> {
    (1usize..=4, 1usize..=3, prop::collection::vec(any::<bool>(), 6), prop::collection::vec(any::<bool>(), 3), 1usize..=3)
        .prop_flat_map(move |(kk, n, pbits, dbits, m)| {
            let parents: Vec<Vec<bool>> = (0..n)
                .map(|i| (0..i).map(|j| pbits[i * 2 + j]).collect())
                .collect();
            let mut data_on: Vec<bool> = dbits[..n].to_vec();
            data_on[n - 1] = true;
            let plate = (with_plate && n > 1).then_some(m);
            let values = prop::collection::vec(
                prop_oneof![9 => -4.0f64..4.0, 1 => Just(f64::NEG_INFINITY)],
                2 * 64 * 3 + 64,
            );
            (Just(kk), Just(n), Just(parents), Just(data_on), Just(plate), values)
        })
        .prop_map(|(kk, n, parents, data_on, plate, values)| Instance {
            kk,
            n,
            parents,
            data_on,
            plate,
            values,
        })
}

impl Instance {
    fn build(&self) -> (AxisTable, Vec<LogFactor>) {
        let mut t = AxisTable::new();
        let plate = self
            .plate
            .map(|m| t.declare_plate("p", m, &[]).unwrap());
        let axes: Vec<AxisName> = (0..self.n)
            .map(|i| {
                let in_plate = plate.is_some() && i == self.n - 1;
                let ps = if in_plate { vec![plate.clone().unwrap()] } else { vec![] };
                t.declare_sample(format!("k{i}"), self.kk, &ps).unwrap()
            })
            .collect();
        let mut vals = self.values.iter().copied().cycle();
        let mut out = Vec::new();
        let mut mk = |mut ax: Vec<(AxisName, usize)>, last: bool| {
            if last {
                if let (Some(p), Some(m)) = (&plate, self.plate) {
                    ax.insert(0, (p.clone(), m));
                }
            }
            let len: usize = ax.iter().map(|a| a.1).product();
            LogFactor::new(ax, (&mut vals).take(len).collect()).unwrap()
        };
        for i in 0..self.n {
            let mut ax = vec![(axes[i].clone(), self.kk)];
            for (j, on) in self.parents[i].iter().enumerate() {
                if *on {
                    ax.push((axes[j].clone(), self.kk));
                }
            }
            out.push(mk(ax, i == self.n - 1));
        }
        let data: Vec<(AxisName, usize)> = (0..self.n)
            .filter(|&i| self.data_on[i])
            .map(|i| (axes[i].clone(), self.kk))
            .collect();
        out.push(mk(data, true));
        (t, out)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn contraction_matches_enumeration(inst in instance(false)) {
        let (t, f) = inst.build();
        let got = contract(&f, &t).unwrap();
        let want = brute_force_log_contraction(&f, &t);
        prop_assert!(!got.is_nan());
        if want == NEG {
            prop_assert_eq!(got, NEG);
        } else {
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn plated_contraction_matches_enumeration(inst in instance(true)) {
        let (t, f) = inst.build();
        let got = contract(&f, &t).unwrap();
        let want = brute_force_log_contraction(&f, &t);
        if want == NEG {
            prop_assert_eq!(got, NEG);
        } else {
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn every_valid_order_agrees(inst in instance(true)) {
        let (t, f) = inst.build();
        let sigs: Vec<FactorSignature> = f.iter().map(LogFactor::signature).collect();
        let refs: Vec<FactorRef> = f.iter().map(FactorRef::from).collect();
        let base = execute(&plan_contraction(&sigs, &t).unwrap(), &refs).unwrap();
        let samples: Vec<AxisName> = t.iter().filter(|i| i.name.is_sample()).map(|i| i.name.clone()).collect();
        for order in permutations(&samples) {
            if let Ok(plan) = plan_with_order(&sigs, &t, &order) {
                let v = execute(&plan, &refs).unwrap();
                if base == NEG {
                    prop_assert_eq!(v, NEG);
                } else {
                    prop_assert!((v - base).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn marginals_match_enumeration(inst in instance(false)) {
        let (t, f) = inst.build();
        let sigs: Vec<FactorSignature> = f.iter().map(LogFactor::signature).collect();
        let plan = plan_contraction(&sigs, &t).unwrap();
        let refs: Vec<FactorRef> = f.iter().map(FactorRef::from).collect();
        let trace = execute_traced(&plan, &refs).unwrap();
        prop_assume!(trace.log_value() > NEG);
        let weights = trace.input_weights().unwrap();
        for (i, w) in weights.iter().enumerate() {
            let want = brute_force_marginals(&f, &t, i).unwrap();
            for (a, b) in w.values().iter().zip(&want) {
                prop_assert!(*a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-10);
            }
            if w.axes().len() == t.len() {
                prop_assert!((w.total() - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn plated_marginals_are_log_derivatives(inst in instance(true)) {
        let (t, f) = inst.build();
        let sigs: Vec<FactorSignature> = f.iter().map(LogFactor::signature).collect();
        let plan = plan_contraction(&sigs, &t).unwrap();
        let refs: Vec<FactorRef> = f.iter().map(FactorRef::from).collect();
        let trace = execute_traced(&plan, &refs).unwrap();
        prop_assume!(trace.log_value() > NEG);
        let weights = trace.input_weights().unwrap();
        let h = 1e-6;
        for (i, w) in weights.iter().enumerate() {
            for e in 0..f[i].len() {
                if f[i].values()[e] == NEG {
                    prop_assert_eq!(w.values()[e], 0.0);
                    continue;
                }
                let bump = |d: f64| {
                    let mut g = f.clone();
                    let mut v = g[i].values().to_vec();
                    v[e] += d;
                    g[i] = LogFactor::from_parts(g[i].axes().to_vec(), g[i].shape().to_vec(), v).unwrap();
                    brute_force_log_contraction(&g, &t)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                prop_assert!((fd - w.values()[e]).abs() <= 1e-6, "{fd} vs {}", w.values()[e]);
            }
        }
    }
}
