//! Small models with known answers, and random instances small enough for
//! the explicit oracles.

use rand::Rng;

use crate::error::Result;
use crate::model::{Dataset, Expr, Family, ModelBuilder, ModelGraph, NodeData, Term};
use crate::proposals::{ProposalBuilder, ProposalGraph, ProposalKind};

/// A model, a proposal over it and observed data.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: ModelGraph,
    pub q: ProposalGraph,
    pub data: Dataset,
}

/// `z ~ N(m, 1)`, `x ~ N(z, 1)` with `m` the parameter `prior_mean`, and a
/// proposal `N(a, exp(b))` with parameters `q.mean`, `q.log_var`.
pub fn conjugate_gaussian(prior_mean: f64, x: f64, q_mean: f64, q_log_var: f64, kind: ProposalKind) -> Result<Instance> {
    let mut b = ModelBuilder::new();
    let m = b.param("prior_mean", 1, 1, vec![prior_mean])?;
    b.latent("z", None, &[], Family::normal(Expr::param(1, m), Expr::zeros(1)));
    b.data("x", None, &["z"], Family::normal(Expr::parent(1, 0), Expr::zeros(1)), &[]);
    let model = b.build()?;
    let mut q = ProposalBuilder::new(&model, kind);
    let a = q.param("q.mean", 1, 1, vec![q_mean])?;
    let lv = q.param("q.log_var", 1, 1, vec![q_log_var])?;
    q.latent("z", &[], Family::normal(Expr::param(1, a), Expr::param(1, lv)))?;
    let q = q.build()?;
    Ok(Instance {
        model,
        q,
        data: Dataset::new(vec![NodeData::new(vec![x], Vec::new())]),
    })
}

/// Exact `log P(x)` and posterior `(mean, variance)` of [`conjugate_gaussian`].
pub fn conjugate_posterior(prior_mean: f64, x: f64) -> (f64, f64, f64) {
    let log_px = -0.5 * ((2.0 * std::f64::consts::PI * 2.0).ln() + (x - prior_mean).powi(2) / 2.0);
    (log_px, 0.5 * (prior_mean + x), 0.5)
}

/// Two discrete latents and one observation:
/// `a ~ Cat(softmax θ_a)` over 3 values, `b | a ~ Bernoulli(σ(θ_b + s a))`,
/// `x | a, b ~ Bernoulli(σ(θ_x + a - 2b))`. The proposal has the same shape
/// with its own parameters and `qa(b) = {a}`.
pub fn discrete_pair<R: Rng + ?Sized>(rng: &mut R, kind: ProposalKind, x: f64) -> Result<Instance> {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut b = ModelBuilder::new();
    let ta = b.param("a.logits", 1, 3, vec![u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)])?;
    let tb = b.param("b.logit", 1, 1, vec![u(-1.0, 1.0)])?;
    let tx = b.param("x.logit", 1, 1, vec![u(-1.0, 1.0)])?;
    let s = u(-1.5, 1.5);
    b.latent("a", None, &[], Family::categorical(Expr::param(3, ta)));
    b.latent(
        "b",
        None,
        &["a"],
        Family::bernoulli(Expr::param(1, tb).plus(Term::Parent { slot: 0, scale: s })),
    );
    b.data(
        "x",
        None,
        &["a", "b"],
        Family::bernoulli(
            Expr::param(1, tx)
                .plus(Term::Parent { slot: 0, scale: 1.0 })
                .plus(Term::Parent { slot: 1, scale: -2.0 }),
        ),
        &[],
    );
    let model = b.build()?;
    let mut q = ProposalBuilder::new(&model, kind);
    let pa = q.param("q.a.logits", 1, 3, vec![u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)])?;
    let pb = q.param("q.b.logit", 1, 1, vec![u(-1.0, 1.0)])?;
    let qs = u(-1.5, 1.5);
    q.latent("a", &[], Family::categorical(Expr::param(3, pa)))?;
    q.latent(
        "b",
        &["a"],
        Family::bernoulli(Expr::param(1, pb).plus(Term::Parent { slot: 0, scale: qs })),
    )?;
    let q = q.build()?;
    Ok(Instance {
        model,
        q,
        data: Dataset::new(vec![NodeData::new(vec![x], Vec::new())]),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Normal,
    Bernoulli,
    Categorical(usize),
}

/// A random model with `1..=max_latents` scalar latents of mixed families,
/// random parent sets, an optional plate of two members, one or two data
/// nodes drawn from the model, and a proposal whose parent sets differ from
/// the model's.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    kind: ProposalKind,
    max_latents: usize,
    allow_plate: bool,
) -> Result<Instance> {
    let n = rng.random_range(1..=max_latents.max(1));
    let mut b = ModelBuilder::new();
    let plate = if allow_plate && rng.random_bool(0.5) {
        Some(b.plate("p", 2, None)?)
    } else {
        None
    };
    let mut shapes = Vec::with_capacity(n);
    let mut plates = Vec::with_capacity(n);
    let names: Vec<String> = (0..n).map(|i| format!("z{i}")).collect();
    let eligible = |plates: &[Option<usize>], own: Option<usize>| -> Vec<usize> {
        (0..plates.len()).filter(|&j| plates[j].is_none() || plates[j] == own).collect()
    };
    for name in &names {
        let shape = match rng.random_range(0..3) {
            0 => Shape::Normal,
            1 => Shape::Bernoulli,
            _ => Shape::Categorical(rng.random_range(2..=3)),
        };
        let own = if plate.is_some() && rng.random_bool(0.5) { plate } else { None };
        let mut parents: Vec<usize> = eligible(&plates, own)
            .into_iter()
            .filter(|_| rng.random_bool(0.5))
            .collect();
        parents.truncate(2);
        let family = random_family(&mut b, rng, name, shape, parents.len())?;
        let pnames: Vec<&str> = parents.iter().map(|&j| names[j].as_str()).collect();
        b.latent(name, own, &pnames, family);
        shapes.push(shape);
        plates.push(own);
    }
    let n_data = rng.random_range(1..=2);
    for d in 0..n_data {
        let target = rng.random_range(0..n);
        let own = plates[target];
        let mut parents = vec![target];
        if let Some(&extra) = eligible(&plates, own).iter().find(|&&j| j != target && rng.random_bool(0.3)) {
            parents.push(extra);
        }
        let shape = if rng.random_bool(0.5) { Shape::Normal } else { Shape::Bernoulli };
        let name = format!("x{d}");
        let family = random_family(&mut b, rng, &name, shape, parents.len())?;
        let pnames: Vec<&str> = parents.iter().map(|&j| names[j].as_str()).collect();
        b.data(&name, own, &pnames, family, &[]);
    }
    let model = b.build()?;
    let (_, data) = model.generate_synthetic(&[], rng)?;

    let mut qb = ProposalBuilder::new(&model, kind);
    for (i, name) in names.iter().enumerate() {
        let mut parents: Vec<usize> = eligible(&plates[..i], plates[i])
            .into_iter()
            .filter(|_| rng.random_bool(0.5))
            .collect();
        parents.truncate(2);
        let pnames: Vec<&str> = parents.iter().map(|&j| names[j].as_str()).collect();
        let family = random_proposal_family(&mut qb, rng, name, shapes[i], parents.len())?;
        qb.latent(name, &pnames, family)?;
    }
    let q = qb.build()?;
    Ok(Instance { model, q, data })
}

fn parent_terms(mut e: Expr, rng: &mut (impl Rng + ?Sized), n_parents: usize) -> Expr {
    for slot in 0..n_parents {
        e = e.plus(Term::Parent {
            slot,
            scale: rng.random_range(-1.0..1.0),
        });
    }
    e
}

fn random_family<R: Rng + ?Sized>(
    b: &mut ModelBuilder,
    rng: &mut R,
    name: &str,
    shape: Shape,
    n_parents: usize,
) -> Result<Family> {
    Ok(match shape {
        Shape::Normal => {
            let m = b.param(&format!("{name}.mean"), 1, 1, vec![rng.random_range(-1.0..1.0)])?;
            let lv = b.param(&format!("{name}.log_var"), 1, 1, vec![rng.random_range(-1.0..0.5)])?;
            Family::normal(parent_terms(Expr::param(1, m), rng, n_parents), Expr::param(1, lv))
        }
        Shape::Bernoulli => {
            let l = b.param(&format!("{name}.logit"), 1, 1, vec![rng.random_range(-1.0..1.0)])?;
            Family::bernoulli(parent_terms(Expr::param(1, l), rng, n_parents))
        }
        Shape::Categorical(c) => {
            let l = b.param(&format!("{name}.logits"), 1, c, (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())?;
            Family::categorical(Expr::param(c, l))
        }
    })
}

fn random_proposal_family<R: Rng + ?Sized>(
    q: &mut ProposalBuilder<'_>,
    rng: &mut R,
    name: &str,
    shape: Shape,
    n_parents: usize,
) -> Result<Family> {
    Ok(match shape {
        Shape::Normal => {
            let m = q.param(&format!("q.{name}.mean"), 1, 1, vec![rng.random_range(-1.0..1.0)])?;
            let lv = q.param(&format!("q.{name}.log_var"), 1, 1, vec![rng.random_range(-0.5..0.5)])?;
            Family::normal(parent_terms(Expr::param(1, m), rng, n_parents), Expr::param(1, lv))
        }
        Shape::Bernoulli => {
            let l = q.param(&format!("q.{name}.logit"), 1, 1, vec![rng.random_range(-1.0..1.0)])?;
            Family::bernoulli(parent_terms(Expr::param(1, l), rng, n_parents))
        }
        Shape::Categorical(c) => {
            let l = q.param(&format!("q.{name}.logits"), 1, c, (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())?;
            Family::categorical(Expr::param(c, l))
        }
    })
}
