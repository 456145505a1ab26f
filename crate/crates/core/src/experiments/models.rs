use crate::error::Result;
use crate::model::{Expr, Family, ModelBuilder, ModelGraph, ParamRef, Term};
use crate::proposals::{ProposalBuilder, ProposalGraph, ProposalKind};

/// Prior weights of the MovieLens variance index and the bus year variance.
pub const PSI_WEIGHTS: [f64; 5] = [0.1, 0.5, 0.4, 0.05, 0.05];
pub const BOROUGH_VARIANCE_WEIGHTS: [f64; 5] = [0.1, 0.4, 0.05, 0.5, 0.05];
pub const WEIGHT_VARIANCE_WEIGHTS: [f64; 5] = [0.1, 0.4, 0.5, 0.05, 0.05];
pub const BUS_TOTAL_COUNT: f64 = 130.0;

/// Adds a mean-field proposal for a Normal latent: per-member mean and
/// log-variance, started at `N(0, 1)`.
fn normal_site(q: &mut ProposalBuilder<'_>, name: &str, members: usize, dim: usize) -> Result<()> {
    let mean = q.param(&format!("{name}.mean"), members, dim, vec![0.0; members * dim])?;
    let lv = q.param(&format!("{name}.log_var"), members, dim, vec![0.0; members * dim])?;
    q.latent(
        name,
        &[],
        Family::normal(Expr::member_param(dim, mean), Expr::member_param(dim, lv)),
    )?;
    Ok(())
}

/// Adds a mean-field proposal for a categorical latent with uniform start.
fn categorical_site(q: &mut ProposalBuilder<'_>, name: &str, members: usize, categories: usize) -> Result<()> {
    let logits: ParamRef = q.param(&format!("{name}.logits"), members, categories, vec![0.0; members * categories])?;
    q.latent(name, &[], Family::categorical(Expr::member_param(categories, logits)))?;
    Ok(())
}

/// Hierarchical rating model:
/// `μ ~ N(0, I)`, `ψ ~ Cat(w)`, `z_m ~ N(μ, exp(ψ) I)` per user and
/// `rating_mj ~ Bernoulli(σ(z_m · x_mj))` per rated film, with a mean-field
/// proposal in the same families.
pub fn build_movielens(users: usize, films_per_user: usize, feature_dim: usize) -> Result<(ModelGraph, ProposalGraph)> {
    let mut b = ModelBuilder::new();
    let u = b.plate("users", users, None)?;
    let f = b.plate("films", films_per_user, Some(u))?;
    b.latent("mu", None, &[], Family::normal(Expr::zeros(feature_dim), Expr::zeros(1)));
    b.latent("psi", None, &[], Family::categorical_weights(&PSI_WEIGHTS)?);
    b.latent(
        "z",
        Some(u),
        &["mu", "psi"],
        Family::normal(Expr::parent(feature_dim, 0), Expr::parent(1, 1)),
    );
    b.data(
        "rating",
        Some(f),
        &["z"],
        Family::bernoulli(Expr::zeros(1).plus(Term::ParentDot { slot: 0, covariate: 0 })),
        &[("features", feature_dim)],
    );
    let model = b.build()?;
    let mut q = ProposalBuilder::new(&model, ProposalKind::Mp);
    normal_site(&mut q, "mu", 1, feature_dim)?;
    categorical_site(&mut q, "psi", 1, PSI_WEIGHTS.len())?;
    normal_site(&mut q, "z", users, feature_dim)?;
    let q = q.build()?;
    Ok((model, q))
}

/// Three-level regression for bus delays, with years enclosing boroughs
/// enclosing route ids. Variance latents are category indices used through
/// `exp`. The delay is negative binomial with total count 130 and logit
/// `IdMean + C · company + J · journey` over one-hot covariates.
pub fn build_bus(
    years: usize,
    boroughs: usize,
    ids: usize,
    companies: usize,
    journeys: usize,
) -> Result<(ModelGraph, ProposalGraph)> {
    let mut b = ModelBuilder::new();
    let y = b.plate("years", years, None)?;
    let bo = b.plate("boroughs", boroughs, Some(y))?;
    let id = b.plate("ids", ids, Some(bo))?;
    b.latent("year_variance", None, &[], Family::categorical_weights(&PSI_WEIGHTS)?);
    b.latent(
        "year_mean",
        None,
        &[],
        Family::normal(Expr::zeros(1), Expr::constant(1, 1e-4f64.ln())),
    );
    b.latent(
        "borough_mean",
        Some(y),
        &["year_mean", "year_variance"],
        Family::normal(Expr::parent(1, 0), Expr::parent(1, 1)),
    );
    b.latent(
        "borough_variance",
        Some(bo),
        &[],
        Family::categorical_weights(&BOROUGH_VARIANCE_WEIGHTS)?,
    );
    b.latent(
        "id_mean",
        Some(bo),
        &["borough_mean", "borough_variance"],
        Family::normal(Expr::parent(1, 0), Expr::parent(1, 1)),
    );
    b.latent(
        "weight_variance",
        Some(id),
        &[],
        Family::categorical_weights(&WEIGHT_VARIANCE_WEIGHTS)?,
    );
    b.latent(
        "company_weights",
        Some(id),
        &["weight_variance"],
        Family::normal(Expr::zeros(companies), Expr::parent(1, 0)),
    );
    b.latent(
        "journey_weights",
        Some(id),
        &["weight_variance"],
        Family::normal(Expr::zeros(journeys), Expr::parent(1, 0)),
    );
    let logit = Expr::parent(1, 0)
        .plus(Term::ParentDot { slot: 1, covariate: 0 })
        .plus(Term::ParentDot { slot: 2, covariate: 1 });
    b.data(
        "delay",
        Some(id),
        &["id_mean", "company_weights", "journey_weights"],
        Family::negative_binomial(BUS_TOTAL_COUNT, logit),
        &[("company", companies), ("journey", journeys)],
    );
    let model = b.build()?;
    let members = |n: &str| model.members(model.latents()[model.latent_index(n).unwrap()].plate);
    let mut q = ProposalBuilder::new(&model, ProposalKind::Mp);
    categorical_site(&mut q, "year_variance", 1, 5)?;
    normal_site(&mut q, "year_mean", 1, 1)?;
    normal_site(&mut q, "borough_mean", members("borough_mean"), 1)?;
    categorical_site(&mut q, "borough_variance", members("borough_variance"), 5)?;
    normal_site(&mut q, "id_mean", members("id_mean"), 1)?;
    categorical_site(&mut q, "weight_variance", members("weight_variance"), 5)?;
    normal_site(&mut q, "company_weights", members("company_weights"), companies)?;
    normal_site(&mut q, "journey_weights", members("journey_weights"), journeys)?;
    let q = q.build()?;
    Ok((model, q))
}

fn ts_name(i: usize) -> String {
    format!("z{i}")
}

/// Random walk from a fixed start `z_1 = 0` with increments of variance
/// `1/N`, observed once through `x ~ N(z_N, 1)`. The proposal is the prior.
pub fn build_ts_single(n: usize) -> Result<(ModelGraph, ProposalGraph)> {
    if n < 2 {
        return Err(crate::Error::InvalidValue("the chain needs N >= 2".into()));
    }
    let lv = Expr::constant(1, (1.0 / n as f64).ln());
    let mut b = ModelBuilder::new();
    // z_1 is the constant 0, so z_2 is centred at zero.
    b.latent(&ts_name(2), None, &[], Family::normal(Expr::zeros(1), lv.clone()));
    for i in 3..=n {
        let prev = ts_name(i - 1);
        b.latent(&ts_name(i), None, &[&prev], Family::normal(Expr::parent(1, 0), lv.clone()));
    }
    b.data(
        "x",
        None,
        &[&ts_name(n)],
        Family::normal(Expr::parent(1, 0), Expr::zeros(1)),
        &[],
    );
    let model = b.build()?;
    let q = ProposalGraph::from_prior(&model, ProposalKind::Mp)?;
    Ok((model, q))
}

/// Mean-reverting walk `z_1 ~ N(0, 1)`, `z_i ~ N((1 - 1/τ) z_{i-1}, 2/τ)`,
/// observed as `x_i ~ N(z_i, 1)` at every index divisible by 3. The proposal
/// is the prior.
pub fn build_ts_multi(n: usize, tau: f64) -> Result<(ModelGraph, ProposalGraph)> {
    if n < 2 || !(tau > 0.0 && tau.is_finite()) {
        return Err(crate::Error::InvalidValue("the chain needs N >= 2 and τ > 0".into()));
    }
    let lv = Expr::constant(1, (2.0 / tau).ln());
    let mut b = ModelBuilder::new();
    b.latent(&ts_name(1), None, &[], Family::normal(Expr::zeros(1), Expr::zeros(1)));
    for i in 2..=n {
        let prev = ts_name(i - 1);
        let mean = Expr::zeros(1).plus(Term::Parent {
            slot: 0,
            scale: 1.0 - 1.0 / tau,
        });
        b.latent(&ts_name(i), None, &[&prev], Family::normal(mean, lv.clone()));
    }
    for i in (3..=n).step_by(3) {
        b.data(
            &format!("x{i}"),
            None,
            &[&ts_name(i)],
            Family::normal(Expr::parent(1, 0), Expr::zeros(1)),
            &[],
        );
    }
    let model = b.build()?;
    let q = ProposalGraph::from_prior(&model, ProposalKind::Mp)?;
    Ok((model, q))
}
