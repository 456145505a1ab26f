use crate::distributions::LN_2PI;
use crate::error::{Error, Result};
use crate::log_tensor::log_sum_exp;
use crate::model::{Dataset, EvalCtx, Expr, Family, ModelGraph, ParamStore, Params, Term};

/// Largest number of joint assignments enumerated.
const MAX_ASSIGNMENTS: usize = 10_000_000;

/// Exact `log P(x)` for models small enough to enumerate or linear-Gaussian
/// chains.
pub fn exact_log_evidence(model: &ModelGraph, data: &Dataset) -> Result<f64> {
    if model.latents().iter().all(|l| l.family.support_size().is_some()) {
        return enumerate_evidence(model, data);
    }
    if let Some(chain) = LinearChain::from_model(model)? {
        return chain.log_evidence(model, data);
    }
    Err(Error::Capability(
        "exact evidence needs a fully discrete model or a linear-Gaussian chain".into(),
    ))
}

/// Sums the joint over every assignment of every latent member.
pub fn enumerate_evidence(model: &ModelGraph, data: &Dataset) -> Result<f64> {
    let mut slots = Vec::new();
    for (i, l) in model.latents().iter().enumerate() {
        let s = l.family.support_size().ok_or_else(|| {
            Error::Capability(format!("`{}` has an infinite support", l.name))
        })?;
        for m in 0..model.members(l.plate) {
            slots.push((i, m, s));
        }
    }
    let total = slots
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.2).filter(|t| *t <= MAX_ASSIGNMENTS))
        .ok_or_else(|| Error::Capability("too many assignments to enumerate".into()))?;
    let mut z: Vec<Vec<f64>> = model
        .latents()
        .iter()
        .map(|l| vec![0.0; model.members(l.plate)])
        .collect();
    let mut terms = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        for &(i, m, s) in slots.iter().rev() {
            z[i][m] = (rem % s) as f64;
            rem /= s;
        }
        terms.push(model.log_joint(&z, data)?);
    }
    Ok(log_sum_exp(&terms))
}

/// `z_i ~ N(a_i z_{i-1} + b_i, v_i)` with `x ~ N(c z + d, r)` observations.
struct LinearChain {
    steps: Vec<(bool, f64, f64, f64)>,
}

/// Slope, intercept and variance of a scalar Normal whose mean is affine in
/// one parent and whose variance is fixed.
fn gaussian_parts(model: &ModelGraph, family: &Family) -> Option<(f64, f64, f64)> {
    let Family::Normal { mean, log_var } = family else {
        return None;
    };
    if mean.dim() != 1
        || log_var.parent_slots().next().is_some()
        || mean.terms().iter().any(|t| matches!(t, Term::ParentDot { .. }))
        || mean.member_dependent()
        || log_var.member_dependent()
    {
        return None;
    }
    let empty = ParamStore::new();
    let params = Params {
        model: model.theta(),
        proposal: &empty,
    };
    let eval = |e: &Expr, v: f64| {
        let p = [v];
        let parents: Vec<&[f64]> = vec![&p[..]; 1];
        let ctx = EvalCtx {
            params,
            parents: &parents,
            covariates: &[],
            member: 0,
        };
        let mut out = [0.0];
        e.eval_into(&ctx, &mut out);
        out[0]
    };
    let b = eval(mean, 0.0);
    Some((eval(mean, 1.0) - b, b, eval(log_var, 0.0).exp()))
}

impl LinearChain {
    fn from_model(model: &ModelGraph) -> Result<Option<Self>> {
        if !model.plates().is_empty() {
            return Ok(None);
        }
        let mut steps = Vec::new();
        for (i, l) in model.latents().iter().enumerate() {
            let linked = match l.parents.as_slice() {
                [] => false,
                [p] if i > 0 && *p == i - 1 => true,
                _ => return Ok(None),
            };
            let Some((a, b, v)) = gaussian_parts(model, &l.family) else {
                return Ok(None);
            };
            steps.push((linked, a, b, v));
        }
        for d in model.data() {
            if d.node.parents.len() > 1 || gaussian_parts(model, &d.node.family).is_none() {
                return Ok(None);
            }
        }
        Ok(Some(Self { steps }))
    }

    /// Filters forward, adding the predictive density of each observation.
    fn log_evidence(&self, model: &ModelGraph, data: &Dataset) -> Result<f64> {
        model.check_dataset(data)?;
        let mut total = 0.0;
        let obs = |latent: Option<usize>| -> Vec<(f64, f64, f64, f64)> {
            if data.is_empty() {
                return Vec::new();
            }
            model
                .data()
                .iter()
                .zip(data.nodes())
                .filter(|(d, _)| d.node.parents.first().copied() == latent)
                .map(|(d, nd)| {
                    let (c, e, r) = gaussian_parts(model, &d.node.family).expect("checked");
                    (c, e, r, nd.values[0])
                })
                .collect()
        };
        for (_, e, r, x) in obs(None) {
            total += normal_log_pdf(x, e, r);
        }
        let (mut m, mut v) = (0.0, 0.0);
        for (i, &(linked, a, b, q)) in self.steps.iter().enumerate() {
            if linked {
                m = a * m + b;
                v = a * a * v + q;
            } else {
                m = b;
                v = q;
            }
            for (c, e, r, x) in obs(Some(i)) {
                let s = c * c * v + r;
                total += normal_log_pdf(x, c * m + e, s);
                let gain = c * v / s;
                m += gain * (x - c * m - e);
                v *= 1.0 - gain * c;
            }
        }
        Ok(total)
    }
}

fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}
