use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::distributions::{log_sigmoid, sigmoid, Distribution, LN_2PI};
use crate::error::{Error, Result};

use super::expr::{EvalCtx, Expr};
use super::params::{GradientStore, Role};

/// A conditional distribution whose arguments are expressions of parent
/// values and parameters.
///
/// A Normal of width `d` is a product of `d` independent coordinates; its
/// log-variance is either shared (width one) or per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Normal { mean: Expr, log_var: Expr },
    Categorical { logits: Expr },
    Bernoulli { logit: Expr },
    NegativeBinomial { total_count: f64, logit: Expr },
}

/// Shape information needed to evaluate a prepared parameter row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Kind {
    Normal { dim: usize, var_dim: usize },
    Categorical { categories: usize },
    Bernoulli,
    NegativeBinomial,
}

impl Family {
    pub fn normal(mean: Expr, log_var: Expr) -> Self {
        Family::Normal { mean, log_var }
    }

    pub fn categorical(logits: Expr) -> Self {
        Family::Categorical { logits }
    }

    /// Categorical with fixed weights, normalized with a warning if needed.
    pub fn categorical_weights(weights: &[f64]) -> Result<Self> {
        let Distribution::Categorical { log_probs } = Distribution::categorical(weights)? else {
            unreachable!()
        };
        Ok(Family::Categorical {
            logits: Expr::consts(log_probs),
        })
    }

    pub fn bernoulli(logit: Expr) -> Self {
        Family::Bernoulli { logit }
    }

    pub fn negative_binomial(total_count: f64, logit: Expr) -> Self {
        Family::NegativeBinomial { total_count, logit }
    }

    pub fn exprs(&self) -> Vec<&Expr> {
        match self {
            Family::Normal { mean, log_var } => vec![mean, log_var],
            Family::Categorical { logits } => vec![logits],
            Family::Bernoulli { logit } | Family::NegativeBinomial { logit, .. } => vec![logit],
        }
    }

    /// Width of one value drawn from this family.
    pub fn value_dim(&self) -> usize {
        match self {
            Family::Normal { mean, .. } => mean.dim(),
            _ => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Family::Normal { .. })
    }

    /// Number of values in the support, for finite supports.
    pub fn support_size(&self) -> Option<usize> {
        match self {
            Family::Categorical { logits } => Some(logits.dim()),
            Family::Bernoulli { .. } => Some(2),
            _ => None,
        }
    }

    pub fn member_dependent(&self) -> bool {
        self.exprs().iter().any(|e| e.member_dependent())
    }

    pub fn uses_role(&self, role: Role) -> bool {
        self.exprs().iter().any(|e| e.uses_role(role))
    }

    pub(crate) fn validate_shape(&self, node: &str) -> Result<(), crate::error::GraphError> {
        let bad = |msg: &str| crate::error::GraphError::Invalid {
            node: node.to_string(),
            msg: msg.to_string(),
        };
        match self {
            Family::Normal { mean, log_var } => {
                if mean.dim() == 0 || !(log_var.dim() == 1 || log_var.dim() == mean.dim()) {
                    return Err(bad("normal log-variance width must be 1 or the mean width"));
                }
            }
            Family::Categorical { logits } if logits.dim() == 0 => {
                return Err(bad("categorical needs at least one category"))
            }
            Family::Bernoulli { logit } | Family::NegativeBinomial { logit, .. }
                if logit.dim() != 1 =>
            {
                return Err(bad("logit must be scalar"))
            }
            Family::NegativeBinomial { total_count, .. }
                if !(*total_count > 0.0 && total_count.is_finite()) =>
            {
                return Err(bad("total count must be positive"))
            }
            _ => {}
        }
        Ok(())
    }

    pub(crate) fn kind(&self) -> Kind {
        match self {
            Family::Normal { mean, log_var } => Kind::Normal {
                dim: mean.dim(),
                var_dim: log_var.dim(),
            },
            Family::Categorical { logits } => Kind::Categorical {
                categories: logits.dim(),
            },
            Family::Bernoulli { .. } => Kind::Bernoulli,
            Family::NegativeBinomial { .. } => Kind::NegativeBinomial,
        }
    }

    /// Length of the unconstrained argument vector: the concatenated
    /// expression values.
    pub fn raw_len(&self) -> usize {
        self.exprs().iter().map(|e| e.dim()).sum()
    }

    pub fn eval_raw(&self, ctx: &EvalCtx<'_>, out: &mut [f64]) {
        let mut off = 0;
        for e in self.exprs() {
            e.eval_into(ctx, &mut out[off..off + e.dim()]);
            off += e.dim();
        }
    }

    /// Pushes `g_raw`, the gradient with respect to the argument vector, into
    /// the parameters of `role`.
    pub fn backprop(&self, member: usize, g_raw: &[f64], role: Role, grads: &mut GradientStore) {
        let mut off = 0;
        for e in self.exprs() {
            e.backprop(member, &g_raw[off..off + e.dim()], role, grads);
            off += e.dim();
        }
    }

    /// One scalar [`Distribution`] per coordinate, from an argument vector.
    pub fn distributions(&self, raw: &[f64]) -> Result<Vec<Distribution>> {
        match self {
            Family::Normal { mean, log_var } => {
                let d = mean.dim();
                (0..d)
                    .map(|c| {
                        let lv = if log_var.dim() == 1 { raw[d] } else { raw[d + c] };
                        Distribution::normal_log_var(raw[c], lv)
                    })
                    .collect()
            }
            Family::Categorical { .. } => Ok(vec![Distribution::categorical_logits(raw)?]),
            Family::Bernoulli { .. } => Ok(vec![Distribution::bernoulli_logit(raw[0])?]),
            Family::NegativeBinomial { total_count, .. } => {
                Ok(vec![Distribution::negative_binomial(*total_count, raw[0])?])
            }
        }
    }

    pub(crate) fn total_count(&self) -> f64 {
        match self {
            Family::NegativeBinomial { total_count, .. } => *total_count,
            _ => 0.0,
        }
    }
}

impl Kind {
    /// Width of a prepared row.
    pub(crate) fn prep_len(self) -> usize {
        match self {
            // mean, inverse variance, normalizer
            Kind::Normal { dim, var_dim } => dim + var_dim + 1,
            Kind::Categorical { categories } => categories,
            // logit, ln σ(ℓ), ln σ(-ℓ)
            Kind::Bernoulli => 3,
            // logit, total count, ln σ(ℓ), ln σ(-ℓ), ln Γ(r)
            Kind::NegativeBinomial => 5,
        }
    }

    pub(crate) fn value_dim(self) -> usize {
        match self {
            Kind::Normal { dim, .. } => dim,
            _ => 1,
        }
    }

    /// Converts an argument vector into a prepared row.
    pub(crate) fn prepare(self, raw: &[f64], total_count: f64, out: &mut [f64]) -> Result<()> {
        if raw.iter().any(|r| r.is_nan() || r.is_infinite()) {
            return Err(Error::Parameter(format!("non-finite distribution argument {raw:?}")));
        }
        match self {
            Kind::Normal { dim, var_dim } => {
                out[..dim].copy_from_slice(&raw[..dim]);
                let mut norm = 0.0;
                for c in 0..var_dim {
                    let lv = raw[dim + c];
                    let iv = (-lv).exp();
                    if iv == 0.0 || !iv.is_finite() {
                        return Err(Error::Parameter(format!("normal log-variance {lv}")));
                    }
                    out[dim + c] = iv;
                    norm += LN_2PI + lv;
                }
                if var_dim == 1 {
                    norm *= dim as f64;
                }
                out[dim + var_dim] = -0.5 * norm;
            }
            Kind::Categorical { .. } => {
                let lse = crate::log_tensor::log_sum_exp(raw);
                for (o, r) in out.iter_mut().zip(raw) {
                    *o = r - lse;
                }
            }
            Kind::Bernoulli => {
                out[0] = raw[0];
                out[1] = log_sigmoid(raw[0]);
                out[2] = log_sigmoid(-raw[0]);
            }
            Kind::NegativeBinomial => {
                out[0] = raw[0];
                out[1] = total_count;
                out[2] = log_sigmoid(raw[0]);
                out[3] = log_sigmoid(-raw[0]);
                out[4] = ln_gamma(total_count);
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn log_prob(self, prep: &[f64], x: &[f64]) -> f64 {
        match self {
            Kind::Normal { dim, var_dim } => {
                let mut q = 0.0;
                if var_dim == 1 {
                    for c in 0..dim {
                        let d = x[c] - prep[c];
                        q += d * d;
                    }
                    q *= prep[dim];
                } else {
                    for c in 0..dim {
                        let d = x[c] - prep[c];
                        q += d * d * prep[dim + c];
                    }
                }
                prep[dim + var_dim] - 0.5 * q
            }
            Kind::Categorical { categories } => {
                let v = x[0];
                if v >= 0.0 && v.fract() == 0.0 && (v as usize) < categories {
                    prep[v as usize]
                } else {
                    f64::NEG_INFINITY
                }
            }
            Kind::Bernoulli => {
                if x[0] == 1.0 {
                    prep[1]
                } else if x[0] == 0.0 {
                    prep[2]
                } else {
                    f64::NEG_INFINITY
                }
            }
            Kind::NegativeBinomial => {
                let v = x[0];
                if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                    let r = prep[1];
                    ln_gamma(v + r) - prep[4] - ln_gamma(v + 1.0) + v * prep[2] + r * prep[3]
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Adds `w * ∂ log p(x) / ∂ argument` into `acc`.
    pub(crate) fn add_grad(self, prep: &[f64], x: &[f64], w: f64, acc: &mut [f64]) {
        match self {
            Kind::Normal { dim, var_dim } => {
                if var_dim == 1 {
                    let iv = prep[dim];
                    let mut q = 0.0;
                    for c in 0..dim {
                        let d = x[c] - prep[c];
                        acc[c] += w * d * iv;
                        q += d * d;
                    }
                    acc[dim] += w * 0.5 * (q * iv - dim as f64);
                } else {
                    for c in 0..dim {
                        let iv = prep[dim + c];
                        let d = x[c] - prep[c];
                        acc[c] += w * d * iv;
                        acc[dim + c] += w * 0.5 * (d * d * iv - 1.0);
                    }
                }
            }
            Kind::Categorical { categories } => {
                let v = x[0] as usize;
                for j in 0..categories {
                    let ind = if j == v { 1.0 } else { 0.0 };
                    acc[j] += w * (ind - prep[j].exp());
                }
            }
            Kind::Bernoulli => acc[0] += w * (x[0] - sigmoid(prep[0])),
            Kind::NegativeBinomial => {
                acc[0] += w * (x[0] * sigmoid(-prep[0]) - prep[1] * sigmoid(prep[0]))
            }
        }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(self, prep: &[f64], rng: &mut R, out: &mut [f64]) {
        match self {
            Kind::Normal { dim, var_dim } => {
                for c in 0..dim {
                    let iv = if var_dim == 1 { prep[dim] } else { prep[dim + c] };
                    let z: f64 = StandardNormal.sample(rng);
                    out[c] = prep[c] + z / iv.sqrt();
                }
            }
            Kind::Categorical { categories } => {
                let d = Distribution::Categorical {
                    log_probs: prep[..categories].to_vec(),
                };
                out[0] = d.sample(rng);
            }
            Kind::Bernoulli => {
                let u: f64 = rng.random();
                out[0] = if u < sigmoid(prep[0]) { 1.0 } else { 0.0 };
            }
            Kind::NegativeBinomial => {
                let d = Distribution::NegativeBinomial {
                    total_count: prep[1],
                    logit: prep[0],
                };
                out[0] = d.sample(rng);
            }
        }
    }
}
