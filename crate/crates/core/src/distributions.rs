//! Scalar distributions with closed-form score functions.
//!
//! Gradients are taken with respect to unconstrained parameters: a Normal is
//! parameterized by `[mean, log_variance]`, a Categorical by its logits, and
//! Bernoulli and NegativeBinomial by a single logit.

use rand::Rng;
use rand_distr::{Distribution as _, Gamma, Poisson, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Distribution {
    Normal { mean: f64, log_var: f64 },
    /// Normalized log-probabilities; these double as logits.
    Categorical { log_probs: Vec<f64> },
    Bernoulli { logit: f64 },
    /// Mass `C(x+r-1, x) σ(ℓ)^x σ(-ℓ)^r` with `r` the total count.
    NegativeBinomial { total_count: f64, logit: f64 },
}

/// Partial derivatives of a log-density, in the layout of [`Distribution::params`].
pub type ParamGradient = Vec<f64>;

fn integral(x: f64) -> Option<u64> {
    (x >= 0.0 && x.fract() == 0.0 && x.is_finite()).then_some(x as u64)
}

fn normalize_logits(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Parameter("categorical needs at least one category".into()));
    }
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::Parameter("categorical logits must be finite or -inf".into()));
    }
    let lse = crate::log_tensor::log_sum_exp(logits);
    if lse == f64::NEG_INFINITY {
        return Err(Error::Parameter("categorical weights sum to zero".into()));
    }
    Ok(logits.iter().map(|l| l - lse).collect())
}

impl Distribution {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Parameter(format!("normal variance {variance}")));
        }
        Self::normal_log_var(mean, variance.ln())
    }

    pub fn normal_log_var(mean: f64, log_var: f64) -> Result<Self> {
        if !mean.is_finite() || !log_var.is_finite() {
            return Err(Error::Parameter(format!(
                "normal mean {mean}, log-variance {log_var}"
            )));
        }
        Ok(Distribution::Normal { mean, log_var })
    }

    /// Categorical over `0..weights.len()`. Weights are normalized; a sum away
    /// from one is logged as a warning.
    pub fn categorical(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Parameter("categorical weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Parameter("categorical weights sum to zero".into()));
        }
        if (sum - 1.0).abs() > 1e-9 {
            log::warn!("categorical weights sum to {sum}; normalizing");
        }
        Ok(Distribution::Categorical {
            log_probs: weights.iter().map(|w| (w / sum).ln()).collect(),
        })
    }

    pub fn categorical_logits(logits: &[f64]) -> Result<Self> {
        Ok(Distribution::Categorical {
            log_probs: normalize_logits(logits)?,
        })
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Parameter(format!("bernoulli probability {p}")));
        }
        Self::bernoulli_logit(p.ln() - (-p).ln_1p())
    }

    pub fn bernoulli_logit(logit: f64) -> Result<Self> {
        if !logit.is_finite() {
            return Err(Error::Parameter(format!("bernoulli logit {logit}")));
        }
        Ok(Distribution::Bernoulli { logit })
    }

    pub fn negative_binomial(total_count: f64, logit: f64) -> Result<Self> {
        if !(total_count > 0.0 && total_count.is_finite()) || !logit.is_finite() {
            return Err(Error::Parameter(format!(
                "negative binomial total count {total_count}, logit {logit}"
            )));
        }
        Ok(Distribution::NegativeBinomial { total_count, logit })
    }

    /// Unconstrained parameters, in the order gradients are reported.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Distribution::Normal { mean, log_var } => vec![*mean, *log_var],
            Distribution::Categorical { log_probs } => log_probs.clone(),
            Distribution::Bernoulli { logit } => vec![*logit],
            Distribution::NegativeBinomial { logit, .. } => vec![*logit],
        }
    }

    /// The same family with new unconstrained parameters.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let want = self.params().len();
        if params.len() != want {
            return Err(Error::Parameter(format!(
                "expected {want} parameters, got {}",
                params.len()
            )));
        }
        match self {
            Distribution::Normal { .. } => Self::normal_log_var(params[0], params[1]),
            Distribution::Categorical { .. } => Self::categorical_logits(params),
            Distribution::Bernoulli { .. } => Self::bernoulli_logit(params[0]),
            Distribution::NegativeBinomial { total_count, .. } => {
                Self::negative_binomial(*total_count, params[0])
            }
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Distribution::Normal { .. })
    }

    pub fn mean(&self) -> f64 {
        match self {
            Distribution::Normal { mean, .. } => *mean,
            Distribution::Categorical { log_probs } => log_probs
                .iter()
                .enumerate()
                .map(|(i, l)| i as f64 * l.exp())
                .sum(),
            Distribution::Bernoulli { logit } => sigmoid(*logit),
            Distribution::NegativeBinomial { total_count, logit } => total_count * logit.exp(),
        }
    }

    pub fn log_prob(&self, x: f64) -> f64 {
        match self {
            Distribution::Normal { mean, log_var } => {
                let d = x - mean;
                -0.5 * (LN_2PI + log_var + d * d * (-log_var).exp())
            }
            Distribution::Categorical { log_probs } => match integral(x) {
                Some(i) if (i as usize) < log_probs.len() => log_probs[i as usize],
                _ => f64::NEG_INFINITY,
            },
            Distribution::Bernoulli { logit } => match integral(x) {
                Some(0) => log_sigmoid(-logit),
                Some(1) => log_sigmoid(*logit),
                _ => f64::NEG_INFINITY,
            },
            Distribution::NegativeBinomial { total_count, logit } => match integral(x) {
                Some(_) => {
                    let r = *total_count;
                    ln_gamma(x + r) - ln_gamma(r) - ln_gamma(x + 1.0)
                        + x * log_sigmoid(*logit)
                        + r * log_sigmoid(-logit)
                }
                None => f64::NEG_INFINITY,
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::Normal { mean, log_var } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + (0.5 * log_var).exp() * z
            }
            Distribution::Categorical { log_probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, l) in log_probs.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        return i as f64;
                    }
                }
                // Rounding left `acc` just below one; take the last category
                // with positive mass.
                log_probs
                    .iter()
                    .rposition(|l| *l > f64::NEG_INFINITY)
                    .unwrap_or(0) as f64
            }
            Distribution::Bernoulli { logit } => {
                let u: f64 = rng.random();
                if u < sigmoid(*logit) {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::NegativeBinomial { total_count, logit } => {
                // Gamma-Poisson mixture: rate ~ Gamma(r, p / (1 - p)).
                let scale = logit.exp();
                let rate = Gamma::new(*total_count, scale)
                    .expect("validated parameters")
                    .sample(rng);
                if rate <= 0.0 {
                    0.0
                } else {
                    Poisson::new(rate).map_or(0.0, |p| p.sample(rng))
                }
            }
        }
    }

    /// Score function: derivative of `log_prob(x)` with respect to [`params`](Self::params).
    pub fn grad_log_prob(&self, x: f64) -> Result<ParamGradient> {
        match self {
            Distribution::Normal { mean, log_var } => {
                let inv = (-log_var).exp();
                if !inv.is_finite() || inv == 0.0 {
                    return Err(Error::Parameter(format!(
                        "normal log-variance {log_var} is at a boundary"
                    )));
                }
                let d = x - mean;
                Ok(vec![d * inv, 0.5 * (d * d * inv - 1.0)])
            }
            Distribution::Categorical { log_probs } => {
                let i = integral(x)
                    .filter(|&i| (i as usize) < log_probs.len())
                    .ok_or_else(|| Error::InvalidValue(format!("category {x} out of support")))?;
                Ok(log_probs
                    .iter()
                    .enumerate()
                    .map(|(j, l)| f64::from(j == i as usize) - l.exp())
                    .collect())
            }
            Distribution::Bernoulli { logit } => match integral(x) {
                Some(v @ (0 | 1)) => Ok(vec![v as f64 - sigmoid(*logit)]),
                _ => Err(Error::InvalidValue(format!("bernoulli value {x}"))),
            },
            Distribution::NegativeBinomial { total_count, logit } => match integral(x) {
                Some(_) => Ok(vec![x * sigmoid(-logit) - total_count * sigmoid(*logit)]),
                None => Err(Error::InvalidValue(format!("negative binomial value {x}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_prob_examples() {
        let n = Distribution::normal(0.0, 1.0).unwrap();
        assert!((n.log_prob(0.0) + 0.918_938_533_204_672_7).abs() < 1e-12);
        let b = Distribution::bernoulli(0.5).unwrap();
        assert!((b.log_prob(1.0) - 0.5f64.ln()).abs() < 1e-15);
        let c = Distribution::categorical(&[0.1, 0.5, 0.4, 0.05, 0.05]).unwrap();
        assert!((c.log_prob(1.0) - (0.5f64 / 1.1).ln()).abs() < 1e-12);
        assert!((c.log_prob(1.0) + 0.78846).abs() < 1e-5);
        assert_eq!(c.log_prob(5.0), f64::NEG_INFINITY);
        assert_eq!(c.log_prob(0.5), f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(Distribution::normal(0.0, 0.0).is_err());
        assert!(Distribution::normal(0.0, -1.0).is_err());
        assert!(Distribution::categorical(&[0.0, 0.0]).is_err());
        assert!(Distribution::categorical(&[-0.1, 1.0]).is_err());
        assert!(Distribution::bernoulli(1.0).is_err());
        assert!(Distribution::negative_binomial(0.0, 0.0).is_err());
        let tiny = Distribution::normal_log_var(0.0, -800.0).unwrap();
        assert!(matches!(tiny.grad_log_prob(0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn normal_gradient_examples() {
        let n = Distribution::normal(0.0, 1.0).unwrap();
        assert_eq!(n.grad_log_prob(0.0).unwrap()[0], 0.0);
        let n = Distribution::normal(1.0, 2.0).unwrap();
        assert!((n.grad_log_prob(2.0).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_categorical_always_picks_its_category() {
        let c = Distribution::categorical(&[1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| c.sample(&mut rng) == 0.0));
    }

    #[test]
    fn sampling_is_reproducible() {
        let n = Distribution::negative_binomial(130.0, -3.0).unwrap();
        let draw = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..50).map(|_| n.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }
}
