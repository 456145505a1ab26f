use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;

use crate::error::{Error, Result};
use crate::log_tensor::log_mean_exp;
use crate::model::table::{NodeTable, Scheme};
use crate::model::{Dataset, ModelGraph, ParamStore, Params};

/// Bootstrap particle filter over a chain model.
///
/// Particles are propagated through the prior, weighted by every observation
/// attached to the current latent, and resampled multinomially after each
/// weighting. Returns the sum over observation steps of the log mean weight.
pub fn smc_log_evidence<R: Rng + ?Sized>(model: &ModelGraph, data: &Dataset, k: usize, rng: &mut R) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidValue("K must be at least 1".into()));
    }
    if !model.plates().is_empty() {
        return Err(Error::Structure("the particle filter needs a model without plates".into()));
    }
    let n = model.latents().len();
    for (i, l) in model.latents().iter().enumerate() {
        if l.parents.iter().any(|&p| i == 0 || p != i - 1) {
            return Err(Error::Structure(format!("`{}` breaks the chain", l.name)));
        }
    }
    model.check_dataset(data)?;
    let mut attached: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut detached = Vec::new();
    if !data.is_empty() {
        for (j, dn) in model.data().iter().enumerate() {
            match dn.node.parents.as_slice() {
                [] => detached.push(j),
                [p] => attached[*p].push(j),
                _ => {
                    return Err(Error::Structure(format!(
                        "observation `{}` depends on more than one latent",
                        dn.node.name
                    )))
                }
            }
        }
    }

    let empty = ParamStore::new();
    let params = Params {
        model: model.theta(),
        proposal: &empty,
    };
    let mut log_z = 0.0;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &j in &detached {
        let dn = &model.data()[j];
        let nd = data.node(j);
        let t = NodeTable::build(model, &dn.node, &[], 1, Scheme::Diagonal, Some((nd, &dn.covariates)), params)?;
        log_z += t.kind.log_prob(t.row(0, 0), &nd.values);
    }
    for i in 0..n {
        let l = &model.latents()[i];
        let dim = l.family.value_dim();
        let t = {
            let refs: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
            NodeTable::build(model, l, &refs, k, Scheme::Diagonal, None, params)?
        };
        let mut z = vec![0.0; k * dim];
        for kk in 0..k {
            t.kind.sample(t.row(0, t.tuple_of(&[kk])), rng, &mut z[kk * dim..(kk + 1) * dim]);
        }
        if i > 0 {
            values[i - 1] = Vec::new();
        }
        values[i] = z;
        if attached[i].is_empty() {
            continue;
        }
        let mut logw = vec![0.0; k];
        for &j in &attached[i] {
            let dn = &model.data()[j];
            let nd = data.node(j);
            let refs: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
            let dt = NodeTable::build(model, &dn.node, &refs, k, Scheme::Diagonal, Some((nd, &dn.covariates)), params)?;
            for (kk, w) in logw.iter_mut().enumerate() {
                *w += dt.kind.log_prob(dt.row(0, dt.tuple_of(&[kk])), &nd.values);
            }
        }
        let step = log_mean_exp(&logw);
        log_z += step;
        if step == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sampler = WeightedIndex::new(logw.iter().map(|w| (w - mx).exp()))
            .map_err(|e| Error::InvalidValue(format!("resampling weights: {e}")))?;
        let old = std::mem::take(&mut values[i]);
        let mut fresh = Vec::with_capacity(old.len());
        for _ in 0..k {
            let a = sampler.sample(rng);
            fresh.extend_from_slice(&old[a * dim..(a + 1) * dim]);
        }
        values[i] = fresh;
    }
    Ok(log_z)
}
