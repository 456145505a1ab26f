use crate::error::{Error, Result};
use crate::log_tensor::log_sum_exp;
use crate::model::{Dataset, GradientStore, ModelGraph, Node, Params, Role};
use crate::proposals::{ProposalGraph, ProposalKind, SampleBatch};
use crate::training::RwsGradients;

/// Most index combinations an explicit sum will visit.
const MAX_COMBINATIONS: usize = 2_000_000;

/// `log p(x | raw)` summed over coordinates, through the scalar
/// distributions.
fn density(node: &Node, raw: &[f64], x: &[f64]) -> Result<f64> {
    let dists = node.family.distributions(raw)?;
    Ok(dists.iter().zip(x).map(|(d, v)| d.log_prob(*v)).sum())
}

/// Gradient of [`density`] with respect to the argument vector.
fn raw_gradient(node: &Node, raw: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let dists = node.family.distributions(raw)?;
    let mut g = vec![0.0; raw.len()];
    if dists.len() == 1 {
        let d = dists[0].grad_log_prob(x[0])?;
        g[..d.len()].copy_from_slice(&d);
        return Ok(g);
    }
    // Multivariate Normal: one (mean, log-variance) pair per coordinate.
    let dim = dists.len();
    let shared_var = raw.len() == dim + 1;
    for (c, (d, v)) in dists.iter().zip(x).enumerate() {
        let p = d.grad_log_prob(*v)?;
        g[c] = p[0];
        g[if shared_var { dim } else { dim + c }] += p[1];
    }
    Ok(g)
}

/// Every particle of every (latent, member) slot, laid out like a batch.
struct Layout {
    /// `(latent, member)` for each independently indexed slot.
    slots: Vec<(usize, usize)>,
    k: usize,
}

impl Layout {
    fn new(model: &ModelGraph, batch: &SampleBatch) -> Result<Self> {
        let k = batch.k();
        let slots: Vec<(usize, usize)> = if batch.kind() == ProposalKind::Global {
            Vec::new()
        } else {
            model
                .latents()
                .iter()
                .enumerate()
                .flat_map(|(i, l)| (0..model.members(l.plate)).map(move |m| (i, m)))
                .collect()
        };
        let n = if batch.kind() == ProposalKind::Global { 1 } else { slots.len() };
        let mut total = 1usize;
        for _ in 0..n {
            total = total
                .checked_mul(k)
                .filter(|t| *t <= MAX_COMBINATIONS)
                .ok_or_else(|| Error::Capability("too many index combinations to sum explicitly".into()))?;
        }
        Ok(Self { slots, k })
    }

    fn count(&self) -> usize {
        self.k.pow(self.slots.len().max(1) as u32)
    }

    /// Particle index of every (latent, member) in combination `c`.
    fn decode(&self, model: &ModelGraph, c: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<Vec<usize>> = model
            .latents()
            .iter()
            .map(|l| vec![c; model.members(l.plate)])
            .collect();
        let mut rem = c;
        for &(i, m) in self.slots.iter().rev() {
            idx[i][m] = rem % self.k;
            rem /= self.k;
        }
        idx
    }
}

/// One index combination's assignment and score.
struct Combination {
    z: Vec<Vec<f64>>,
    log_p: f64,
    log_q: f64,
}

fn parent_values<'a>(model: &ModelGraph, node: &Node, m: usize, z: &'a [Vec<f64>]) -> Vec<&'a [f64]> {
    node.parents
        .iter()
        .map(|&p| {
            let pn = &model.latents()[p];
            let d = pn.family.value_dim();
            let pm = model.outer_member(node.plate, pn.plate, m);
            &z[p][pm * d..(pm + 1) * d]
        })
        .collect()
}

fn eval_raw(node: &Node, m: usize, parents: &[&[f64]], cov: &[&[f64]], params: Params<'_>) -> Vec<f64> {
    let ctx = crate::model::EvalCtx {
        params,
        parents,
        covariates: cov,
        member: m,
    };
    let mut raw = vec![0.0; node.family.raw_len()];
    node.family.eval_raw(&ctx, &mut raw);
    raw
}

/// Every parent-particle tuple of proposal node `i` at member `m`, as
/// argument vectors. A global batch uses only the tuple of particle `own`.
fn proposal_rows(
    model: &ModelGraph,
    q: &ProposalGraph,
    batch: &SampleBatch,
    i: usize,
    m: usize,
    own: usize,
) -> Vec<Vec<f64>> {
    let node = &q.nodes()[i];
    let params = q.params(model);
    let k = batch.k();
    let np = node.parents.len();
    let tuples = if batch.kind() == ProposalKind::Global { 1 } else { k.pow(np as u32) };
    (0..tuples)
        .map(|t| {
            let mut rem = t;
            let mut ks = vec![0; np];
            for x in ks.iter_mut().rev() {
                *x = rem % k;
                rem /= k;
            }
            if batch.kind() == ProposalKind::Global {
                ks.iter_mut().for_each(|x| *x = own);
            }
            let parents: Vec<&[f64]> = node
                .parents
                .iter()
                .zip(&ks)
                .map(|(&p, &kp)| {
                    let s = batch.latent(p);
                    let pm = model.outer_member(node.plate, model.latents()[p].plate, m);
                    s.value(pm, kp)
                })
                .collect();
            eval_raw(node, m, &parents, &[], params)
        })
        .collect()
}

/// Mixture log-density over `rows` at `x`, with each row's responsibility.
fn mixture(node: &Node, rows: &[Vec<f64>], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let terms = rows.iter().map(|r| density(node, r, x)).collect::<Result<Vec<_>>>()?;
    let lse = log_sum_exp(&terms);
    let resp = if lse == f64::NEG_INFINITY {
        vec![0.0; terms.len()]
    } else {
        terms.iter().map(|t| (t - lse).exp()).collect()
    };
    Ok((lse - (rows.len() as f64).ln(), resp))
}

fn score(
    model: &ModelGraph,
    q: &ProposalGraph,
    batch: &SampleBatch,
    data: &Dataset,
    idx: &[Vec<usize>],
) -> Result<Combination> {
    let z: Vec<Vec<f64>> = idx
        .iter()
        .enumerate()
        .map(|(i, ks)| ks.iter().enumerate().flat_map(|(m, &kk)| batch.latent(i).value(m, kk).to_vec()).collect())
        .collect();
    let empty = crate::model::ParamStore::new();
    let mp = Params {
        model: model.theta(),
        proposal: &empty,
    };
    let mut log_p = 0.0;
    let mut log_q = 0.0;
    for (i, l) in model.latents().iter().enumerate() {
        let d = l.family.value_dim();
        for (m, &kk) in idx[i].iter().enumerate() {
            let x = &z[i][m * d..(m + 1) * d];
            let raw = eval_raw(l, m, &parent_values(model, l, m, &z), &[], mp);
            log_p += density(l, &raw, x)?;
            let rows = proposal_rows(model, q, batch, i, m, kk);
            log_q += mixture(&q.nodes()[i], &rows, x)?.0;
        }
    }
    if !data.is_empty() {
        for (dn, nd) in model.data().iter().zip(data.nodes()) {
            let d = dn.node.family.value_dim();
            for m in 0..model.members(dn.node.plate) {
                let cov = nd.member_covariates(m, &dn.covariates);
                let raw = eval_raw(&dn.node, m, &parent_values(model, &dn.node, m, &z), &cov, mp);
                log_p += density(&dn.node, &raw, &nd.values[m * d..(m + 1) * d])?;
            }
        }
    }
    Ok(Combination { z, log_p, log_q })
}

/// `log (1/K^n) Σ_k P(x, z^k) / Π q(z_i^{k_i})` by visiting every index
/// combination, with a separate index per latent and plate member (a single
/// shared index for a global batch).
pub fn explicit_log_evidence(model: &ModelGraph, q: &ProposalGraph, batch: &SampleBatch, data: &Dataset) -> Result<f64> {
    let layout = Layout::new(model, batch)?;
    let terms = (0..layout.count())
        .map(|c| score(model, q, batch, data, &layout.decode(model, c)).map(|s| s.log_p - s.log_q))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&terms) - (layout.count() as f64).ln())
}

/// Self-normalized weights of every index combination, in decode order.
pub fn explicit_weights(model: &ModelGraph, q: &ProposalGraph, batch: &SampleBatch, data: &Dataset) -> Result<Vec<f64>> {
    let layout = Layout::new(model, batch)?;
    let terms = (0..layout.count())
        .map(|c| score(model, q, batch, data, &layout.decode(model, c)).map(|s| s.log_p - s.log_q))
        .collect::<Result<Vec<_>>>()?;
    let lse = log_sum_exp(&terms);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateEvidence);
    }
    Ok(terms.iter().map(|t| (t - lse).exp()).collect())
}

/// The importance-weighted updates written as explicit sums:
/// `Δθ = Σ_k w_k ∇θ log P(x, z^k)` and `Δφ = Σ_k w_k ∇φ log Q(z^k)`, with
/// `w_k = r_k / Σ r` and per-combination gradients from the scalar
/// distributions' score functions.
pub fn explicit_rws_gradients(
    model: &ModelGraph,
    q: &ProposalGraph,
    batch: &SampleBatch,
    data: &Dataset,
) -> Result<RwsGradients> {
    let layout = Layout::new(model, batch)?;
    let weights = explicit_weights(model, q, batch, data)?;
    let log_evidence = explicit_log_evidence(model, q, batch, data)?;
    let empty = crate::model::ParamStore::new();
    let mp = Params {
        model: model.theta(),
        proposal: &empty,
    };
    let mut theta = GradientStore::zeros_like(model.theta());
    let mut phi = GradientStore::zeros_like(q.phi());
    for (c, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let idx = layout.decode(model, c);
        let comb = score(model, q, batch, data, &idx)?;
        let z = &comb.z;
        for (i, l) in model.latents().iter().enumerate() {
            let d = l.family.value_dim();
            for (m, &kk) in idx[i].iter().enumerate() {
                let x = &z[i][m * d..(m + 1) * d];
                let raw = eval_raw(l, m, &parent_values(model, l, m, z), &[], mp);
                let g: Vec<f64> = raw_gradient(l, &raw, x)?.iter().map(|v| v * w).collect();
                l.family.backprop(m, &g, Role::Model, &mut theta);
                let qn = &q.nodes()[i];
                let rows = proposal_rows(model, q, batch, i, m, kk);
                let (_, resp) = mixture(qn, &rows, x)?;
                for (row, r) in rows.iter().zip(resp) {
                    if r == 0.0 {
                        continue;
                    }
                    let g: Vec<f64> = raw_gradient(qn, row, x)?.iter().map(|v| v * w * r).collect();
                    qn.family.backprop(m, &g, Role::Proposal, &mut phi);
                }
            }
        }
        if !data.is_empty() {
            for (dn, nd) in model.data().iter().zip(data.nodes()) {
                let d = dn.node.family.value_dim();
                for m in 0..model.members(dn.node.plate) {
                    let cov = nd.member_covariates(m, &dn.covariates);
                    let raw = eval_raw(&dn.node, m, &parent_values(model, &dn.node, m, z), &cov, mp);
                    let g: Vec<f64> = raw_gradient(&dn.node, &raw, &nd.values[m * d..(m + 1) * d])?
                        .iter()
                        .map(|v| v * w)
                        .collect();
                    dn.node.family.backprop(m, &g, Role::Model, &mut theta);
                }
            }
        }
    }
    Ok(RwsGradients {
        theta,
        phi,
        log_evidence,
    })
}

/// `Σ_k w_k g(z^k)` over every index combination.
pub fn explicit_posterior_moment(
    model: &ModelGraph,
    q: &ProposalGraph,
    batch: &SampleBatch,
    data: &Dataset,
    g: impl Fn(&[Vec<f64>]) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let layout = Layout::new(model, batch)?;
    let weights = explicit_weights(model, q, batch, data)?;
    let mut out: Vec<f64> = Vec::new();
    for (c, &w) in weights.iter().enumerate() {
        let comb = score(model, q, batch, data, &layout.decode(model, c))?;
        let v = g(&comb.z);
        if out.is_empty() {
            out = vec![0.0; v.len()];
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(out)
}
