use crate::error::{Error, Result};
use crate::estimator::{FactorSet, FactorSource, NodeFactor};
use crate::log_tensor::{execute_traced, log_sum_exp, Weights};
use crate::model::{Dataset, GradientStore, ModelGraph, Node, Role};
use crate::proposals::{ProposalGraph, ProposalKind, SampleBatch};

/// Ascent directions for θ and φ from one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RwsGradients {
    pub theta: GradientStore,
    pub phi: GradientStore,
    pub log_evidence: f64,
}

fn model_node<'m>(model: &'m ModelGraph, f: &NodeFactor<'_>) -> &'m Node {
    match f.source() {
        FactorSource::Latent(i) => &model.latents()[i],
        FactorSource::Data(j) | FactorSource::ExtraData(j) => &model.data()[j].node,
    }
}

/// Posterior weight of each particle of latent `i`, `members × K`, summed
/// over the other axes of its factor.
fn particle_weights(f: &NodeFactor<'_>, w: &Weights, members: usize, k: usize) -> Vec<f64> {
    let mut marg = vec![0.0; members * k];
    let values = w.values();
    f.for_each_pos(|flat, p| marg[p.member * k + p.particle] += values[flat]);
    marg
}

/// The wake-phase updates
/// `Δθ = Σ W ∇θ log P` over every factor entry and
/// `Δφ = Σ W ∇φ log q` over latent entries, where `W` are the posterior
/// weights of the contraction. For mixture proposals the φ term is spread over
/// mixture components by their responsibilities. Particles are constants.
///
/// Equivalently, `Δθ = ∇θ log P̂` and `Δφ = -∇φ log P̂` with the batch fixed.
pub fn rws_update(
    model: &ModelGraph,
    q: &ProposalGraph,
    batch: &SampleBatch,
    fs: &FactorSet<'_>,
) -> Result<RwsGradients> {
    let plan = fs.plan()?;
    let refs = fs.refs();
    let trace = execute_traced(&plan, &refs)?;
    let weights = trace.input_weights()?;
    let k = batch.k();
    let mut theta = GradientStore::zeros_like(model.theta());
    let mut phi = GradientStore::zeros_like(q.phi());
    for (f, w) in fs.factors().iter().zip(&weights) {
        let node = model_node(model, f);
        if node.family.uses_role(Role::Model) {
            let mut acc = f.table.grad_buffer();
            let values = w.values();
            f.for_each_pos(|flat, p| {
                let wv = values[flat];
                if wv != 0.0 {
                    f.table.add_grad(&mut acc, f.table.key_of(p.member), p.tuple, f.x_at(p), wv);
                }
            });
            f.table.backprop(node, &acc, Role::Model, &mut theta);
        }
        let FactorSource::Latent(i) = f.source() else {
            continue;
        };
        let qn = &q.nodes()[i];
        if !qn.family.uses_role(Role::Proposal) {
            continue;
        }
        let s = batch.latent(i);
        let marg = particle_weights(f, w, s.members, k);
        let qt = &batch.tables[i];
        let mut acc = qt.grad_buffer();
        let mut resp = vec![0.0; qt.tuples];
        for m in 0..s.members {
            let key = qt.key_of(m);
            for kk in 0..k {
                let wv = marg[m * k + kk];
                if wv == 0.0 {
                    continue;
                }
                let x = s.value(m, kk);
                if batch.kind() == ProposalKind::Global {
                    qt.add_grad(&mut acc, key, qt.tuple_of(&[kk]), x, wv);
                } else {
                    qt.mixture_log_prob(key, x, Some(&mut resp));
                    for (t, r) in resp.iter().enumerate() {
                        qt.add_grad(&mut acc, key, t, x, wv * r);
                    }
                }
            }
        }
        qt.backprop(qn, &acc, Role::Proposal, &mut phi);
    }
    Ok(RwsGradients {
        theta,
        phi,
        log_evidence: trace.log_value(),
    })
}

/// The global-proposal updates, with self-normalized weights `r_k / Σ r`.
pub fn rws_update_global(
    model: &ModelGraph,
    q: &ProposalGraph,
    batch: &SampleBatch,
    data: &Dataset,
) -> Result<RwsGradients> {
    if batch.kind() != ProposalKind::Global {
        return Err(Error::Capability("expected a global batch".into()));
    }
    let fs = FactorSet::build(model, batch, data)?;
    rws_update(model, q, batch, &fs)
}

/// Self-normalized estimate of `E[g(z_i)]` under the posterior, for each
/// plate member of latent `i`. Returns the member results concatenated.
pub fn posterior_moment(
    fs: &FactorSet<'_>,
    batch: &SampleBatch,
    latent: usize,
    g: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let at = fs
        .factors()
        .iter()
        .position(|f| f.source() == FactorSource::Latent(latent))
        .ok_or_else(|| Error::Lookup(format!("no factor for latent {latent}")))?;
    let f = &fs.factors()[at];
    let plan = fs.plan()?;
    let trace = execute_traced(&plan, &fs.refs())?;
    let weights = trace.input_weights()?;
    let s = batch.latent(latent);
    let k = batch.k();
    let marg = particle_weights(f, &weights[at], s.members, k);
    let mut out: Vec<f64> = Vec::new();
    for m in 0..s.members {
        let mut acc: Vec<f64> = Vec::new();
        for kk in 0..k {
            let v = g(s.value(m, kk));
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            if v.len() != acc.len() {
                return Err(Error::Shape("moment function changed its output width".into()));
            }
            for (a, x) in acc.iter_mut().zip(v) {
                *a += marg[m * k + kk] * x;
            }
        }
        out.extend(acc);
    }
    Ok(out)
}

/// Self-normalized estimate of `E[g(z)]` for a `g` that does not factor over
/// latents, by visiting every index combination. Only small models without
/// plates and with at most three latents are accepted.
pub fn posterior_moment_joint(
    fs: &FactorSet<'_>,
    batch: &SampleBatch,
    g: impl Fn(&[&[f64]]) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let n = batch.latents().len();
    if n > 3 || batch.latents().iter().any(|l| l.members != 1) {
        return Err(Error::Capability(
            "joint moments need a declared factorization beyond three latents or with plates".into(),
        ));
    }
    let k = batch.k();
    let global = batch.kind() == ProposalKind::Global;
    let combos = if global { k } else { k.pow(n as u32) };
    let table = fs.axis_table();
    let dense = fs.dense()?;
    let mut logs = Vec::with_capacity(combos);
    let mut picks = Vec::with_capacity(combos);
    let mut assign = vec![0usize; table.len()];
    for c in 0..combos {
        let mut ks = vec![0; n];
        let mut rem = c;
        for x in ks.iter_mut().rev() {
            *x = if global { c } else { rem % k };
            rem /= k;
        }
        for (info, a) in table.iter().zip(assign.iter_mut()) {
            *a = if global {
                c
            } else {
                let name = info.name.name();
                let li = fs
                    .factors()
                    .iter()
                    .zip(&dense)
                    .find_map(|(f, d)| match f.source() {
                        FactorSource::Latent(i) if d.axes().first() == Some(&info.name) => Some(i),
                        _ => None,
                    })
                    .ok_or_else(|| Error::Lookup(format!("axis {name} has no latent")))?;
                ks[li]
            };
        }
        let lr: f64 = dense
            .iter()
            .map(|d| {
                let idx: Vec<usize> = d.axes().iter().map(|a| assign[table.position(a).unwrap()]).collect();
                d.get(&idx)
            })
            .sum();
        logs.push(lr);
        picks.push(ks);
    }
    let z = log_sum_exp(&logs);
    if z == f64::NEG_INFINITY {
        return Err(Error::DegenerateEvidence);
    }
    let mut out: Vec<f64> = Vec::new();
    for (l, ks) in logs.iter().zip(&picks) {
        let vals: Vec<&[f64]> = ks.iter().enumerate().map(|(i, &kk)| batch.latent(i).value(0, kk)).collect();
        let v = g(&vals);
        if out.is_empty() {
            out = vec![0.0; v.len()];
        }
        let w = (l - z).exp();
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(out)
}
