use crate::error::{Error, Result};
use crate::estimator::{log_evidence, FactorSet};
use crate::model::{Dataset, ModelGraph};
use crate::proposals::{ProposalGraph, ProposalKind, SampleBatch};

/// Most batches [`expected_evidence`] will enumerate.
const MAX_BATCHES: usize = 5_000_000;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for at in 0..=p.len() {
            let mut v = p.clone();
            v.insert(at, k - 1);
            out.push(v);
        }
    }
    out
}

/// Every way to assign `k` parent indices: all permutations under MP,
/// all `k^k` sequences under TMC, only the identity for a global batch.
fn ancestor_choices(kind: ProposalKind, k: usize) -> Vec<Vec<usize>> {
    match kind {
        ProposalKind::Mp => permutations(k),
        ProposalKind::Tmc => (0..k.pow(k as u32))
            .map(|c| {
                let mut rem = c;
                let mut v = vec![0; k];
                for x in v.iter_mut().rev() {
                    *x = rem % k;
                    rem /= k;
                }
                v
            })
            .collect(),
        ProposalKind::Global => vec![(0..k).collect()],
    }
}

/// One way the sampler could have drawn latent `i`, with its probability.
struct Outcome {
    values: Vec<f64>,
    ancestors: Vec<Vec<usize>>,
    log_prob: f64,
}

fn odometer(radix: &[usize], mut c: usize) -> Vec<usize> {
    let mut out = vec![0; radix.len()];
    for (o, r) in out.iter_mut().zip(radix).rev() {
        *o = c % r;
        c /= r;
    }
    out
}

fn outcomes(
    model: &ModelGraph,
    q: &ProposalGraph,
    i: usize,
    k: usize,
    drawn: &[Vec<f64>],
) -> Result<Vec<Outcome>> {
    let node = &q.nodes()[i];
    let support = node
        .family
        .support_size()
        .ok_or_else(|| Error::Capability(format!("`{}` is not discrete", node.name)))?;
    let members = model.members(node.plate);
    let choices = ancestor_choices(q.kind(), k);
    let np = node.parents.len();
    // Per member: one ancestor choice per parent, one value per particle.
    let mut radix = Vec::new();
    for _ in 0..members {
        radix.extend(std::iter::repeat_n(choices.len(), np));
        radix.extend(std::iter::repeat_n(support, k));
    }
    let total = radix
        .iter()
        .try_fold(1usize, |acc, r| acc.checked_mul(*r).filter(|t| *t <= MAX_BATCHES))
        .ok_or_else(|| Error::Capability("too many batches to enumerate".into()))?;
    let params = q.params(model);
    let mut out = Vec::with_capacity(total);
    for c in 0..total {
        let digits = odometer(&radix, c);
        let mut values = vec![0.0; members * k];
        let mut ancestors = vec![vec![0; members * k]; np];
        let mut log_prob = 0.0;
        let per = np + k;
        for m in 0..members {
            let d = &digits[m * per..(m + 1) * per];
            for j in 0..np {
                if q.kind() != ProposalKind::Global {
                    log_prob -= (choices.len() as f64).ln();
                }
                ancestors[j][m * k..(m + 1) * k].copy_from_slice(&choices[d[j]]);
            }
            for kk in 0..k {
                let v = d[np + kk] as f64;
                values[m * k + kk] = v;
                let parents: Vec<&[f64]> = node
                    .parents
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let pm = model.outer_member(node.plate, model.latents()[p].plate, m);
                        let a = ancestors[j][m * k + kk];
                        &drawn[p][pm * k + a..pm * k + a + 1]
                    })
                    .collect();
                let ctx = crate::model::EvalCtx {
                    params,
                    parents: &parents,
                    covariates: &[],
                    member: m,
                };
                let mut raw = vec![0.0; node.family.raw_len()];
                node.family.eval_raw(&ctx, &mut raw);
                log_prob += node.family.distributions(&raw)?[0].log_prob(v);
            }
        }
        if log_prob > f64::NEG_INFINITY {
            out.push(Outcome {
                values,
                ancestors,
                log_prob,
            });
        }
    }
    Ok(out)
}

/// Exact `E[P̂]` over the sampler's randomness for a discrete, scalar
/// proposal: every batch the sampler can produce (values, permutations or
/// parent draws) is enumerated, scored with the estimator, and weighted by
/// its probability. An unbiased estimator gives `P(x)`.
pub fn expected_evidence(model: &ModelGraph, q: &ProposalGraph, data: &Dataset, k: usize) -> Result<f64> {
    if q.nodes().iter().any(|n| n.family.value_dim() != 1) {
        return Err(Error::Capability("only scalar latents are enumerated".into()));
    }
    let n = q.nodes().len();
    let mut drawn: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut anc: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n];
    let mut total = 0.0;
    let mut visited = 0usize;
    recurse(model, q, data, k, 0, 0.0, &mut drawn, &mut anc, &mut total, &mut visited)?;
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    model: &ModelGraph,
    q: &ProposalGraph,
    data: &Dataset,
    k: usize,
    depth: usize,
    log_prob: f64,
    drawn: &mut Vec<Vec<f64>>,
    anc: &mut Vec<Vec<Vec<usize>>>,
    total: &mut f64,
    visited: &mut usize,
) -> Result<()> {
    if depth == q.order().len() {
        *visited += 1;
        if *visited > MAX_BATCHES {
            return Err(Error::Capability("too many batches to enumerate".into()));
        }
        let batch = SampleBatch::from_particles(model, q, k, drawn.clone(), anc.clone())?;
        let fs = FactorSet::build(model, &batch, data)?;
        let est = log_evidence(&fs)?.log_value;
        *total += (log_prob + est).exp();
        return Ok(());
    }
    let i = q.order()[depth];
    for o in outcomes(model, q, i, k, drawn)? {
        drawn[i] = o.values;
        anc[i] = o.ancestors;
        recurse(model, q, data, k, depth + 1, log_prob + o.log_prob, drawn, anc, total, visited)?;
    }
    Ok(())
}
