use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::table::{NodeTable, Scheme};
use crate::model::ModelGraph;

use super::{ProposalGraph, ProposalKind};

/// The K particles of one latent across its plate members.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSamples {
    pub members: usize,
    pub k: usize,
    pub dim: usize,
    /// `members × K × dim`.
    pub values: Vec<f64>,
    /// `members × K`. The conditional density for global batches; the
    /// single-particle mixture marginal otherwise.
    pub log_q: Vec<f64>,
    /// For each proposal parent, the parent particle each `(member, k)` was
    /// drawn from, `members × K`.
    pub ancestors: Vec<Vec<usize>>,
}

impl LatentSamples {
    pub fn value(&self, member: usize, k: usize) -> &[f64] {
        let at = (member * self.k + k) * self.dim;
        &self.values[at..at + self.dim]
    }
}

/// K particles for every latent, plus the proposal densities the estimators
/// divide by.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    kind: ProposalKind,
    k: usize,
    latents: Vec<LatentSamples>,
    pub(crate) tables: Vec<NodeTable>,
}

fn scheme(kind: ProposalKind) -> Scheme {
    match kind {
        ProposalKind::Global => Scheme::Diagonal,
        ProposalKind::Tmc | ProposalKind::Mp => Scheme::Product,
    }
}

impl SampleBatch {
    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// One entry per model latent, in model order.
    pub fn latents(&self) -> &[LatentSamples] {
        &self.latents
    }

    pub fn latent(&self, i: usize) -> &LatentSamples {
        &self.latents[i]
    }

    /// `log q(z^k)` of each joint draw of a global batch.
    pub fn joint_log_q(&self) -> Option<Vec<f64>> {
        if self.kind != ProposalKind::Global {
            return None;
        }
        let mut out = vec![0.0; self.k];
        for l in &self.latents {
            for m in 0..l.members {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += l.log_q[m * self.k + k];
                }
            }
        }
        Some(out)
    }

    pub(crate) fn value_refs(&self) -> Vec<&[f64]> {
        self.latents.iter().map(|l| l.values.as_slice()).collect()
    }

    /// Draws a batch according to the proposal's kind.
    pub fn sample<R: Rng + ?Sized>(model: &ModelGraph, q: &ProposalGraph, k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidValue("K must be at least 1".into()));
        }
        let params = q.params(model);
        let n = q.nodes().len();
        let mut latents: Vec<Option<LatentSamples>> = vec![None; n];
        let mut tables: Vec<Option<NodeTable>> = (0..n).map(|_| None).collect();
        for &i in q.order() {
            let node = &q.nodes()[i];
            let members = model.members(node.plate);
            let dim = node.family.value_dim();
            let ancestors: Vec<Vec<usize>> = node
                .parents
                .iter()
                .map(|_| draw_ancestors(q.kind(), members, k, rng))
                .collect();
            let table = {
                let refs: Vec<&[f64]> = latents
                    .iter()
                    .map(|l| l.as_ref().map_or(&[][..], |l| l.values.as_slice()))
                    .collect();
                NodeTable::build(model, node, &refs, k, scheme(q.kind()), None, params)?
            };
            let mut values = vec![0.0; members * k * dim];
            let mut ks = vec![0; node.parents.len()];
            for m in 0..members {
                let key = table.key_of(m);
                for kk in 0..k {
                    for (j, a) in ancestors.iter().enumerate() {
                        ks[j] = a[m * k + kk];
                    }
                    let row = table.row(key, table.tuple_of(&ks));
                    let at = (m * k + kk) * dim;
                    table.kind.sample(row, rng, &mut values[at..at + dim]);
                }
            }
            let log_q = proposal_log_q(q.kind(), &table, members, k, dim, &values);
            latents[i] = Some(LatentSamples {
                members,
                k,
                dim,
                values,
                log_q,
                ancestors,
            });
            tables[i] = Some(table);
        }
        Ok(Self {
            kind: q.kind(),
            k,
            latents: latents.into_iter().map(|l| l.expect("every latent sampled")).collect(),
            tables: tables.into_iter().map(|t| t.expect("every latent sampled")).collect(),
        })
    }

    /// A batch with given particle values and ancestor indices, scored under
    /// the proposal. `values[i]` is `members × K × dim` for latent `i`. Global
    /// particles always condition on their own index, so their ancestors are
    /// only recorded.
    pub fn from_particles(
        model: &ModelGraph,
        q: &ProposalGraph,
        k: usize,
        values: Vec<Vec<f64>>,
        ancestors: Vec<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        let n = q.nodes().len();
        if values.len() != n || ancestors.len() != n {
            return Err(Error::Shape(format!("particles for {} of {n} latents", values.len())));
        }
        let params = q.params(model);
        let refs: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
        let mut latents = Vec::with_capacity(n);
        let mut tables = Vec::with_capacity(n);
        for (node, (v, a)) in q.nodes().iter().zip(values.iter().zip(ancestors)) {
            let members = model.members(node.plate);
            let dim = node.family.value_dim();
            if v.len() != members * k * dim || a.len() != node.parents.len() || a.iter().any(|x| x.len() != members * k)
            {
                return Err(Error::Shape(format!("particles of `{}` have the wrong shape", node.name)));
            }
            if a.iter().flatten().any(|&x| x >= k) {
                return Err(Error::InvalidValue(format!("ancestor index out of range for `{}`", node.name)));
            }
            let table = NodeTable::build(model, node, &refs, k, scheme(q.kind()), None, params)?;
            let log_q = proposal_log_q(q.kind(), &table, members, k, dim, v);
            latents.push(LatentSamples {
                members,
                k,
                dim,
                values: v.clone(),
                log_q,
                ancestors: a,
            });
            tables.push(table);
        }
        Ok(Self {
            kind: q.kind(),
            k,
            latents,
            tables,
        })
    }

    /// Mixture marginal `log (1/K^|qa|) Σ_parents q(x | parents)` of latent
    /// `i` at arbitrary candidate values, using this batch's parent particles.
    /// `values` holds `members × n × dim` candidates; the result is `members × n`.
    pub fn mixture_log_density(
        &self,
        model: &ModelGraph,
        q: &ProposalGraph,
        i: usize,
        values: &[f64],
    ) -> Result<Vec<f64>> {
        let node = &q.nodes()[i];
        let members = model.members(node.plate);
        let dim = node.family.value_dim();
        if !values.len().is_multiple_of(members * dim) {
            return Err(Error::Shape("candidate values do not tile the plate".into()));
        }
        let n = values.len() / (members * dim);
        let table = NodeTable::build(
            model,
            node,
            &self.value_refs(),
            self.k,
            Scheme::Product,
            None,
            q.params(model),
        )?;
        let mut out = Vec::with_capacity(members * n);
        for m in 0..members {
            let key = table.key_of(m);
            for j in 0..n {
                let at = (m * n + j) * dim;
                out.push(table.mixture_log_prob(key, &values[at..at + dim], None));
            }
        }
        Ok(out)
    }
}

fn draw_ancestors<R: Rng + ?Sized>(kind: ProposalKind, members: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut a = Vec::with_capacity(members * k);
    for _ in 0..members {
        match kind {
            ProposalKind::Global => a.extend(0..k),
            ProposalKind::Tmc => a.extend((0..k).map(|_| rng.random_range(0..k))),
            ProposalKind::Mp => {
                let start = a.len();
                a.extend(0..k);
                a[start..].shuffle(rng);
            }
        }
    }
    a
}

fn proposal_log_q(kind: ProposalKind, table: &NodeTable, members: usize, k: usize, dim: usize, values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(members * k);
    let mut buf = Vec::with_capacity(table.tuples);
    for m in 0..members {
        let key = table.key_of(m);
        for kk in 0..k {
            let x = &values[(m * k + kk) * dim..(m * k + kk + 1) * dim];
            out.push(match kind {
                ProposalKind::Global => table.kind.log_prob(table.row(key, table.tuple_of(&[kk])), x),
                _ => table.mixture_log_prob_with(key, x, None, &mut buf),
            });
        }
    }
    out
}
