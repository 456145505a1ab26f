use crate::error::Result;

use super::dataset::NodeData;
use super::family::Kind;
use super::graph::{ModelGraph, Node};
use super::params::{GradientStore, Params, Role};

/// How parent particle indices combine into rows of a [`NodeTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Scheme {
    /// Every combination of parent indices: `K^|parents|` rows.
    Product,
    /// All parents share one index, as in a global proposal: `K` rows.
    Diagonal,
}

/// Prepared distribution rows of one node for every parent-index tuple and
/// every distinct member key.
///
/// A node's arguments depend on its member only through parent values unless
/// the family reads per-member parameters or covariates, so rows are shared by
/// members with the same enclosing parent copy.
#[derive(Clone, Debug)]
pub(crate) struct NodeTable {
    pub kind: Kind,
    pub prep_len: usize,
    pub raw_len: usize,
    pub key_div: usize,
    pub keys: usize,
    pub tuples: usize,
    pub k: usize,
    pub n_parents: usize,
    pub scheme: Scheme,
    pub rows: Vec<f64>,
}

impl NodeTable {
    /// `values[p]` holds the particles of latent `p`, laid out
    /// `members × K × dim`. Only parents of `node` are read.
    pub fn build(
        model: &ModelGraph,
        node: &Node,
        values: &[&[f64]],
        k: usize,
        scheme: Scheme,
        data: Option<(&NodeData, &[(String, usize)])>,
        params: Params<'_>,
    ) -> Result<Self> {
        let family = &node.family;
        let kind = family.kind();
        let key_plate = if family.member_dependent() {
            node.plate
        } else {
            node.parents
                .iter()
                .map(|&p| model.latents()[p].plate)
                .max_by_key(|pl| model.plate_chain(*pl).len())
                .flatten()
        };
        let keys = model.members(key_plate);
        let key_div = model.members(node.plate) / keys;
        let n_parents = node.parents.len();
        let tuples = match (scheme, n_parents) {
            (_, 0) => 1,
            (Scheme::Diagonal, _) => k,
            (Scheme::Product, n) => k.pow(n as u32),
        };
        let prep_len = kind.prep_len();
        let raw_len = family.raw_len();
        let mut rows = vec![0.0; keys * tuples * prep_len];
        let mut raw = vec![0.0; raw_len];
        let dims: Vec<usize> = node
            .parents
            .iter()
            .map(|&p| model.latents()[p].family.value_dim())
            .collect();
        let mut ks = vec![0usize; n_parents];
        for key in 0..keys {
            let pms: Vec<usize> = node
                .parents
                .iter()
                .map(|&p| model.outer_member(key_plate, model.latents()[p].plate, key))
                .collect();
            let cov = match data {
                Some((nd, widths)) => nd.member_covariates(key, widths),
                None => Vec::new(),
            };
            for t in 0..tuples {
                decode(scheme, t, k, &mut ks);
                let parents: Vec<&[f64]> = node
                    .parents
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let d = dims[j];
                        let off = (pms[j] * k + ks[j]) * d;
                        &values[p][off..off + d]
                    })
                    .collect();
                let ctx = super::expr::EvalCtx {
                    params,
                    parents: &parents,
                    covariates: &cov,
                    member: key,
                };
                family.eval_raw(&ctx, &mut raw);
                let at = (key * tuples + t) * prep_len;
                kind.prepare(&raw, family.total_count(), &mut rows[at..at + prep_len])?;
            }
        }
        Ok(Self {
            kind,
            prep_len,
            raw_len,
            key_div,
            keys,
            tuples,
            k,
            n_parents,
            scheme,
            rows,
        })
    }

    #[inline]
    pub fn key_of(&self, member: usize) -> usize {
        member / self.key_div
    }

    #[inline]
    pub fn row(&self, key: usize, tuple: usize) -> &[f64] {
        let at = (key * self.tuples + tuple) * self.prep_len;
        &self.rows[at..at + self.prep_len]
    }

    /// Row index of a parent-index tuple.
    #[inline]
    pub fn tuple_of(&self, ks: &[usize]) -> usize {
        if self.n_parents == 0 {
            return 0;
        }
        match self.scheme {
            Scheme::Diagonal => ks[0],
            Scheme::Product => ks.iter().fold(0, |acc, &x| acc * self.k + x),
        }
    }

    /// Log of the uniform mixture over every row of `key`, at `x`. Also
    /// writes each row's responsibility into `resp` when given.
    pub fn mixture_log_prob(&self, key: usize, x: &[f64], resp: Option<&mut [f64]>) -> f64 {
        let mut buf = Vec::with_capacity(self.tuples);
        self.mixture_log_prob_with(key, x, resp, &mut buf)
    }

    /// [`Self::mixture_log_prob`] with a caller-owned scratch buffer.
    pub fn mixture_log_prob_with(&self, key: usize, x: &[f64], resp: Option<&mut [f64]>, buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        let rows = &self.rows[key * self.tuples * self.prep_len..(key + 1) * self.tuples * self.prep_len];
        match self.kind {
            Kind::Normal { dim: 1, var_dim: 1 } => buf.extend(rows.chunks_exact(3).map(|row| {
                let d = x[0] - row[0];
                row[2] - 0.5 * d * d * row[1]
            })),
            kind => buf.extend(rows.chunks_exact(self.prep_len).map(|row| kind.log_prob(row, x))),
        }
        let v = crate::log_tensor::log_mean_exp(buf);
        if let Some(r) = resp {
            if v == f64::NEG_INFINITY {
                r.iter_mut().for_each(|w| *w = 0.0);
            } else {
                let n = self.tuples as f64;
                for (w, l) in r.iter_mut().zip(buf.iter()) {
                    *w = (l - v).exp() / n;
                }
            }
        }
        v
    }

    /// Raw-gradient accumulators, one per key.
    pub fn grad_buffer(&self) -> Vec<f64> {
        vec![0.0; self.keys * self.raw_len]
    }

    #[inline]
    pub fn add_grad(&self, acc: &mut [f64], key: usize, tuple: usize, x: &[f64], w: f64) {
        if w == 0.0 {
            return;
        }
        let a = &mut acc[key * self.raw_len..(key + 1) * self.raw_len];
        self.kind.add_grad(self.row(key, tuple), x, w, a);
    }

    /// Pushes accumulated raw gradients into the parameters of `role`.
    pub fn backprop(&self, node: &Node, acc: &[f64], role: Role, grads: &mut GradientStore) {
        for key in 0..self.keys {
            let g = &acc[key * self.raw_len..(key + 1) * self.raw_len];
            if g.iter().any(|v| *v != 0.0) {
                node.family.backprop(key, g, role, grads);
            }
        }
    }
}

/// Inverse of [`NodeTable::tuple_of`].
pub(crate) fn decode(scheme: Scheme, t: usize, k: usize, ks: &mut [usize]) {
    match scheme {
        Scheme::Diagonal => ks.iter_mut().for_each(|x| *x = t),
        Scheme::Product => {
            let mut rem = t;
            for x in ks.iter_mut().rev() {
                *x = rem % k;
                rem /= k;
            }
        }
    }
}
