//! Proposal distributions and the three ways of drawing K particles.

mod batch;

use std::collections::HashMap;

use crate::error::{GraphError, Result};
use crate::model::{Family, ModelGraph, Node, ParamRef, ParamStore, Params, Role};

pub use batch::{LatentSamples, SampleBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProposalKind {
    /// K independent joint draws.
    Global,
    /// K iid draws per latent, each from a uniform mixture over parent particles.
    Tmc,
    /// Each particle is tied to exactly one parent particle by a permutation.
    Mp,
}

/// Per-latent conditional proposals `q(z_i | z_qa(i))` and their φ.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalGraph {
    kind: ProposalKind,
    nodes: Vec<Node>,
    phi: ParamStore,
    order: Vec<usize>,
}

/// Collects one proposal family per model latent.
#[derive(Clone, Debug)]
pub struct ProposalBuilder<'m> {
    model: &'m ModelGraph,
    kind: ProposalKind,
    nodes: HashMap<String, (Vec<String>, Family)>,
    phi: ParamStore,
}

impl<'m> ProposalBuilder<'m> {
    pub fn new(model: &'m ModelGraph, kind: ProposalKind) -> Self {
        Self {
            model,
            kind,
            nodes: HashMap::new(),
            phi: ParamStore::new(),
        }
    }

    pub fn param(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Result<ParamRef> {
        let index = self.phi.add(name, rows, cols, values)?;
        Ok(ParamRef {
            role: Role::Proposal,
            index,
        })
    }

    /// Sets the proposal of latent `name`. Parent slots in the family's
    /// expressions refer to positions in `parents`.
    pub fn latent(&mut self, name: &str, parents: &[&str], family: Family) -> Result<&mut Self> {
        if self.model.latent_index(name).is_none() {
            return Err(GraphError::UndeclaredParent {
                child: "proposal".into(),
                parent: name.to_string(),
            }
            .into());
        }
        if self
            .nodes
            .insert(name.to_string(), (parents.iter().map(|s| s.to_string()).collect(), family))
            .is_some()
        {
            return Err(GraphError::Duplicate(name.to_string()).into());
        }
        Ok(self)
    }

    pub fn build(self) -> Result<ProposalGraph> {
        let model = self.model;
        let mut nodes = Vec::with_capacity(model.latents().len());
        for l in model.latents() {
            let (parents, family) = self.nodes.get(&l.name).ok_or_else(|| GraphError::Invalid {
                node: l.name.clone(),
                msg: "latent has no proposal".into(),
            })?;
            let mut idx = Vec::with_capacity(parents.len());
            for p in parents {
                let pi = model.latent_index(p).ok_or_else(|| GraphError::UndeclaredParent {
                    child: l.name.clone(),
                    parent: p.clone(),
                })?;
                let child_chain = model.plate_chain(l.plate);
                if !child_chain.starts_with(&model.plate_chain(model.latents()[pi].plate)) {
                    return Err(GraphError::CrossPlate {
                        child: l.name.clone(),
                        parent: p.clone(),
                    }
                    .into());
                }
                idx.push(pi);
            }
            if family.value_dim() != l.family.value_dim() || family.is_discrete() != l.family.is_discrete() {
                return Err(GraphError::Invalid {
                    node: l.name.clone(),
                    msg: "proposal family does not match the latent's support".into(),
                }
                .into());
            }
            nodes.push(Node {
                name: l.name.clone(),
                plate: l.plate,
                parents: idx,
                family: family.clone(),
            });
        }
        ProposalGraph::assemble(model, self.kind, nodes, self.phi)
    }
}

impl ProposalGraph {
    fn assemble(model: &ModelGraph, kind: ProposalKind, nodes: Vec<Node>, phi: ParamStore) -> Result<Self> {
        let params = Params {
            model: model.theta(),
            proposal: &phi,
        };
        for n in &nodes {
            n.family.validate_shape(&n.name)?;
            let dims: Vec<usize> = n.parents.iter().map(|&p| nodes[p].family.value_dim()).collect();
            for e in n.family.exprs() {
                e.check(&n.name, &dims, &[], params, model.members(n.plate))?;
            }
        }
        let n = nodes.len();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            match (0..n).find(|&i| !placed[i] && nodes[i].parents.iter().all(|&p| placed[p])) {
                Some(i) => {
                    placed[i] = true;
                    order.push(i);
                }
                None => {
                    let stuck = (0..n).filter(|&i| !placed[i]).map(|i| nodes[i].name.clone()).collect();
                    return Err(GraphError::Cycle(stuck).into());
                }
            }
        }
        Ok(Self {
            kind,
            nodes,
            phi,
            order,
        })
    }

    /// The model's own conditionals used as the proposal, with `qa = pa`.
    /// The families keep reading θ, which the proposal never updates.
    pub fn from_prior(model: &ModelGraph, kind: ProposalKind) -> Result<Self> {
        let nodes = model.latents().to_vec();
        Self::assemble(model, kind, nodes, ParamStore::new())
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    /// The same proposal with a different sampling scheme.
    pub fn with_kind(&self, kind: ProposalKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    /// One node per model latent, in model order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn phi(&self) -> &ParamStore {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut ParamStore {
        &mut self.phi
    }

    /// Order in which latents are sampled.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_mean_field(&self) -> bool {
        self.nodes.iter().all(|n| n.parents.is_empty())
    }

    pub(crate) fn params<'a>(&'a self, model: &'a ModelGraph) -> Params<'a> {
        Params {
            model: model.theta(),
            proposal: &self.phi,
        }
    }
}
