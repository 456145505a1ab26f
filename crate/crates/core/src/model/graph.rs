use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, GraphError, Result};

use super::dataset::{Dataset, NodeData};
use super::expr::EvalCtx;
use super::family::Family;
use super::params::{ParamRef, ParamStore, Params, Role};

#[derive(Clone, Debug, PartialEq)]
pub struct Plate {
    pub name: String,
    pub size: usize,
    pub parent: Option<usize>,
}

/// A latent or observed node after name resolution. Parents are latent
/// indices in the graph's (topological) latent order.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub plate: Option<usize>,
    pub parents: Vec<usize>,
    pub family: Family,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataNode {
    pub node: Node,
    /// Covariate names and widths, one vector per plate member.
    pub covariates: Vec<(String, usize)>,
}

/// One value array per latent, `members × dim` in row-major order.
pub type Assignment = Vec<Vec<f64>>;

#[derive(Clone, Debug)]
struct PendingNode {
    name: String,
    plate: Option<usize>,
    parents: Vec<String>,
    family: Family,
}

/// Declares plates, latents, data nodes and θ, then validates them into a
/// [`ModelGraph`].
#[derive(Clone, Debug, Default)]
pub struct ModelBuilder {
    plates: Vec<Plate>,
    latents: Vec<PendingNode>,
    data: Vec<(PendingNode, Vec<(String, usize)>)>,
    theta: ParamStore,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a plate nested inside `parent`, or at the top level.
    pub fn plate(&mut self, name: &str, size: usize, parent: Option<usize>) -> Result<usize> {
        if self.plates.iter().any(|p| p.name == name) {
            return Err(GraphError::Duplicate(name.to_string()).into());
        }
        if size == 0 {
            return Err(GraphError::Invalid {
                node: name.to_string(),
                msg: "plate size must be positive".into(),
            }
            .into());
        }
        if parent.is_some_and(|p| p >= self.plates.len()) {
            return Err(GraphError::UnknownPlate(format!("#{}", parent.unwrap())).into());
        }
        self.plates.push(Plate {
            name: name.to_string(),
            size,
            parent,
        });
        Ok(self.plates.len() - 1)
    }

    pub fn param(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Result<ParamRef> {
        let index = self.theta.add(name, rows, cols, values)?;
        Ok(ParamRef {
            role: Role::Model,
            index,
        })
    }

    /// Declares a latent. Expression parent slots refer to positions in
    /// `parents`.
    pub fn latent(&mut self, name: &str, plate: Option<usize>, parents: &[&str], family: Family) -> &mut Self {
        self.latents.push(PendingNode {
            name: name.to_string(),
            plate,
            parents: parents.iter().map(|s| s.to_string()).collect(),
            family,
        });
        self
    }

    pub fn data(
        &mut self,
        name: &str,
        plate: Option<usize>,
        parents: &[&str],
        family: Family,
        covariates: &[(&str, usize)],
    ) -> &mut Self {
        self.data.push((
            PendingNode {
                name: name.to_string(),
                plate,
                parents: parents.iter().map(|s| s.to_string()).collect(),
                family,
            },
            covariates.iter().map(|(n, d)| (n.to_string(), *d)).collect(),
        ));
        self
    }

    /// Latent names in a topological order, or the first structural problem.
    ///
    /// Among latents whose parents are all placed, declaration order decides.
    pub fn validate(&self) -> Result<Vec<String>, GraphError> {
        let mut index = HashMap::new();
        for (i, l) in self.latents.iter().enumerate() {
            if index.insert(l.name.as_str(), i).is_some() || self.data.iter().any(|(d, _)| d.name == l.name) {
                return Err(GraphError::Duplicate(l.name.clone()));
            }
        }
        let mut seen_data = HashMap::new();
        for (d, _) in &self.data {
            if seen_data.insert(d.name.as_str(), ()).is_some() {
                return Err(GraphError::Duplicate(d.name.clone()));
            }
        }
        let nodes = self.latents.iter().chain(self.data.iter().map(|(d, _)| d));
        for n in nodes {
            if n.plate.is_some_and(|p| p >= self.plates.len()) {
                return Err(GraphError::UnknownPlate(format!("{} (for {})", n.plate.unwrap(), n.name)));
            }
            for p in &n.parents {
                let Some(&pi) = index.get(p.as_str()) else {
                    return Err(GraphError::UndeclaredParent {
                        child: n.name.clone(),
                        parent: p.clone(),
                    });
                };
                let child_chain = chain_of(&self.plates, n.plate);
                let parent_chain = chain_of(&self.plates, self.latents[pi].plate);
                if !child_chain.starts_with(&parent_chain) {
                    return Err(GraphError::CrossPlate {
                        child: n.name.clone(),
                        parent: p.clone(),
                    });
                }
            }
            if let Some(p) = n.parents.iter().enumerate().find_map(|(i, p)| n.parents[..i].contains(p).then_some(p)) {
                return Err(GraphError::Invalid {
                    node: n.name.clone(),
                    msg: format!("parent `{p}` listed twice"),
                });
            }
        }

        let n = self.latents.len();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let next = (0..n).find(|&i| {
                !placed[i] && self.latents[i].parents.iter().all(|p| placed[index[p.as_str()]])
            });
            match next {
                Some(i) => {
                    placed[i] = true;
                    order.push(i);
                }
                None => {
                    let stuck = (0..n).filter(|&i| !placed[i]).collect::<Vec<_>>();
                    return Err(GraphError::Cycle(find_cycle(&self.latents, &index, &stuck)));
                }
            }
        }
        Ok(order.into_iter().map(|i| self.latents[i].name.clone()).collect())
    }

    pub fn build(self) -> Result<ModelGraph> {
        let order = self.validate()?;
        let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let resolve = |p: &PendingNode| Node {
            name: p.name.clone(),
            plate: p.plate,
            parents: p.parents.iter().map(|n| pos[n.as_str()]).collect(),
            family: p.family.clone(),
        };
        let latents: Vec<Node> = order
            .iter()
            .map(|n| resolve(self.latents.iter().find(|l| &l.name == n).expect("validated")))
            .collect();
        let data = self
            .data
            .iter()
            .map(|(d, c)| DataNode {
                node: resolve(d),
                covariates: c.clone(),
            })
            .collect();
        let graph = ModelGraph {
            plates: self.plates,
            latents,
            data,
            theta: self.theta,
        };
        graph.check_expressions()?;
        Ok(graph)
    }
}

fn chain_of(plates: &[Plate], mut plate: Option<usize>) -> Vec<usize> {
    let mut chain = Vec::new();
    while let Some(p) = plate {
        chain.push(p);
        plate = plates[p].parent;
    }
    chain.reverse();
    chain
}

fn find_cycle(latents: &[PendingNode], index: &HashMap<&str, usize>, stuck: &[usize]) -> Vec<String> {
    // Every stuck node has a stuck parent, so walking parents must revisit.
    let mut path = vec![stuck[0]];
    loop {
        let cur = *path.last().unwrap();
        let next = latents[cur]
            .parents
            .iter()
            .map(|p| index[p.as_str()])
            .find(|p| stuck.contains(p))
            .expect("stuck node has a stuck parent");
        if let Some(start) = path.iter().position(|&p| p == next) {
            return path[start..].iter().rev().map(|&i| latents[i].name.clone()).collect();
        }
        path.push(next);
    }
}

/// A validated generative model. Latents are stored in topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    plates: Vec<Plate>,
    latents: Vec<Node>,
    data: Vec<DataNode>,
    theta: ParamStore,
}

impl ModelGraph {
    pub fn plates(&self) -> &[Plate] {
        &self.plates
    }

    pub fn latents(&self) -> &[Node] {
        &self.latents
    }

    pub fn data(&self) -> &[DataNode] {
        &self.data
    }

    pub fn theta(&self) -> &ParamStore {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut ParamStore {
        &mut self.theta
    }

    pub fn latent_index(&self, name: &str) -> Option<usize> {
        self.latents.iter().position(|l| l.name == name)
    }

    pub fn latent_names(&self) -> Vec<String> {
        self.latents.iter().map(|l| l.name.clone()).collect()
    }

    /// Plates enclosing `plate`, outermost first, ending with `plate` itself.
    pub fn plate_chain(&self, plate: Option<usize>) -> Vec<usize> {
        chain_of(&self.plates, plate)
    }

    /// Number of replicated copies of a node in `plate`.
    pub fn members(&self, plate: Option<usize>) -> usize {
        self.plate_chain(plate).iter().map(|&p| self.plates[p].size).product()
    }

    /// Flat member index of the enclosing copy at plate level `outer`, for
    /// member `m` of a node at level `inner`. Members are numbered with the
    /// outermost plate varying slowest.
    pub fn outer_member(&self, inner: Option<usize>, outer: Option<usize>, m: usize) -> usize {
        m / (self.members(inner) / self.members(outer))
    }

    fn check_expressions(&self) -> Result<(), GraphError> {
        let empty = ParamStore::new();
        let params = Params {
            model: &self.theta,
            proposal: &empty,
        };
        let check = |n: &Node, cov: &[usize]| -> Result<(), GraphError> {
            n.family.validate_shape(&n.name)?;
            let dims: Vec<usize> = n.parents.iter().map(|&p| self.latents[p].family.value_dim()).collect();
            let members = self.members(n.plate);
            for e in n.family.exprs() {
                e.check(&n.name, &dims, cov, params, members)?;
                if e.uses_role(Role::Proposal) {
                    return Err(GraphError::Invalid {
                        node: n.name.clone(),
                        msg: "model refers to a proposal parameter".into(),
                    });
                }
            }
            Ok(())
        };
        for l in &self.latents {
            check(l, &[])?;
        }
        for d in &self.data {
            let cov: Vec<usize> = d.covariates.iter().map(|c| c.1).collect();
            check(&d.node, &cov)?;
        }
        Ok(())
    }

    /// Distribution argument vector of `node` for member `m`, reading parent
    /// values from `values` (one array per latent).
    pub(crate) fn node_raw(
        &self,
        node: &Node,
        m: usize,
        values: &[&[f64]],
        covariates: &[&[f64]],
        params: Params<'_>,
        out: &mut [f64],
    ) {
        let parents: Vec<&[f64]> = node
            .parents
            .iter()
            .map(|&p| {
                let pn = &self.latents[p];
                let d = pn.family.value_dim();
                let pm = self.outer_member(node.plate, pn.plate, m);
                &values[p][pm * d..(pm + 1) * d]
            })
            .collect();
        let ctx = EvalCtx {
            params,
            parents: &parents,
            covariates,
            member: m,
        };
        node.family.eval_raw(&ctx, out);
    }

    fn no_proposal<'a>(&'a self, empty: &'a ParamStore) -> Params<'a> {
        Params {
            model: &self.theta,
            proposal: empty,
        }
    }

    /// Ancestral sampling of every latent and data node. `covariates` holds,
    /// per data node, one array per declared covariate (`members × width`);
    /// pass an empty slice for models without covariates.
    pub fn generate_synthetic<R: Rng + ?Sized>(
        &self,
        covariates: &[Vec<Vec<f64>>],
        rng: &mut R,
    ) -> Result<(Assignment, Dataset)> {
        let z = self.sample_latents(rng)?;
        let data = self.sample_data(&z, covariates, rng)?;
        Ok((z, data))
    }

    /// Ancestral draw of every latent from the prior.
    pub fn sample_latents<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Assignment> {
        let empty = ParamStore::new();
        let params = self.no_proposal(&empty);
        let mut values: Assignment = Vec::with_capacity(self.latents.len());
        for l in &self.latents {
            let kind = l.family.kind();
            let d = kind.value_dim();
            let members = self.members(l.plate);
            let mut raw = vec![0.0; l.family.raw_len()];
            let mut prep = vec![0.0; kind.prep_len()];
            let mut out = vec![0.0; members * d];
            for m in 0..members {
                let refs: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
                self.node_raw(l, m, &refs, &[], params, &mut raw);
                kind.prepare(&raw, l.family.total_count(), &mut prep)?;
                kind.sample(&prep, rng, &mut out[m * d..(m + 1) * d]);
            }
            values.push(out);
        }
        Ok(values)
    }

    /// Draws every data node given the latents `z`. `covariates[i]` holds the
    /// covariate arrays of data node `i`.
    pub fn sample_data<R: Rng + ?Sized>(
        &self,
        z: &Assignment,
        covariates: &[Vec<Vec<f64>>],
        rng: &mut R,
    ) -> Result<Dataset> {
        self.check_assignment(z)?;
        let empty = ParamStore::new();
        let params = self.no_proposal(&empty);
        let refs: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
        let mut nodes = Vec::with_capacity(self.data.len());
        for (i, dn) in self.data.iter().enumerate() {
            let cov = match covariates.get(i) {
                Some(c) => c.clone(),
                None if dn.covariates.is_empty() => Vec::new(),
                None => {
                    return Err(Error::Data(format!("no covariates supplied for `{}`", dn.node.name)))
                }
            };
            let members = self.members(dn.node.plate);
            let kind = dn.node.family.kind();
            let d = kind.value_dim();
            let mut node_data = NodeData {
                values: vec![0.0; members * d],
                covariates: cov,
            };
            self.check_node_data(dn, &node_data)?;
            let mut raw = vec![0.0; dn.node.family.raw_len()];
            let mut prep = vec![0.0; kind.prep_len()];
            let mut obs = vec![0.0; members * d];
            for m in 0..members {
                let cov = node_data.member_covariates(m, &dn.covariates);
                self.node_raw(&dn.node, m, &refs, &cov, params, &mut raw);
                kind.prepare(&raw, dn.node.family.total_count(), &mut prep)?;
                kind.sample(&prep, rng, &mut obs[m * d..(m + 1) * d]);
            }
            node_data.values = obs;
            nodes.push(node_data);
        }
        Ok(Dataset::new(nodes))
    }

    pub(crate) fn check_node_data(&self, dn: &DataNode, nd: &NodeData) -> Result<()> {
        let members = self.members(dn.node.plate);
        let d = dn.node.family.value_dim();
        if nd.values.len() != members * d {
            return Err(Error::Shape(format!(
                "data `{}` has {} values for {members} members",
                dn.node.name,
                nd.values.len()
            )));
        }
        if nd.covariates.len() != dn.covariates.len() {
            return Err(Error::Shape(format!(
                "data `{}` has {} covariate arrays, expected {}",
                dn.node.name,
                nd.covariates.len(),
                dn.covariates.len()
            )));
        }
        for (c, (name, w)) in nd.covariates.iter().zip(&dn.covariates) {
            if c.len() != members * w {
                return Err(Error::Shape(format!(
                    "covariate `{name}` of `{}` has {} values, expected {}",
                    dn.node.name,
                    c.len(),
                    members * w
                )));
            }
        }
        Ok(())
    }

    /// Checks that a dataset lines up with the data nodes.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        if data.nodes().len() != self.data.len() {
            return Err(Error::Shape(format!(
                "dataset has {} nodes, model has {}",
                data.nodes().len(),
                self.data.len()
            )));
        }
        for (dn, nd) in self.data.iter().zip(data.nodes()) {
            self.check_node_data(dn, nd)?;
        }
        Ok(())
    }

    /// Sum of every prior and likelihood log-density at one assignment.
    pub fn log_joint(&self, z: &[Vec<f64>], data: &Dataset) -> Result<f64> {
        self.check_assignment(z)?;
        self.check_dataset(data)?;
        let empty = ParamStore::new();
        let params = self.no_proposal(&empty);
        let refs: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
        let mut total = 0.0;
        for (i, l) in self.latents.iter().enumerate() {
            total += self.node_log_prob(l, &refs, refs[i], &[], params, None)?;
        }
        for (dn, nd) in self.data.iter().zip(data.nodes()) {
            total += self.node_log_prob(&dn.node, &refs, &nd.values, &nd.covariates, params, Some(&dn.covariates))?;
        }
        Ok(total)
    }

    fn check_assignment(&self, z: &[Vec<f64>]) -> Result<()> {
        if z.len() != self.latents.len() {
            return Err(Error::Lookup(format!(
                "assignment covers {} of {} latents",
                z.len(),
                self.latents.len()
            )));
        }
        for (l, v) in self.latents.iter().zip(z) {
            let want = self.members(l.plate) * l.family.value_dim();
            if v.len() != want {
                return Err(Error::Lookup(format!(
                    "latent `{}` has {} values, expected {want}",
                    l.name,
                    v.len()
                )));
            }
        }
        Ok(())
    }

    fn node_log_prob(
        &self,
        node: &Node,
        values: &[&[f64]],
        x: &[f64],
        covariates: &[Vec<f64>],
        params: Params<'_>,
        widths: Option<&[(String, usize)]>,
    ) -> Result<f64> {
        let kind = node.family.kind();
        let d = kind.value_dim();
        let mut raw = vec![0.0; node.family.raw_len()];
        let mut prep = vec![0.0; kind.prep_len()];
        let mut total = 0.0;
        for m in 0..self.members(node.plate) {
            let cov: Vec<&[f64]> = match widths {
                Some(w) => covariates
                    .iter()
                    .zip(w)
                    .map(|(c, (_, cw))| &c[m * cw..(m + 1) * cw])
                    .collect(),
                None => Vec::new(),
            };
            self.node_raw(node, m, values, &cov, params, &mut raw);
            kind.prepare(&raw, node.family.total_count(), &mut prep)?;
            total += kind.log_prob(&prep, &x[m * d..(m + 1) * d]);
        }
        Ok(total)
    }
}
