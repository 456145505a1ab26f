use crate::error::{Error, Result};
use crate::log_tensor::{
    plan_contraction, AxisName, AxisTable, ContractionPlan, FactorRef, FactorSignature, LazyFactor, LogFactor,
};
use crate::model::table::{NodeTable, Scheme};
use crate::model::{Dataset, ModelGraph, ParamStore, Params};
use crate::proposals::{ProposalKind, SampleBatch};

/// Factors larger than this are evaluated row by row instead of stored.
const LAZY_ENTRIES: usize = 1 << 22;

/// Which node a factor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorSource {
    Latent(usize),
    Data(usize),
    /// A data node evaluated on a second dataset, as in predictive scoring.
    ExtraData(usize),
}

/// Log-factor of one node: `log p(x | parents)` for data, and
/// `log p(z_i | parents) - log q(z_i)` for latents.
///
/// Axes are the node's plate chain, then (for latents under TMC/MP) its own
/// sample axis, then one sample axis per model parent. Under a global
/// proposal all nodes share the single sample axis `k`.
pub struct NodeFactor<'a> {
    source: FactorSource,
    axes: Vec<AxisName>,
    shape: Vec<usize>,
    n_plates: usize,
    global: bool,
    latent: bool,
    k: usize,
    dim: usize,
    pub(crate) table: NodeTable,
    x: &'a [f64],
    log_q: Option<&'a [f64]>,
    dense: Option<LogFactor>,
}

/// Position of one factor entry in model terms.
#[derive(Clone, Copy, Debug)]
pub(crate) struct EntryPos {
    pub member: usize,
    pub particle: usize,
    pub tuple: usize,
}

impl<'a> NodeFactor<'a> {
    pub fn source(&self) -> FactorSource {
        self.source
    }

    pub fn axes(&self) -> &[AxisName] {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn signature(&self) -> FactorSignature {
        FactorSignature {
            axes: self.axes.clone(),
            shape: self.shape.clone(),
        }
    }

    #[inline]
    pub(crate) fn pos(&self, idx: &[usize]) -> EntryPos {
        let np = self.n_plates;
        let mut member = 0;
        for d in 0..np {
            member = member * self.shape[d] + idx[d];
        }
        let (particle, tuple) = if self.global {
            let k = if self.axes.len() > np { idx[np] } else { 0 };
            (k, self.table.tuple_of(&[k]))
        } else if self.latent {
            (idx[np], self.table.tuple_of(&idx[np + 1..]))
        } else {
            (0, self.table.tuple_of(&idx[np..]))
        };
        EntryPos {
            member,
            particle,
            tuple,
        }
    }

    /// The value the entry scores: a particle for latents, the observation
    /// for data.
    #[inline]
    pub(crate) fn x_at(&self, p: EntryPos) -> &[f64] {
        let at = if self.latent {
            (p.member * self.k + p.particle) * self.dim
        } else {
            p.member * self.dim
        };
        &self.x[at..at + self.dim]
    }

    #[inline]
    pub(crate) fn log_p_at(&self, p: EntryPos) -> f64 {
        let row = self.table.row(self.table.key_of(p.member), p.tuple);
        self.table.kind.log_prob(row, self.x_at(p))
    }

    #[inline]
    pub(crate) fn log_q_at(&self, p: EntryPos) -> f64 {
        match self.log_q {
            Some(q) => q[p.member * self.k + p.particle],
            None => 0.0,
        }
    }

    #[inline]
    pub fn entry(&self, idx: &[usize]) -> f64 {
        let p = self.pos(idx);
        self.log_p_at(p) - self.log_q_at(p)
    }

    /// Calls `f` with every multi-index in row-major order.
    pub(crate) fn for_each_index(&self, mut f: impl FnMut(usize, &[usize])) {
        let n = self.len();
        let mut idx = vec![0; self.shape.len()];
        for flat in 0..n {
            f(flat, &idx);
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    /// Calls `f` with every entry's flat index and model position, in
    /// row-major order.
    pub(crate) fn for_each_pos(&self, mut f: impl FnMut(usize, EntryPos)) {
        if self.global {
            self.for_each_index(|flat, idx| f(flat, self.pos(idx)));
            return;
        }
        // Axes are plates, then the own particle (latents), then the parent
        // tuple in the table's row-major order.
        let members: usize = self.shape[..self.n_plates].iter().product();
        let particles = if self.latent { self.k } else { 1 };
        if members * particles == 0 {
            return;
        }
        let tuples = self.len() / (members * particles);
        let mut flat = 0;
        for member in 0..members {
            for particle in 0..particles {
                for tuple in 0..tuples {
                    f(flat, EntryPos { member, particle, tuple });
                    flat += 1;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Result<LogFactor> {
        let mut values = Vec::with_capacity(self.len());
        self.for_each_pos(|_, p| values.push(self.log_p_at(p) - self.log_q_at(p)));
        LogFactor::from_parts(self.axes.clone(), self.shape.clone(), values)
    }

    fn as_ref(&self) -> FactorRef<'_> {
        match &self.dense {
            Some(d) => FactorRef::Dense(d),
            None => FactorRef::Lazy(self),
        }
    }
}

impl LazyFactor for NodeFactor<'_> {
    fn axes(&self) -> &[AxisName] {
        &self.axes
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn add_row(&self, index: &[usize], axis: usize, out: &mut [f64]) {
        let np = self.n_plates;
        let mut idx = index.to_vec();
        if self.global || axis < np {
            for (j, o) in out.iter_mut().enumerate() {
                idx[axis] = j;
                *o += self.entry(&idx);
            }
            return;
        }
        // With the member fixed, rows along a sample axis are strided runs
        // of either particles or parent tuples.
        idx[axis] = 0;
        let p = self.pos(&idx);
        let key = self.table.key_of(p.member);
        let kind = self.table.kind;
        if self.latent && axis == np {
            let row = self.table.row(key, p.tuple);
            let base = p.member * self.k;
            let lq = self.log_q.map(|q| &q[base..base + self.k]);
            for (j, o) in out.iter_mut().enumerate() {
                let at = (base + j) * self.dim;
                *o += kind.log_prob(row, &self.x[at..at + self.dim]) - lq.map_or(0.0, |q| q[j]);
            }
        } else {
            let first = if self.latent { np + 1 } else { np };
            let stride = self.k.pow((self.axes.len() - 1 - axis) as u32);
            debug_assert!(axis >= first);
            let x = self.x_at(p);
            let lq = self.log_q_at(p);
            for (j, o) in out.iter_mut().enumerate() {
                *o += kind.log_prob(self.table.row(key, p.tuple + j * stride), x) - lq;
            }
        }
    }
}

/// All factors of one sample batch, with the axes they live on.
pub struct FactorSet<'a> {
    kind: ProposalKind,
    k: usize,
    table: AxisTable,
    factors: Vec<NodeFactor<'a>>,
}

fn plate_axes(model: &ModelGraph, plate: Option<usize>) -> Vec<AxisName> {
    model
        .plate_chain(plate)
        .iter()
        .map(|&p| AxisName::plate(&model.plates()[p].name))
        .collect()
}

pub(crate) fn sample_axis(name: &str) -> AxisName {
    AxisName::sample(format!("k_{name}"))
}

impl<'a> FactorSet<'a> {
    /// Builds one factor per latent and per data node.
    pub fn build(model: &ModelGraph, batch: &'a SampleBatch, data: &'a Dataset) -> Result<Self> {
        if batch.latents().len() != model.latents().len() {
            return Err(Error::Shape(format!(
                "batch has {} latents, model has {}",
                batch.latents().len(),
                model.latents().len()
            )));
        }
        let k = batch.k();
        let mut table = AxisTable::new();
        for (i, p) in model.plates().iter().enumerate() {
            let chain = plate_axes(model, Some(i));
            table.declare_plate(&p.name, p.size, &chain[..chain.len() - 1])?;
        }
        if batch.kind() == ProposalKind::Global {
            table.declare_sample("k", k, &[])?;
        } else {
            for l in model.latents() {
                table.declare_sample(format!("k_{}", l.name), k, &plate_axes(model, l.plate))?;
            }
        }
        let mut set = Self {
            kind: batch.kind(),
            k,
            table,
            factors: Vec::new(),
        };
        let empty = ParamStore::new();
        let params = Params {
            model: model.theta(),
            proposal: &empty,
        };
        let refs = batch.value_refs();
        for (i, (l, s)) in model.latents().iter().zip(batch.latents()).enumerate() {
            if s.members != model.members(l.plate) || s.dim != l.family.value_dim() {
                return Err(Error::Shape(format!("batch particles of `{}` do not match the model", l.name)));
            }
            if s.log_q.iter().any(|q| !q.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "a particle of `{}` has zero or undefined proposal density",
                    l.name
                )));
            }
            let node_table = NodeTable::build(model, l, &refs, k, set.scheme(), None, params)?;
            set.push(model, FactorSource::Latent(i), l.plate, &l.parents, node_table, &s.values, Some(&s.log_q), l.family.value_dim())?;
        }
        set.add_data(model, batch, data, false)?;
        Ok(set)
    }

    fn scheme(&self) -> Scheme {
        match self.kind {
            ProposalKind::Global => Scheme::Diagonal,
            _ => Scheme::Product,
        }
    }

    /// Appends factors for a second dataset on the same batch.
    pub fn add_data(&mut self, model: &ModelGraph, batch: &'a SampleBatch, data: &'a Dataset, extra: bool) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        model.check_dataset(data)?;
        let empty = ParamStore::new();
        let params = Params {
            model: model.theta(),
            proposal: &empty,
        };
        let refs = batch.value_refs();
        for (j, (dn, nd)) in model.data().iter().zip(data.nodes()).enumerate() {
            let t = NodeTable::build(
                model,
                &dn.node,
                &refs,
                self.k,
                self.scheme(),
                Some((nd, &dn.covariates)),
                params,
            )?;
            let source = if extra {
                FactorSource::ExtraData(j)
            } else {
                FactorSource::Data(j)
            };
            self.push(model, source, dn.node.plate, &dn.node.parents, t, &nd.values, None, dn.node.family.value_dim())?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        model: &ModelGraph,
        source: FactorSource,
        plate: Option<usize>,
        parents: &[usize],
        node_table: NodeTable,
        x: &'a [f64],
        log_q: Option<&'a [f64]>,
        dim: usize,
    ) -> Result<()> {
        let latent = matches!(source, FactorSource::Latent(_));
        let global = self.kind == ProposalKind::Global;
        let mut axes = plate_axes(model, plate);
        let n_plates = axes.len();
        if global {
            if latent || !parents.is_empty() {
                axes.push(AxisName::sample("k"));
            }
        } else {
            if let FactorSource::Latent(i) = source {
                axes.push(sample_axis(&model.latents()[i].name));
            }
            for &p in parents {
                let a = sample_axis(&model.latents()[p].name);
                if axes.contains(&a) {
                    return Err(Error::Shape(format!("parent `{}` listed twice", model.latents()[p].name)));
                }
                axes.push(a);
            }
        }
        let shape = axes
            .iter()
            .map(|a| self.table.size(a).expect("declared axis"))
            .collect();
        let mut f = NodeFactor {
            source,
            axes,
            shape,
            n_plates,
            global,
            latent,
            k: self.k,
            dim,
            table: node_table,
            x,
            log_q,
            dense: None,
        };
        if f.len() <= LAZY_ENTRIES {
            f.dense = Some(f.to_dense()?);
        }
        self.factors.push(f);
        Ok(())
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn axis_table(&self) -> &AxisTable {
        &self.table
    }

    pub fn factors(&self) -> &[NodeFactor<'a>] {
        &self.factors
    }

    pub fn signatures(&self) -> Vec<FactorSignature> {
        self.factors.iter().map(NodeFactor::signature).collect()
    }

    pub fn refs(&self) -> Vec<FactorRef<'_>> {
        self.factors.iter().map(NodeFactor::as_ref).collect()
    }

    /// Materializes every factor.
    pub fn dense(&self) -> Result<Vec<LogFactor>> {
        self.factors.iter().map(NodeFactor::to_dense).collect()
    }

    pub fn plan(&self) -> Result<ContractionPlan> {
        plan_contraction(&self.signatures(), &self.table)
    }
}
