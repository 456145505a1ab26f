use crate::error::{Error, Result};

/// Which store a parameter lives in: the generative model's θ or the
/// proposal's φ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Model,
    Proposal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamRef {
    pub role: Role,
    pub index: usize,
}

/// A named block of unconstrained reals laid out as `rows × cols`.
///
/// Per-member parameters use one row per plate member; shared parameters have
/// a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ParamBlock {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Result<usize> {
        if self.index_of(name).is_some() {
            return Err(Error::Parameter(format!("parameter `{name}` declared twice")));
        }
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::Parameter(format!(
                "parameter `{name}`: {} values for {rows}x{cols}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("parameter `{name}` is not finite")));
        }
        self.blocks.push(ParamBlock {
            name: name.to_string(),
            rows,
            cols,
            values,
        });
        Ok(self.blocks.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn block(&self, index: usize) -> &ParamBlock {
        &self.blocks[index]
    }

    pub fn get(&self, index: usize) -> Option<&ParamBlock> {
        self.blocks.get(index)
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamBlock> {
        self.index_of(name).map(|i| &self.blocks[i])
    }

    pub fn values_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.blocks[index].values
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    /// All scalars, block after block.
    pub fn flat(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.size() {
            return Err(Error::Shape(format!(
                "{} values for a store of {}",
                values.len(),
                self.size()
            )));
        }
        let mut it = values.iter();
        for b in &mut self.blocks {
            for v in &mut b.values {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

/// Gradients laid out like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientStore {
    names: Vec<String>,
    cols: Vec<usize>,
    blocks: Vec<Vec<f64>>,
}

impl GradientStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            names: store.blocks.iter().map(|b| b.name.clone()).collect(),
            cols: store.blocks.iter().map(|b| b.cols).collect(),
            blocks: store.blocks.iter().map(|b| vec![0.0; b.values.len()]).collect(),
        }
    }

    pub fn block(&self, index: usize) -> &[f64] {
        &self.blocks[index]
    }

    pub fn block_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.blocks[index]
    }

    pub fn row_mut(&mut self, index: usize, row: usize) -> &mut [f64] {
        let c = self.cols[index];
        &mut self.blocks[index][row * c..(row + 1) * c]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.blocks[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .fold(0.0, |m: f64, g| m.max(g.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|g| g.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientStore, scale: f64) -> Result<()> {
        if self.blocks.len() != other.blocks.len()
            || self.blocks.iter().zip(&other.blocks).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Shape("gradient stores differ in layout".into()));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }
}

/// Read access to both stores during evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Params<'a> {
    pub model: &'a ParamStore,
    pub proposal: &'a ParamStore,
}

impl<'a> Params<'a> {
    pub fn block(&self, r: ParamRef) -> &'a ParamBlock {
        match r.role {
            Role::Model => self.model.block(r.index),
            Role::Proposal => self.proposal.block(r.index),
        }
    }
}
