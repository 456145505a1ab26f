use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Whether an axis indexes the K samples of one latent or the members of a plate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AxisKind {
    Sample,
    Plate,
}

/// A named tensor axis. Two names are equal when both kind and text agree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AxisName {
    kind: AxisKind,
    name: Arc<str>,
}

impl AxisName {
    pub fn sample(name: impl AsRef<str>) -> Self {
        Self {
            kind: AxisKind::Sample,
            name: Arc::from(name.as_ref()),
        }
    }

    pub fn plate(name: impl AsRef<str>) -> Self {
        Self {
            kind: AxisKind::Plate,
            name: Arc::from(name.as_ref()),
        }
    }

    pub fn kind(&self) -> AxisKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_sample(&self) -> bool {
        self.kind == AxisKind::Sample
    }

    pub fn is_plate(&self) -> bool {
        self.kind == AxisKind::Plate
    }
}

impl fmt::Display for AxisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AxisKind::Sample => write!(f, "{}", self.name),
            AxisKind::Plate => write!(f, "[{}]", self.name),
        }
    }
}

/// A declared axis: its size and the plates that enclose it, outermost first.
///
/// For a sample axis the plates are those of the latent that owns it. For a
/// plate axis they are the plates it is nested inside.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisInfo {
    pub name: AxisName,
    pub size: usize,
    pub plates: Vec<AxisName>,
}

/// Every axis a contraction may encounter, in declaration order.
///
/// Declaration order is the tie-breaker used by the planner.
#[derive(Clone, Debug, Default)]
pub struct AxisTable {
    entries: Vec<AxisInfo>,
    index: HashMap<AxisName, usize>,
}

impl AxisTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare_plate(
        &mut self,
        name: impl AsRef<str>,
        size: usize,
        enclosing: &[AxisName],
    ) -> Result<AxisName> {
        let axis = AxisName::plate(name);
        self.declare(axis.clone(), size, enclosing)?;
        Ok(axis)
    }

    pub fn declare_sample(
        &mut self,
        name: impl AsRef<str>,
        size: usize,
        plates: &[AxisName],
    ) -> Result<AxisName> {
        let axis = AxisName::sample(name);
        self.declare(axis.clone(), size, plates)?;
        Ok(axis)
    }

    fn declare(&mut self, name: AxisName, size: usize, plates: &[AxisName]) -> Result<()> {
        if size == 0 {
            return Err(Error::Shape(format!("axis {name} has size zero")));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Shape(format!("axis {name} declared twice")));
        }
        for p in plates {
            match self.index.get(p) {
                Some(_) if p.is_plate() => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "axis {name} is enclosed by undeclared plate {p}"
                    )))
                }
            }
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(AxisInfo {
            name,
            size,
            plates: plates.to_vec(),
        });
        Ok(())
    }

    pub fn get(&self, name: &AxisName) -> Option<&AxisInfo> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn size(&self, name: &AxisName) -> Option<usize> {
        self.get(name).map(|a| a.size)
    }

    /// Declaration position of an axis.
    pub fn position(&self, name: &AxisName) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AxisInfo> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
