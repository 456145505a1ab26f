/// Observations and covariates of one data node, over all plate members.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeData {
    /// `members × value width`, row-major.
    pub values: Vec<f64>,
    /// One array per declared covariate, `members × covariate width`.
    pub covariates: Vec<Vec<f64>>,
}

impl NodeData {
    pub fn new(values: Vec<f64>, covariates: Vec<Vec<f64>>) -> Self {
        Self { values, covariates }
    }

    pub(crate) fn member_covariates<'a>(&'a self, m: usize, widths: &[(String, usize)]) -> Vec<&'a [f64]> {
        self.covariates
            .iter()
            .zip(widths)
            .map(|(c, (_, w))| &c[m * w..(m + 1) * w])
            .collect()
    }
}

/// Data aligned with a model's data nodes, in declaration order.
///
/// An empty dataset stands for "no observations" and contributes nothing to
/// any estimate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    nodes: Vec<NodeData>,
}

impl Dataset {
    pub fn new(nodes: Vec<NodeData>) -> Self {
        Self { nodes }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[NodeData] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeData {
        &self.nodes[i]
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
