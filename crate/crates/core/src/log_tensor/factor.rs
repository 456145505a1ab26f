use crate::error::{Error, Result};

use super::{log_mean_exp, AxisName};

/// How an axis is removed from a factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Log-mean-exp over a sample axis: averages the K alternatives.
    Mean,
    /// Addition of log-values over a plate axis, i.e. a product over members.
    Sum,
}

/// Axis names and sizes of a factor, without its values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorSignature {
    pub axes: Vec<AxisName>,
    pub shape: Vec<usize>,
}

impl FactorSignature {
    pub fn new(axes: Vec<(AxisName, usize)>) -> Self {
        let (axes, shape) = axes.into_iter().unzip();
        Self { axes, shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Strides of a source tensor laid along `dst_axes`; absent axes get stride 0.
pub(crate) fn broadcast_strides(
    src_axes: &[AxisName],
    src_shape: &[usize],
    dst_axes: &[AxisName],
) -> Vec<usize> {
    let src_strides = row_major_strides(src_shape);
    dst_axes
        .iter()
        .map(|a| {
            src_axes
                .iter()
                .position(|s| s == a)
                .map_or(0, |p| src_strides[p])
        })
        .collect()
}

/// Visits every multi-index of `shape` in row-major order, tracking one
/// running offset per stride vector.
pub(crate) fn walk_offsets(shape: &[usize], strides: &[Vec<usize>], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let n = shape.len();
    let mut idx = vec![0usize; n];
    let mut offs = vec![0usize; strides.len()];
    loop {
        f(&offs);
        let mut d = n;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            for (o, s) in offs.iter_mut().zip(strides) {
                *o += s[d];
            }
            if idx[d] < shape[d] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(strides) {
                *o -= s[d] * shape[d];
            }
            idx[d] = 0;
        }
    }
}

fn check_axes(axes: &[AxisName]) -> Result<()> {
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].contains(a) {
            return Err(Error::Shape(format!("axis {a} appears twice")));
        }
    }
    Ok(())
}

/// A dense tensor of log-domain values over named axes, stored row-major.
///
/// Entries are finite or `-inf`; NaN and `+inf` are rejected at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct LogFactor {
    axes: Vec<AxisName>,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl LogFactor {
    pub fn new(axes: Vec<(AxisName, usize)>, values: Vec<f64>) -> Result<Self> {
        let (axes, shape): (Vec<_>, Vec<_>) = axes.into_iter().unzip();
        Self::from_parts(axes, shape, values)
    }

    pub fn from_parts(axes: Vec<AxisName>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if axes.len() != shape.len() {
            return Err(Error::Shape("axis and shape lengths differ".into()));
        }
        check_axes(&axes)?;
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {:?}",
                values.len(),
                shape
            )));
        }
        if let Some(v) = values.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
            return Err(Error::InvalidValue(format!("log-factor entry {v}")));
        }
        Ok(Self {
            axes,
            shape,
            values,
        })
    }

    pub(crate) fn from_parts_unchecked(
        axes: Vec<AxisName>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(values.iter().all(|v| !v.is_nan()));
        Self {
            axes,
            shape,
            values,
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::from_parts(Vec::new(), Vec::new(), vec![value])
    }

    pub fn axes(&self) -> &[AxisName] {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn signature(&self) -> FactorSignature {
        FactorSignature {
            axes: self.axes.clone(),
            shape: self.shape.clone(),
        }
    }

    pub fn axis_position(&self, axis: &AxisName) -> Option<usize> {
        self.axes.iter().position(|a| a == axis)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let strides = row_major_strides(&self.shape);
        let off: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.values[off]
    }

    /// Pointwise product in the probability domain: broadcast addition of logs.
    /// The result carries this factor's axes followed by the new axes of `other`.
    pub fn log_mul(&self, other: &LogFactor) -> Result<LogFactor> {
        let mut axes = self.axes.clone();
        let mut shape = self.shape.clone();
        for (a, &s) in other.axes.iter().zip(&other.shape) {
            match self.axis_position(a) {
                Some(p) if self.shape[p] != s => {
                    return Err(Error::Shape(format!(
                        "axis {a} has size {} and {s}",
                        self.shape[p]
                    )))
                }
                Some(_) => {}
                None => {
                    axes.push(a.clone());
                    shape.push(s);
                }
            }
        }
        let sa = broadcast_strides(&self.axes, &self.shape, &axes);
        let sb = broadcast_strides(&other.axes, &other.shape, &axes);
        let mut values = Vec::with_capacity(shape.iter().product());
        walk_offsets(&shape, &[sa, sb], |o| {
            values.push(self.values[o[0]] + other.values[o[1]])
        });
        Ok(LogFactor::from_parts_unchecked(axes, shape, values))
    }

    /// Removes `axis` by log-mean-exp (`Mean`) or by adding log-values (`Sum`).
    pub fn reduce(&self, axis: &AxisName, kind: Reduction) -> Result<LogFactor> {
        let p = self
            .axis_position(axis)
            .ok_or_else(|| Error::Shape(format!("axis {axis} not in factor")))?;
        let n = self.shape[p];
        let strides = row_major_strides(&self.shape);
        let mut axes = self.axes.clone();
        let mut shape = self.shape.clone();
        axes.remove(p);
        shape.remove(p);
        let out_strides = broadcast_strides(&self.axes, &self.shape, &axes);
        let mut row = vec![0.0; n];
        let mut values = Vec::with_capacity(shape.iter().product());
        walk_offsets(&shape, &[out_strides], |o| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = self.values[o[0] + j * strides[p]];
            }
            values.push(match kind {
                Reduction::Mean => log_mean_exp(&row),
                Reduction::Sum => row.iter().sum(),
            });
        });
        Ok(LogFactor::from_parts_unchecked(axes, shape, values))
    }
}

/// Non-negative linear-domain weights over named axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    axes: Vec<AxisName>,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Weights {
    pub(crate) fn from_parts(axes: Vec<AxisName>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self {
            axes,
            shape,
            values,
        }
    }

    pub fn axes(&self) -> &[AxisName] {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let strides = row_major_strides(&self.shape);
        let off: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.values[off]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sums out every axis not listed in `keep`; the result follows `keep`'s order.
    pub fn marginalize_onto(&self, keep: &[AxisName]) -> Result<Weights> {
        let mut shape = Vec::with_capacity(keep.len());
        for a in keep {
            let p = self
                .axes
                .iter()
                .position(|x| x == a)
                .ok_or_else(|| Error::Shape(format!("axis {a} not in weights")))?;
            shape.push(self.shape[p]);
        }
        // Walk the source, mapping each entry to its slot in the output.
        let dst = broadcast_strides(keep, &shape, &self.axes);
        let mut values = vec![0.0; shape.iter().product()];
        let src = row_major_strides(&self.shape);
        walk_offsets(&self.shape, &[src, dst], |o| values[o[1]] += self.values[o[0]]);
        Ok(Weights::from_parts(keep.to_vec(), shape, values))
    }
}
