use crate::error::{Error, Result};

use super::{
    broadcast_strides, plan_contraction, AxisName, AxisTable, ContractionPlan,
    FactorSignature, LogFactor, PlanStep, Reduction, Weights,
};

/// A factor whose entries are produced on demand instead of stored.
///
/// Used where a dense tensor would not fit in memory but rows along one axis
/// are cheap to evaluate.
pub trait LazyFactor: Sync {
    fn axes(&self) -> &[AxisName];
    fn shape(&self) -> &[usize];
    /// Adds the entries along axis position `axis` into `out`, with every
    /// other axis fixed by `index`. The value of `index[axis]` is ignored.
    fn add_row(&self, index: &[usize], axis: usize, out: &mut [f64]);
}

/// An input to [`execute`].
#[derive(Clone, Copy)]
pub enum FactorRef<'a> {
    Dense(&'a LogFactor),
    Lazy(&'a dyn LazyFactor),
}

impl<'a> FactorRef<'a> {
    pub fn axes(&self) -> &'a [AxisName] {
        match self {
            FactorRef::Dense(f) => f.axes(),
            FactorRef::Lazy(f) => f.axes(),
        }
    }

    pub fn shape(&self) -> &'a [usize] {
        match self {
            FactorRef::Dense(f) => f.shape(),
            FactorRef::Lazy(f) => f.shape(),
        }
    }
}

impl<'a> From<&'a LogFactor> for FactorRef<'a> {
    fn from(f: &'a LogFactor) -> Self {
        FactorRef::Dense(f)
    }
}

enum Slot<'a> {
    Input(FactorRef<'a>),
    Owned(LogFactor),
}

impl Slot<'_> {
    fn as_ref(&self) -> FactorRef<'_> {
        match self {
            Slot::Input(f) => *f,
            Slot::Owned(f) => FactorRef::Dense(f),
        }
    }
}

/// Per-input view of a step's fused layout `out_axes ++ [axis]`.
struct Operand {
    /// Strides over the output axes, for a dense array with this input's shape.
    out_strides: Vec<usize>,
    /// Stride of the reduced axis in that array.
    row_stride: usize,
    /// For each of the input's axes, its position in the fused layout.
    fused_pos: Vec<usize>,
    /// Position of the reduced axis among the input's axes.
    axis_pos: usize,
}

fn operand(axes: &[AxisName], shape: &[usize], step: &PlanStep) -> Operand {
    let mut fused = step.out_axes.clone();
    fused.push(step.axis.clone());
    let strides = broadcast_strides(axes, shape, &fused);
    let row_stride = strides[fused.len() - 1];
    let out_strides = strides[..fused.len() - 1].to_vec();
    let fused_pos = axes
        .iter()
        .map(|a| fused.iter().position(|f| f == a).expect("input axis in fused layout"))
        .collect();
    let axis_pos = axes
        .iter()
        .position(|a| *a == step.axis)
        .expect("input carries reduced axis");
    Operand {
        out_strides,
        row_stride,
        fused_pos,
        axis_pos,
    }
}

/// Visits every multi-index of `shape` row-major, passing the index and one
/// running offset per stride vector.
fn walk(shape: &[usize], strides: &[&[usize]], mut f: impl FnMut(&[usize], &[usize])) {
    if shape.contains(&0) {
        return;
    }
    let n = shape.len();
    let mut idx = vec![0usize; n];
    let mut offs = vec![0usize; strides.len()];
    loop {
        f(&idx, &offs);
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

fn check_inputs(plan: &ContractionPlan, factors: &[FactorRef<'_>]) -> Result<()> {
    if plan.inputs().len() != factors.len() {
        return Err(Error::Shape(format!(
            "plan expects {} factors, got {}",
            plan.inputs().len(),
            factors.len()
        )));
    }
    for (i, (sig, f)) in plan.inputs().iter().zip(factors).enumerate() {
        if sig.axes.as_slice() != f.axes() || sig.shape.as_slice() != f.shape() {
            return Err(Error::Shape(format!(
                "factor {i} does not match the plan signature"
            )));
        }
    }
    Ok(())
}

fn run_step(
    step: &PlanStep,
    inputs: &[FactorRef<'_>],
    mut resp: Option<&mut Vec<f64>>,
) -> LogFactor {
    let row_len = step.fused_size / step.out_shape.iter().product::<usize>().max(1);
    let ops: Vec<Operand> = inputs
        .iter()
        .map(|f| operand(f.axes(), f.shape(), step))
        .collect();
    let strides: Vec<&[usize]> = ops.iter().map(|o| o.out_strides.as_slice()).collect();
    let out_len: usize = step.out_shape.iter().product();
    let mut values = Vec::with_capacity(out_len);
    if let Some(r) = resp.as_deref_mut() {
        r.clear();
        r.reserve(out_len * row_len);
    }
    let mut row = vec![0.0; row_len];
    let mut scratch: Vec<Vec<usize>> = inputs.iter().map(|f| vec![0; f.axes().len()]).collect();
    let ln_n = (row_len as f64).ln();
    walk(&step.out_shape, &strides, |idx, offs| {
        row.iter_mut().for_each(|r| *r = 0.0);
        for (i, f) in inputs.iter().enumerate() {
            let op = &ops[i];
            match f {
                FactorRef::Dense(d) => {
                    let vals = d.values();
                    let mut o = offs[i];
                    for r in row.iter_mut() {
                        *r += vals[o];
                        o += op.row_stride;
                    }
                }
                FactorRef::Lazy(l) => {
                    let index = &mut scratch[i];
                    for (k, &p) in op.fused_pos.iter().enumerate() {
                        index[k] = if p < idx.len() { idx[p] } else { 0 };
                    }
                    l.add_row(index, op.axis_pos, &mut row);
                }
            }
        }
        match step.reduction {
            Reduction::Sum => values.push(row.iter().sum()),
            Reduction::Mean => {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    values.push(m);
                    if let Some(r) = resp.as_deref_mut() {
                        r.extend(std::iter::repeat_n(0.0, row_len));
                    }
                } else {
                    let mut s = 0.0;
                    match resp.as_deref_mut() {
                        Some(r) => {
                            let start = r.len();
                            for &x in row.iter() {
                                let e = (x - m).exp();
                                s += e;
                                r.push(e);
                            }
                            let inv = 1.0 / s;
                            r[start..].iter_mut().for_each(|e| *e *= inv);
                        }
                        None => {
                            for &x in row.iter() {
                                s += (x - m).exp();
                            }
                        }
                    }
                    values.push(m + (s.ln() - ln_n));
                }
            }
        }
    });
    LogFactor::from_parts_unchecked(step.out_axes.clone(), step.out_shape.clone(), values)
}

fn forward<'a>(
    plan: &ContractionPlan,
    factors: &[FactorRef<'a>],
    mut tape: Option<&mut Vec<Vec<f64>>>,
) -> Result<(f64, Vec<Slot<'a>>)> {
    check_inputs(plan, factors)?;
    let mut slots: Vec<Slot<'a>> = factors.iter().map(|f| Slot::Input(*f)).collect();
    for step in plan.steps() {
        let out = {
            let inputs: Vec<FactorRef<'_>> = step.inputs.iter().map(|&s| slots[s].as_ref()).collect();
            match tape.as_deref_mut() {
                Some(t) => {
                    let mut r = Vec::new();
                    let out = run_step(step, &inputs, Some(&mut r));
                    t.push(r);
                    out
                }
                None => run_step(step, &inputs, None),
            }
        };
        slots.push(Slot::Owned(out));
        if tape.is_none() {
            // Consumed intermediates are no longer needed.
            for &s in &step.inputs {
                if matches!(slots[s], Slot::Owned(_)) {
                    slots[s] = Slot::Owned(LogFactor::from_parts_unchecked(
                        Vec::new(),
                        Vec::new(),
                        vec![0.0],
                    ));
                }
            }
        }
    }
    let mut total = 0.0;
    for &s in plan.finals() {
        total += match slots[s].as_ref() {
            FactorRef::Dense(f) => f.values()[0],
            FactorRef::Lazy(_) => {
                return Err(Error::Shape("axis-free lazy factor".into()));
            }
        };
    }
    Ok((total, slots))
}

/// Runs a plan, returning `log[(1/K^n) Σ_k Π factors]` with plate products.
pub fn execute(plan: &ContractionPlan, factors: &[FactorRef<'_>]) -> Result<f64> {
    forward(plan, factors, None).map(|(v, _)| v)
}

/// Plans and executes in one call for dense factors.
pub fn contract(factors: &[LogFactor], table: &AxisTable) -> Result<f64> {
    let sigs: Vec<FactorSignature> = factors.iter().map(LogFactor::signature).collect();
    let plan = plan_contraction(&sigs, table)?;
    let refs: Vec<FactorRef<'_>> = factors.iter().map(FactorRef::from).collect();
    execute(&plan, &refs)
}

/// A forward pass that keeps the responsibilities of every mean-reduction so
/// that posterior weights on the inputs can be recovered.
pub struct Trace<'p> {
    plan: &'p ContractionPlan,
    log_value: f64,
    tape: Vec<Vec<f64>>,
}

/// Runs a plan and records what [`Trace::input_weights`] needs.
pub fn execute_traced<'p>(plan: &'p ContractionPlan, factors: &[FactorRef<'_>]) -> Result<Trace<'p>> {
    let mut tape = Vec::with_capacity(plan.steps().len());
    let (log_value, _) = forward(plan, factors, Some(&mut tape))?;
    Ok(Trace {
        plan,
        log_value,
        tape,
    })
}

impl Trace<'_> {
    pub fn log_value(&self) -> f64 {
        self.log_value
    }

    /// Normalized posterior weight of every entry of every input factor.
    ///
    /// Entry `W[idx]` is the share of the estimate carried by index
    /// combinations passing through `idx`; it is also the derivative of the
    /// log-estimate with respect to that log-entry. Weights over a factor that
    /// carries every sample axis sum to one per plate member.
    pub fn input_weights(&self) -> Result<Vec<Weights>> {
        if self.log_value == f64::NEG_INFINITY {
            return Err(Error::DegenerateEvidence);
        }
        let plan = self.plan;
        let n_in = plan.inputs().len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; plan.slot_count()];
        for &s in plan.finals() {
            grads[s] = Some(vec![1.0]);
        }
        let shape_of = |slot: usize| -> (Vec<AxisName>, Vec<usize>) {
            if slot < n_in {
                let sig = &plan.inputs()[slot];
                (sig.axes.clone(), sig.shape.clone())
            } else {
                let st = &plan.steps()[slot - n_in];
                (st.out_axes.clone(), st.out_shape.clone())
            }
        };
        for (si, step) in plan.steps().iter().enumerate().rev() {
            let Some(g_out) = grads[step.output].take() else {
                continue;
            };
            let row_len = step.fused_size / step.out_shape.iter().product::<usize>().max(1);
            let ops: Vec<Operand> = step
                .inputs
                .iter()
                .map(|&s| {
                    let (axes, shape) = shape_of(s);
                    operand(&axes, &shape, step)
                })
                .collect();
            let mut bufs: Vec<Vec<f64>> = step
                .inputs
                .iter()
                .map(|&s| {
                    grads[s].take().unwrap_or_else(|| {
                        let (_, shape) = shape_of(s);
                        vec![0.0; shape.iter().product()]
                    })
                })
                .collect();
            let strides: Vec<&[usize]> = ops.iter().map(|o| o.out_strides.as_slice()).collect();
            let resp = &self.tape[si];
            let mut o_flat = 0usize;
            walk(&step.out_shape, &strides, |_, offs| {
                let g = g_out[o_flat];
                match step.reduction {
                    Reduction::Sum => {
                        for (b, (op, &base)) in bufs.iter_mut().zip(ops.iter().zip(offs)) {
                            for j in 0..row_len {
                                b[base + j * op.row_stride] += g;
                            }
                        }
                    }
                    Reduction::Mean => {
                        let r = &resp[o_flat * row_len..(o_flat + 1) * row_len];
                        for (b, (op, &base)) in bufs.iter_mut().zip(ops.iter().zip(offs)) {
                            for (j, &w) in r.iter().enumerate() {
                                b[base + j * op.row_stride] += g * w;
                            }
                        }
                    }
                }
                o_flat += 1;
            });
            for (&s, b) in step.inputs.iter().zip(bufs) {
                grads[s] = Some(b);
            }
        }
        Ok((0..n_in)
            .map(|i| {
                let sig = &plan.inputs()[i];
                let values = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; sig.len()]);
                Weights::from_parts(sig.axes.clone(), sig.shape.clone(), values)
            })
            .collect())
    }
}

/// Posterior weights over the axes of input `target`.
pub fn posterior_marginals(
    plan: &ContractionPlan,
    factors: &[FactorRef<'_>],
    target: usize,
) -> Result<Weights> {
    if target >= factors.len() {
        return Err(Error::Lookup(format!(
            "factor {target} is not an input ({} inputs)",
            factors.len()
        )));
    }
    let trace = execute_traced(plan, factors)?;
    let mut all = trace.input_weights()?;
    Ok(all.swap_remove(target))
}
