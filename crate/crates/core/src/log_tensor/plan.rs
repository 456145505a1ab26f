use crate::error::{Error, Result};

use super::{AxisName, AxisTable, FactorSignature, Reduction};

/// One reduction in a contraction plan.
///
/// Every factor in `inputs` carries `axis`; they are combined (log-added with
/// broadcasting) and `axis` is reduced away, producing slot `output`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanStep {
    pub axis: AxisName,
    pub reduction: Reduction,
    pub inputs: Vec<usize>,
    pub output: usize,
    pub out_axes: Vec<AxisName>,
    pub out_shape: Vec<usize>,
    /// Entries in the combined tensor before reduction.
    pub fused_size: usize,
}

/// An ordered list of reductions that brings a set of factors to a scalar.
///
/// Slots `0..inputs.len()` are the input factors; each step appends one slot.
/// The scalar result is the sum of the axis-free slots listed in `finals`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionPlan {
    inputs: Vec<FactorSignature>,
    steps: Vec<PlanStep>,
    finals: Vec<usize>,
    peak_size: usize,
}

impl ContractionPlan {
    pub fn inputs(&self) -> &[FactorSignature] {
        &self.inputs
    }

    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn finals(&self) -> &[usize] {
        &self.finals
    }

    /// Largest tensor, input or intermediate, the plan materializes.
    pub fn peak_size(&self) -> usize {
        self.peak_size
    }

    pub fn slot_count(&self) -> usize {
        self.inputs.len() + self.steps.len()
    }

    /// Order in which sample axes are eliminated.
    pub fn elimination_order(&self) -> Vec<AxisName> {
        self.steps
            .iter()
            .filter(|s| s.reduction == Reduction::Mean)
            .map(|s| s.axis.clone())
            .collect()
    }
}

struct Live {
    slot: usize,
    axes: Vec<AxisName>,
}

struct Planner<'a> {
    table: &'a AxisTable,
    live: Vec<Live>,
    steps: Vec<PlanStep>,
    next_slot: usize,
    peak: usize,
}

impl<'a> Planner<'a> {
    fn new(signatures: &[FactorSignature], table: &'a AxisTable) -> Result<Self> {
        let mut live = Vec::with_capacity(signatures.len());
        let mut peak = 1;
        for (slot, sig) in signatures.iter().enumerate() {
            if sig.axes.len() != sig.shape.len() {
                return Err(Error::Shape(format!("factor {slot}: axes and shape differ")));
            }
            for (a, &s) in sig.axes.iter().zip(&sig.shape) {
                match table.size(a) {
                    None => {
                        return Err(Error::Shape(format!(
                            "factor {slot}: axis {a} is not declared"
                        )))
                    }
                    Some(n) if n != s => {
                        return Err(Error::Shape(format!(
                            "factor {slot}: axis {a} has size {s}, declared {n}"
                        )))
                    }
                    _ => {}
                }
            }
            peak = peak.max(sig.len());
            live.push(Live {
                slot,
                axes: sig.axes.clone(),
            });
        }
        Ok(Self {
            table,
            live,
            steps: Vec::new(),
            next_slot: signatures.len(),
            peak,
        })
    }

    fn size(&self, a: &AxisName) -> usize {
        self.table.size(a).unwrap_or(1)
    }

    fn nested_in(&self, a: &AxisName, plate: &AxisName) -> bool {
        self.table
            .get(a)
            .is_some_and(|info| info.plates.contains(plate))
    }

    /// A factor may drop a plate once nothing in it lives inside that plate.
    fn plate_reducible(&self, axes: &[AxisName], plate: &AxisName) -> bool {
        axes.contains(plate)
            && axes
                .iter()
                .all(|a| a == plate || !self.nested_in(a, plate))
    }

    /// A sample axis may be averaged once every factor touching it is free
    /// of plates other than those enclosing its latent.
    fn eliminable(&self, axis: &AxisName) -> bool {
        let Some(info) = self.table.get(axis) else {
            return false;
        };
        let mut seen = false;
        for f in self.live.iter().filter(|f| f.axes.contains(axis)) {
            seen = true;
            if f
                .axes
                .iter()
                .any(|a| a.is_plate() && !info.plates.contains(a))
            {
                return false;
            }
        }
        seen
    }

    fn fused_axes(&self, axis: &AxisName) -> (Vec<usize>, Vec<AxisName>) {
        let mut members = Vec::new();
        let mut axes: Vec<AxisName> = Vec::new();
        for (i, f) in self.live.iter().enumerate() {
            if f.axes.contains(axis) {
                members.push(i);
                for a in &f.axes {
                    if !axes.contains(a) {
                        axes.push(a.clone());
                    }
                }
            }
        }
        (members, axes)
    }

    fn push_step(&mut self, axis: AxisName, reduction: Reduction, members: Vec<usize>, fused: Vec<AxisName>) {
        let fused_size = fused.iter().map(|a| self.size(a)).product::<usize>();
        let out_axes: Vec<AxisName> = fused.into_iter().filter(|a| *a != axis).collect();
        let out_shape: Vec<usize> = out_axes.iter().map(|a| self.size(a)).collect();
        let inputs: Vec<usize> = members.iter().map(|&i| self.live[i].slot).collect();
        let output = self.next_slot;
        self.next_slot += 1;
        self.peak = self.peak.max(fused_size);
        // Remove consumed factors from the back so indices stay valid.
        for &i in members.iter().rev() {
            self.live.remove(i);
        }
        self.live.push(Live {
            slot: output,
            axes: out_axes.clone(),
        });
        self.steps.push(PlanStep {
            axis,
            reduction,
            inputs,
            output,
            out_axes,
            out_shape,
            fused_size,
        });
    }

    fn reduce_plates(&mut self) {
        loop {
            let mut found = None;
            'search: for info in self.table.iter().filter(|i| i.name.is_plate()) {
                for (i, f) in self.live.iter().enumerate() {
                    if self.plate_reducible(&f.axes, &info.name) {
                        found = Some((i, info.name.clone()));
                        break 'search;
                    }
                }
            }
            let Some((i, plate)) = found else { return };
            let axes = self.live[i].axes.clone();
            self.push_step(plate, Reduction::Sum, vec![i], axes);
        }
    }

    fn live_sample_axes(&self) -> Vec<AxisName> {
        self.table
            .iter()
            .filter(|i| i.name.is_sample())
            .filter(|i| self.live.iter().any(|f| f.axes.contains(&i.name)))
            .map(|i| i.name.clone())
            .collect()
    }

    fn eliminate(&mut self, axis: AxisName) {
        let (members, fused) = self.fused_axes(&axis);
        self.push_step(axis, Reduction::Mean, members, fused);
    }

    fn finish(self, signatures: &[FactorSignature]) -> Result<ContractionPlan> {
        if let Some(f) = self.live.iter().find(|f| !f.axes.is_empty()) {
            let names: Vec<String> = f.axes.iter().map(|a| a.to_string()).collect();
            return Err(Error::Plan(format!(
                "no valid reduction order; stuck with axes {}",
                names.join(", ")
            )));
        }
        Ok(ContractionPlan {
            inputs: signatures.to_vec(),
            steps: self.steps,
            finals: self.live.iter().map(|f| f.slot).collect(),
            peak_size: self.peak,
        })
    }
}

/// Plans a contraction by greedy elimination.
///
/// Plate reductions are applied as soon as they are valid. Otherwise the
/// eliminable sample axis whose combined factor is smallest is averaged next,
/// with ties broken by declaration order in `table`.
pub fn plan_contraction(signatures: &[FactorSignature], table: &AxisTable) -> Result<ContractionPlan> {
    let mut planner = Planner::new(signatures, table)?;
    loop {
        planner.reduce_plates();
        let mut best: Option<(usize, AxisName)> = None;
        for axis in planner.live_sample_axes() {
            if !planner.eliminable(&axis) {
                continue;
            }
            let (_, fused) = planner.fused_axes(&axis);
            let size: usize = fused.iter().map(|a| planner.size(a)).product();
            if best.as_ref().is_none_or(|(b, _)| size < *b) {
                best = Some((size, axis));
            }
        }
        match best {
            Some((_, axis)) => planner.eliminate(axis),
            None => break,
        }
    }
    planner.finish(signatures)
}

/// Plans a contraction that eliminates sample axes in exactly `order`.
///
/// Fails if an axis in `order` cannot be eliminated when its turn comes, or if
/// sample axes remain afterwards.
pub fn plan_with_order(
    signatures: &[FactorSignature],
    table: &AxisTable,
    order: &[AxisName],
) -> Result<ContractionPlan> {
    let mut planner = Planner::new(signatures, table)?;
    for axis in order {
        planner.reduce_plates();
        if !planner.eliminable(axis) {
            return Err(Error::Plan(format!("axis {axis} cannot be eliminated here")));
        }
        planner.eliminate(axis.clone());
    }
    planner.reduce_plates();
    planner.finish(signatures)
}
