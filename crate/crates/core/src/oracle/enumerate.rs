use crate::error::{Error, Result};
use crate::log_tensor::{AxisName, AxisTable, LogFactor};

fn entry(f: &LogFactor, table: &AxisTable, assign: &[usize]) -> f64 {
    let index: Vec<usize> = f
        .axes()
        .iter()
        .map(|a| assign[table.position(a).expect("declared axis")])
        .collect();
    f.get(&index)
}

/// Innermost plate among a factor's axes: the one enclosed by all others.
fn factor_level(f: &LogFactor, table: &AxisTable) -> Option<AxisName> {
    let plates: Vec<&AxisName> = f.axes().iter().filter(|a| a.is_plate()).collect();
    plates
        .iter()
        .find(|p| {
            let info = table.get(p).expect("declared plate");
            plates.iter().all(|q| *q == **p || info.plates.contains(q))
        })
        .map(|p| (*p).clone())
}

fn axis_level(table: &AxisTable, a: &AxisName) -> Option<AxisName> {
    table.get(a).and_then(|i| i.plates.last().cloned())
}

fn level_value(
    level: Option<&AxisName>,
    factors: &[LogFactor],
    table: &AxisTable,
    assign: &mut Vec<usize>,
) -> f64 {
    let own: Vec<usize> = table
        .iter()
        .enumerate()
        .filter(|(_, i)| i.name.is_sample() && axis_level(table, &i.name).as_ref() == level)
        .map(|(p, _)| p)
        .collect();
    let here: Vec<&LogFactor> = factors
        .iter()
        .filter(|f| factor_level(f, table).as_ref() == level)
        .collect();
    let children: Vec<(usize, AxisName, usize)> = table
        .iter()
        .enumerate()
        .filter(|(_, i)| i.name.is_plate() && i.plates.last() == level)
        .map(|(p, i)| (p, i.name.clone(), i.size))
        .collect();

    let sizes: Vec<usize> = own.iter().map(|&p| table.iter().nth(p).unwrap().size).collect();
    let total: usize = sizes.iter().product();
    let mut terms = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        for (d, &p) in own.iter().enumerate().rev() {
            assign[p] = rem % sizes[d];
            rem /= sizes[d];
        }
        let mut t: f64 = here.iter().map(|f| entry(f, table, assign)).sum();
        for (p, name, size) in &children {
            for m in 0..*size {
                assign[*p] = m;
                t += level_value(Some(name), factors, table, assign);
            }
        }
        terms.push(t);
    }
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + (terms.iter().map(|t| (t - mx).exp()).sum::<f64>() / total as f64).ln()
}

/// Evaluates the contraction by enumerating every index combination.
///
/// Sample axes owned by a plate are enumerated afresh for each member, so a
/// plate contributes a product over members of per-member averages.
pub fn brute_force_log_contraction(factors: &[LogFactor], table: &AxisTable) -> f64 {
    let mut assign = vec![0; table.len()];
    level_value(None, factors, table, &mut assign)
}

/// Normalized weight of each entry of `factors[target]`, by enumeration.
/// Only sample axes are supported.
pub fn brute_force_marginals(factors: &[LogFactor], table: &AxisTable, target: usize) -> Result<Vec<f64>> {
    if table.iter().any(|i| i.name.is_plate()) {
        return Err(Error::Capability("plate axes are not enumerated here".into()));
    }
    let t = factors
        .get(target)
        .ok_or_else(|| Error::Lookup(format!("no factor {target}")))?;
    let sizes: Vec<usize> = table.iter().map(|i| i.size).collect();
    let total: usize = sizes.iter().product();
    let mut logs = Vec::with_capacity(total);
    let mut assign = vec![0; sizes.len()];
    let mut slots = Vec::with_capacity(total);
    let strides = {
        let mut s = vec![1; t.shape().len()];
        for d in (0..s.len().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * t.shape()[d + 1];
        }
        s
    };
    for flat in 0..total {
        let mut rem = flat;
        for d in (0..sizes.len()).rev() {
            assign[d] = rem % sizes[d];
            rem /= sizes[d];
        }
        logs.push(factors.iter().map(|f| entry(f, table, &assign)).sum::<f64>());
        let slot: usize = t
            .axes()
            .iter()
            .zip(&strides)
            .map(|(a, s)| assign[table.position(a).unwrap()] * s)
            .sum();
        slots.push(slot);
    }
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Err(Error::DegenerateEvidence);
    }
    let z: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
    let mut w = vec![0.0; t.len()];
    for (l, s) in logs.iter().zip(slots) {
        w[s] += (l - mx).exp() / z;
    }
    Ok(w)
}
