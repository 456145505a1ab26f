use crate::error::{GraphError, Result};

use super::params::{GradientStore, ParamRef, Params, Role};

/// One additive piece of an [`Expr`].
///
/// Parent slots index the node's parent list. A term whose natural width is
/// one is broadcast across every coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Const(f64),
    Consts(Vec<f64>),
    /// `scale * value of parent`.
    Parent { slot: usize, scale: f64 },
    /// `scale * parameter`; `per_member` selects the row of the current plate
    /// member instead of the single shared row.
    Param {
        param: ParamRef,
        scale: f64,
        per_member: bool,
    },
    /// Inner product of a parent vector with the member's covariate vector.
    ParentDot { slot: usize, covariate: usize },
}

/// An affine map from parent values, parameters and covariates to one
/// distribution argument of fixed width.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    dim: usize,
    terms: Vec<Term>,
}

/// Inputs available while evaluating an expression for one plate member.
pub struct EvalCtx<'a> {
    pub params: Params<'a>,
    pub parents: &'a [&'a [f64]],
    pub covariates: &'a [&'a [f64]],
    pub member: usize,
}

impl Expr {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::zeros(dim).plus(Term::Const(c))
    }

    pub fn consts(values: Vec<f64>) -> Self {
        Self::zeros(values.len()).plus(Term::Consts(values))
    }

    pub fn parent(dim: usize, slot: usize) -> Self {
        Self::zeros(dim).plus(Term::Parent { slot, scale: 1.0 })
    }

    pub fn param(dim: usize, param: ParamRef) -> Self {
        Self::zeros(dim).plus(Term::Param {
            param,
            scale: 1.0,
            per_member: false,
        })
    }

    pub fn member_param(dim: usize, param: ParamRef) -> Self {
        Self::zeros(dim).plus(Term::Param {
            param,
            scale: 1.0,
            per_member: true,
        })
    }

    pub fn plus(mut self, term: Term) -> Self {
        self.terms.push(term);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// True when the value can differ between plate members with identical
    /// parent values.
    pub fn member_dependent(&self) -> bool {
        self.terms.iter().any(|t| {
            matches!(
                t,
                Term::Param {
                    per_member: true,
                    ..
                } | Term::ParentDot { .. }
            )
        })
    }

    pub fn parent_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().filter_map(|t| match t {
            Term::Parent { slot, .. } | Term::ParentDot { slot, .. } => Some(*slot),
            _ => None,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamRef> + '_ {
        self.terms.iter().filter_map(|t| match t {
            Term::Param { param, .. } => Some(*param),
            _ => None,
        })
    }

    pub fn uses_role(&self, role: Role) -> bool {
        self.params().any(|p| p.role == role)
    }

    pub fn covariate_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().filter_map(|t| match t {
            Term::ParentDot { covariate, .. } => Some(*covariate),
            _ => None,
        })
    }

    /// Checks widths against the node's parents, covariates and parameter
    /// blocks. `members` is the plate size the node is replicated over.
    pub(crate) fn check(
        &self,
        node: &str,
        parent_dims: &[usize],
        covariate_dims: &[usize],
        params: Params<'_>,
        members: usize,
    ) -> Result<(), GraphError> {
        let bad = |msg: String| GraphError::Invalid {
            node: node.to_string(),
            msg,
        };
        let width_ok = |w: usize| w == 1 || w == self.dim;
        for t in &self.terms {
            match t {
                Term::Const(c) if !c.is_finite() => return Err(bad("non-finite constant".into())),
                Term::Consts(v) if v.len() != self.dim => {
                    return Err(bad(format!("{} constants for width {}", v.len(), self.dim)))
                }
                Term::Parent { slot, .. } => {
                    let d = *parent_dims
                        .get(*slot)
                        .ok_or_else(|| bad(format!("parent slot {slot} out of range")))?;
                    if !width_ok(d) {
                        return Err(bad(format!("parent of width {d} in expression of width {}", self.dim)));
                    }
                }
                Term::ParentDot { slot, covariate } => {
                    let d = *parent_dims
                        .get(*slot)
                        .ok_or_else(|| bad(format!("parent slot {slot} out of range")))?;
                    let c = *covariate_dims
                        .get(*covariate)
                        .ok_or_else(|| bad(format!("covariate {covariate} out of range")))?;
                    if d != c {
                        return Err(bad(format!("parent width {d} against covariate width {c}")));
                    }
                }
                Term::Param {
                    param, per_member, ..
                } => {
                    let store = match param.role {
                        Role::Model => params.model,
                        Role::Proposal => params.proposal,
                    };
                    let block = store
                        .get(param.index)
                        .ok_or_else(|| GraphError::UnknownParam(format!("{:?} #{}", param.role, param.index)))?;
                    let rows = if *per_member { members } else { 1 };
                    if block.rows != rows || !width_ok(block.cols) {
                        return Err(bad(format!(
                            "parameter `{}` is {}x{}, expected {rows}x{} or {rows}x1",
                            block.name, block.rows, block.cols, self.dim
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn eval_into(&self, ctx: &EvalCtx<'_>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            match t {
                Term::Const(c) => out.iter_mut().for_each(|o| *o += c),
                Term::Consts(v) => out.iter_mut().zip(v).for_each(|(o, c)| *o += c),
                Term::Parent { slot, scale } => add_broadcast(out, ctx.parents[*slot], *scale),
                Term::Param {
                    param,
                    scale,
                    per_member,
                } => {
                    let block = ctx.params.block(*param);
                    let row = block.row(if *per_member { ctx.member } else { 0 });
                    add_broadcast(out, row, *scale);
                }
                Term::ParentDot { slot, covariate } => {
                    let dot: f64 = ctx.parents[*slot]
                        .iter()
                        .zip(ctx.covariates[*covariate])
                        .map(|(a, b)| a * b)
                        .sum();
                    out.iter_mut().for_each(|o| *o += dot);
                }
            }
        }
    }

    /// Adds `∂(upstream)/∂param` into `grads` for parameters of `role`, given
    /// the upstream gradient `g_out` with respect to this expression's value.
    pub fn backprop(&self, member: usize, g_out: &[f64], role: Role, grads: &mut GradientStore) {
        for t in &self.terms {
            if let Term::Param {
                param,
                scale,
                per_member,
            } = t
            {
                if param.role != role {
                    continue;
                }
                let row = if *per_member { member } else { 0 };
                let r = grads.row_mut(param.index, row);
                if r.len() == 1 {
                    r[0] += scale * g_out.iter().sum::<f64>();
                } else {
                    r.iter_mut().zip(g_out).for_each(|(b, g)| *b += scale * g);
                }
            }
        }
    }
}

fn add_broadcast(out: &mut [f64], v: &[f64], scale: f64) {
    if v.len() == 1 {
        let x = scale * v[0];
        out.iter_mut().for_each(|o| *o += x);
    } else {
        out.iter_mut().zip(v).for_each(|(o, x)| *o += scale * x);
    }
}
