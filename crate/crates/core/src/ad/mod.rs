//! Federated automatic differentiation as graph transforms.
//!
//! Forward mode is a direct rewrite ([`jvp`]). Reverse mode linearizes with
//! [`jvp`] and then transposes the linear part ([`transpose`]); the rules
//! only emit primitives from the closed set, which [`check_closure`]
//! verifies.

mod closure;
mod jvp;
mod transpose;

pub use closure::{check_closure, check_primitive_names};
pub use jvp::{jvp, jvp_with_mask};
pub use transpose::{transpose, Seed};

use crate::error::{Error, Result};
use crate::ir::{Graph, Primitive};
use crate::placement::Placement;

/// Flags, per variable, whether it depends on an input flagged in `mask`.
pub(crate) fn linear_vars(g: &Graph, mask: &[bool]) -> Vec<bool> {
    let mut lin = vec![false; g.vars().len()];
    for (&v, &m) in g.inputs().iter().zip(mask) {
        lin[v.index()] = m;
    }
    for eq in g.equations() {
        let dep = !matches!(eq.primitive, Primitive::Constant { .. })
            && eq.inputs.iter().any(|v| lin[v.index()]);
        for &o in &eq.outputs {
            lin[o.index()] = dep;
        }
    }
    lin
}

/// Reverse-mode gradient of the single scalar output of `g` with respect to
/// input `wrt`. The result takes the inputs of `g` and returns one value
/// shaped like input `wrt`.
pub fn grad(g: &Graph, wrt: usize) -> Result<Graph> {
    let [out] = g.outputs() else {
        return Err(Error::Differentiation(format!(
            "grad needs exactly one output, graph has {}",
            g.outputs().len()
        )));
    };
    let out_ty = g.value(*out);
    if out_ty.element_count() != 1 {
        return Err(Error::Differentiation(format!(
            "grad needs a scalar output, got {out_ty}"
        )));
    }
    if out_ty.placement == Some(Placement::Clients) {
        return Err(Error::Differentiation(
            "grad of a clients-placed output is not defined".into(),
        ));
    }
    let Some(&x) = g.inputs().get(wrt) else {
        return Err(Error::Differentiation(format!("no input {wrt}")));
    };
    if g.value(x).placement == Some(Placement::Clients) {
        return Err(Error::Differentiation(
            "differentiation with respect to a clients-placed input is not supported".into(),
        ));
    }
    let mut mask = vec![false; g.inputs().len()];
    mask[wrt] = true;
    let lin = jvp_with_mask(g, &mask)?;
    let mut linear_inputs = vec![false; lin.inputs().len()];
    *linear_inputs.last_mut().expect("tangent input") = true;
    transpose(&lin, &linear_inputs, Seed::Ones)
}
