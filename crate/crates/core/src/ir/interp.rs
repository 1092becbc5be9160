//! Reference interpreter.

use crate::error::{Error, Result};
use crate::placement::ClientCount;
use crate::tensor::{
    batched_dot, batched_outer, ew_binary, ew_unary, reduce_axis, tile_axis, BinaryOp, ReduceOp,
    Tensor, UnaryOp,
};

use super::{Graph, Primitive};

fn client_count(clients: Option<ClientCount>, op: &Primitive) -> Result<usize> {
    clients.map(ClientCount::get).ok_or_else(|| Error::Placement {
        op: op.id().name().to_string(),
        reason: "no client count bound".into(),
    })
}

/// Mean over the clients axis: pairwise sum, then division by n.
pub(crate) fn clients_mean(a: &Tensor) -> Result<Tensor> {
    let n = a.shape()[0];
    let s = reduce_axis(ReduceOp::Sum, a, 0, true)?;
    ew_binary(BinaryOp::Div, &s, &Tensor::scalar(n as f64).cast(a.dtype()))
}

/// Apply one primitive to concrete operands.
pub fn eval_equation(
    prim: &Primitive,
    ins: &[Tensor],
    clients: Option<ClientCount>,
) -> Result<Vec<Tensor>> {
    let one = match prim {
        Primitive::Constant { value, .. } => value.clone(),
        Primitive::Add => ew_binary(BinaryOp::Add, &ins[0], &ins[1])?,
        Primitive::Sub => ew_binary(BinaryOp::Sub, &ins[0], &ins[1])?,
        Primitive::Mul => ew_binary(BinaryOp::Mul, &ins[0], &ins[1])?,
        Primitive::Div => ew_binary(BinaryOp::Div, &ins[0], &ins[1])?,
        Primitive::Neg => ew_unary(UnaryOp::Neg, &ins[0])?,
        Primitive::IntegerPow { exponent } => ew_unary(UnaryOp::IntegerPow(*exponent), &ins[0])?,
        Primitive::Scale { factor } => ew_unary(UnaryOp::Scale(*factor), &ins[0])?,
        Primitive::BatchedDot => batched_dot(&ins[0], &ins[1])?,
        Primitive::BatchedOuter => batched_outer(&ins[0], &ins[1])?,
        Primitive::ReduceLeading { op, axis, keepdims } => {
            reduce_axis(*op, &ins[0], *axis, *keepdims)?
        }
        Primitive::TileLeading { count, axis, insert } => {
            tile_axis(&ins[0], *count, *axis, *insert)?
        }
        Primitive::BroadcastClients => tile_axis(&ins[0], client_count(clients, prim)?, 0, false)?,
        Primitive::SumFromClients => reduce_axis(ReduceOp::Sum, &ins[0], 0, true)?,
        Primitive::MeanFromClients => clients_mean(&ins[0])?,
        Primitive::MapClients { body } => return eval_map(body, ins),
    };
    Ok(vec![one])
}

fn eval_map(body: &Graph, ins: &[Tensor]) -> Result<Vec<Tensor>> {
    let extent = ins.first().map(|t| t.shape()[0]).unwrap_or(0);
    let mut per_output: Vec<Vec<Tensor>> = vec![Vec::with_capacity(extent); body.outputs.len()];
    for i in 0..extent {
        let slices = ins
            .iter()
            .map(|t| t.index_leading(i))
            .collect::<Result<Vec<_>>>()?;
        for (acc, out) in per_output.iter_mut().zip(eval_graph(body, &slices)?) {
            acc.push(out);
        }
    }
    per_output.iter().map(|parts| Tensor::stack(parts)).collect()
}

/// Evaluate `g` on concrete inputs. Placed inputs include their placement
/// axis.
pub fn eval_graph(g: &Graph, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    if inputs.len() != g.inputs.len() {
        return Err(Error::InvalidArgument {
            op: "eval_graph",
            reason: format!("expected {} inputs, got {}", g.inputs.len(), inputs.len()),
        });
    }
    let mut env: Vec<Option<Tensor>> = vec![None; g.vars.len()];
    for (&v, t) in g.inputs.iter().zip(inputs) {
        let av = g.value(v);
        if !av.matches(t) {
            return Err(Error::InvalidArgument {
                op: "eval_graph",
                reason: format!(
                    "input {} expects {av}, got {}{:?}",
                    v.0,
                    t.dtype(),
                    t.shape()
                ),
            });
        }
        env[v.index()] = Some(t.clone());
    }
    for eq in &g.equations {
        let ins: Vec<Tensor> = eq
            .inputs
            .iter()
            .map(|v| env[v.index()].clone().expect("validated graph"))
            .collect();
        let outs = eval_equation(&eq.primitive, &ins, g.clients)?;
        for (&o, t) in eq.outputs.iter().zip(outs) {
            env[o.index()] = Some(t);
        }
    }
    Ok(g.outputs
        .iter()
        .map(|v| env[v.index()].clone().expect("validated graph"))
        .collect())
}
