use crate::error::Result;
use crate::tensor::{ReduceOp, Tensor};

use super::{inline_map, Graph, GraphBuilder, Primitive, Var};

/// Rewrite every federated primitive into local array ops. Placement
/// annotations are dropped: the result is a plain array program over the
/// same concrete buffers.
pub fn lower(g: &Graph) -> Result<Graph> {
    let mut b = GraphBuilder::new(g.clients);
    let mut map: Vec<Option<Var>> = vec![None; g.vars.len()];
    for &v in &g.inputs {
        map[v.index()] = Some(b.input(g.value(v).unplaced()));
    }
    let n = g.clients.map(|c| c.get());
    for eq in &g.equations {
        let ins: Vec<Var> = eq.inputs.iter().map(|v| map[v.index()].unwrap()).collect();
        let outs = match &eq.primitive {
            Primitive::BroadcastClients => {
                let count = n.expect("validated graph has a client count");
                vec![b.tile(ins[0], count, 0, false)?]
            }
            Primitive::SumFromClients => vec![b.reduce(ReduceOp::Sum, ins[0], 0, true)?],
            Primitive::MeanFromClients => {
                let av = b.value(ins[0]).clone();
                let total = b.reduce(ReduceOp::Sum, ins[0], 0, true)?;
                let ones = b.constant(Tensor::ones(&av.shape, av.dtype))?;
                let count = b.reduce(ReduceOp::Sum, ones, 0, true)?;
                vec![b.div(total, count)?]
            }
            Primitive::MapClients { body } => inline_map(&mut b, body, &ins)?,
            Primitive::Constant { value, .. } => vec![b.constant(value.clone())?],
            other => b.push(other.clone(), &ins)?,
        };
        for (&old, new) in eq.outputs.iter().zip(outs) {
            map[old.index()] = Some(new);
        }
    }
    let outs = g.outputs.iter().map(|v| map[v.index()].unwrap()).collect();
    Ok(b.finish(outs))
}
