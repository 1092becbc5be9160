use crate::error::{Error, Result};
use crate::placement::{ClientCount, Placement};

use super::{AbstractValue, Primitive, PrimitiveId};

fn placement_err(op: PrimitiveId, reason: impl Into<String>) -> Error {
    Error::Placement {
        op: op.name().to_string(),
        reason: reason.into(),
    }
}

fn invalid(op: PrimitiveId, reason: impl Into<String>) -> Error {
    Error::InvalidGraph(format!("{}: {}", op.name(), reason.into()))
}

fn arity(op: PrimitiveId, ins: &[&AbstractValue], n: usize) -> Result<()> {
    if ins.len() != n {
        return Err(invalid(op, format!("expected {n} operands, got {}", ins.len())));
    }
    Ok(())
}

fn same_dtype(op: PrimitiveId, ins: &[&AbstractValue]) -> Result<()> {
    if let Some(first) = ins.first() {
        if let Some(other) = ins.iter().find(|v| v.dtype != first.dtype) {
            return Err(Error::DTypeMismatch {
                op: op.name(),
                lhs: first.dtype.name(),
                rhs: other.dtype.name(),
            });
        }
    }
    Ok(())
}

fn shape_err(op: PrimitiveId, a: &AbstractValue, b: &AbstractValue) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    }
}

/// Placement of a local operation's result. Server- and clients-placed
/// operands never mix, and an unplaced operand may only join placed ones
/// when it is a rank-0 scalar.
fn local_placement(op: PrimitiveId, ins: &[&AbstractValue]) -> Result<Option<Placement>> {
    let mut placement = None;
    for v in ins {
        match (placement, v.placement) {
            (_, None) => {}
            (None, p) => placement = p,
            (Some(a), Some(b)) if a != b => {
                return Err(placement_err(
                    op,
                    "operands are placed at both server and clients; communicate explicitly",
                ))
            }
            _ => {}
        }
    }
    if placement.is_some() && ins.iter().any(|v| v.placement.is_none() && v.rank() > 0) {
        return Err(placement_err(
            op,
            "an unplaced non-scalar operand cannot be combined with placed operands",
        ));
    }
    Ok(placement)
}

/// Result types of applying `prim` to operands of the given types.
pub fn infer(
    prim: &Primitive,
    ins: &[&AbstractValue],
    clients: Option<ClientCount>,
) -> Result<Vec<AbstractValue>> {
    let op = prim.id();
    same_dtype(op, ins)?;
    let out = match prim {
        Primitive::Constant { value, placement } => {
            arity(op, ins, 0)?;
            let av = AbstractValue {
                shape: value.shape().to_vec(),
                dtype: value.dtype(),
                placement: *placement,
            };
            if let Some(p) = placement {
                let n = clients.ok_or_else(|| placement_err(op, "no client count bound"))?;
                if av.shape.first() != Some(&p.cardinality(n)) {
                    return Err(placement_err(
                        op,
                        format!("{p}-placed constant has shape {:?}", av.shape),
                    ));
                }
            }
            av
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
            arity(op, ins, 2)?;
            let (a, b) = (ins[0], ins[1]);
            let shape = if a.shape == b.shape || b.rank() == 0 {
                a.shape.clone()
            } else if a.rank() == 0 {
                b.shape.clone()
            } else {
                return Err(shape_err(op, a, b));
            };
            AbstractValue {
                shape,
                dtype: a.dtype,
                placement: local_placement(op, ins)?,
            }
        }
        Primitive::Neg | Primitive::IntegerPow { .. } | Primitive::Scale { .. } => {
            arity(op, ins, 1)?;
            if let Primitive::Scale { factor } = prim {
                if !factor.is_finite() {
                    return Err(invalid(op, "scale factor must be finite"));
                }
            }
            ins[0].clone()
        }
        Primitive::BatchedDot => {
            arity(op, ins, 2)?;
            let (a, b) = (ins[0], ins[1]);
            if a.shape != b.shape || a.rank() == 0 {
                return Err(shape_err(op, a, b));
            }
            AbstractValue {
                shape: a.shape[..a.rank() - 1].to_vec(),
                dtype: a.dtype,
                placement: local_placement(op, ins)?,
            }
        }
        Primitive::BatchedOuter => {
            arity(op, ins, 2)?;
            let (m, b) = (ins[0], ins[1]);
            if b.rank() == 0 || m.shape[..] != b.shape[..b.rank() - 1] {
                return Err(shape_err(op, m, b));
            }
            AbstractValue {
                shape: b.shape.clone(),
                dtype: b.dtype,
                placement: local_placement(op, ins)?,
            }
        }
        Primitive::ReduceLeading { axis, keepdims, .. } => {
            arity(op, ins, 1)?;
            let a = ins[0];
            if *axis >= a.rank() {
                return Err(invalid(op, format!("axis {axis} out of range for {a}")));
            }
            if a.shape[*axis] == 0 {
                return Err(invalid(op, "cannot reduce an axis of extent 0"));
            }
            if a.placement.is_some() && *axis == 0 {
                return Err(placement_err(
                    op,
                    "reducing the placement axis is communication; use sum_from_clients",
                ));
            }
            let mut shape = a.shape.clone();
            if *keepdims {
                shape[*axis] = 1;
            } else {
                shape.remove(*axis);
            }
            AbstractValue {
                shape,
                ..a.clone()
            }
        }
        Primitive::TileLeading { count, axis, insert } => {
            arity(op, ins, 1)?;
            let a = ins[0];
            if *count == 0 {
                return Err(invalid(op, "tile count must be positive"));
            }
            let mut shape = a.shape.clone();
            if *insert {
                if *axis > a.rank() {
                    return Err(invalid(op, format!("axis {axis} out of range for {a}")));
                }
                shape.insert(*axis, *count);
            } else {
                if *axis >= a.rank() || a.shape[*axis] != 1 {
                    return Err(invalid(op, format!("axis {axis} of {a} is not a unit axis")));
                }
                shape[*axis] = *count;
            }
            if a.placement.is_some() && *axis == 0 {
                return Err(placement_err(
                    op,
                    "tiling the placement axis is communication; use broadcast_clients",
                ));
            }
            AbstractValue {
                shape,
                ..a.clone()
            }
        }
        Primitive::BroadcastClients => {
            arity(op, ins, 1)?;
            let a = ins[0];
            let n = clients.ok_or_else(|| placement_err(op, "no client count bound"))?;
            if a.placement != Some(Placement::Server) {
                return Err(placement_err(
                    op,
                    format!("operand must be server-placed, got {a}"),
                ));
            }
            let mut shape = a.shape.clone();
            shape[0] = n.get();
            AbstractValue {
                shape,
                dtype: a.dtype,
                placement: Some(Placement::Clients),
            }
        }
        Primitive::SumFromClients | Primitive::MeanFromClients => {
            arity(op, ins, 1)?;
            let a = ins[0];
            let n = clients.ok_or_else(|| placement_err(op, "no client count bound"))?;
            if a.placement != Some(Placement::Clients) || a.shape[0] != n.get() {
                return Err(placement_err(
                    op,
                    format!("operand must be clients-placed over {n} clients, got {a}"),
                ));
            }
            let mut shape = a.shape.clone();
            shape[0] = 1;
            AbstractValue {
                shape,
                dtype: a.dtype,
                placement: Some(Placement::Server),
            }
        }
        Primitive::MapClients { body } => {
            return infer_map(body, ins, clients);
        }
    };
    Ok(vec![out])
}

fn infer_map(
    body: &super::Graph,
    ins: &[&AbstractValue],
    clients: Option<ClientCount>,
) -> Result<Vec<AbstractValue>> {
    let op = PrimitiveId::MapClients;
    if ins.is_empty() {
        return Err(invalid(op, "needs at least one mapped argument"));
    }
    let placement = ins[0].placement.ok_or_else(|| {
        placement_err(op, "mapped arguments must be placed")
    })?;
    if let Some(n) = clients {
        if ins[0].shape.first() != Some(&placement.cardinality(n)) {
            return Err(placement_err(op, format!("argument {} has wrong extent", ins[0])));
        }
    }
    let extent = ins[0].shape[0];
    for v in ins {
        if v.placement != Some(placement) {
            return Err(placement_err(op, "mapped arguments have mixed placements"));
        }
        if v.shape[0] != extent {
            return Err(placement_err(op, "mapped arguments have different leading extents"));
        }
    }
    if body.inputs.len() != ins.len() {
        return Err(invalid(
            op,
            format!("body takes {} arguments, {} given", body.inputs.len(), ins.len()),
        ));
    }
    for (&bv, v) in body.inputs.iter().zip(ins) {
        if *body.value(bv) != v.payload() {
            return Err(invalid(
                op,
                format!("body expects {}, argument slice is {}", body.value(bv), v.payload()),
            ));
        }
    }
    Ok(body
        .outputs
        .iter()
        .map(|&o| {
            let inner = body.value(o);
            let mut shape = vec![extent];
            shape.extend_from_slice(&inner.shape);
            AbstractValue {
                shape,
                dtype: inner.dtype,
                placement: Some(placement),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{DType, ReduceOp};

    fn n(k: usize) -> Option<ClientCount> {
        Some(ClientCount::new(k).unwrap())
    }

    #[test]
    fn federated_signatures() {
        let s = AbstractValue::server(&[2], DType::F64);
        let c = AbstractValue::clients(n(3).unwrap(), &[2], DType::F64);
        let out = infer(&Primitive::BroadcastClients, &[&s], n(3)).unwrap();
        assert_eq!(out[0], c);
        assert!(infer(&Primitive::BroadcastClients, &[&c], n(3)).is_err());
        let out = infer(&Primitive::SumFromClients, &[&c], n(3)).unwrap();
        assert_eq!(out[0], s);
        assert!(infer(&Primitive::MeanFromClients, &[&s], n(3)).is_err());
        assert!(infer(&Primitive::BroadcastClients, &[&s], None).is_err());
    }

    #[test]
    fn local_ops_reject_mixed_placements() {
        let s = AbstractValue::server(&[2], DType::F64);
        let c = AbstractValue::clients(n(1).unwrap(), &[2], DType::F64);
        let err = infer(&Primitive::Add, &[&s, &c], n(1)).unwrap_err();
        assert!(matches!(err, Error::Placement { .. }), "{err}");
        let k = AbstractValue::local(&[], DType::F64);
        let out = infer(&Primitive::Mul, &[&k, &c], n(1)).unwrap();
        assert_eq!(out[0], c);
        let v = AbstractValue::local(&[1, 2], DType::F64);
        assert!(infer(&Primitive::Add, &[&v, &c], n(1)).is_err());
    }

    #[test]
    fn placement_axis_is_protected() {
        let c = AbstractValue::clients(n(4).unwrap(), &[3], DType::F64);
        let reduce0 = Primitive::reduce_sum_leading();
        assert!(infer(&reduce0, &[&c], n(4)).is_err());
        let reduce1 = Primitive::ReduceLeading { op: ReduceOp::Mean, axis: 1, keepdims: false };
        assert_eq!(infer(&reduce1, &[&c], n(4)).unwrap()[0].shape, vec![4]);
        let tile0 = Primitive::TileLeading { count: 2, axis: 0, insert: true };
        assert!(infer(&tile0, &[&c], n(4)).is_err());
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let a = AbstractValue::local(&[2], DType::F64);
        let b = AbstractValue::local(&[2], DType::F32);
        assert!(matches!(
            infer(&Primitive::Add, &[&a, &b], None),
            Err(Error::DTypeMismatch { .. })
        ));
    }
}
