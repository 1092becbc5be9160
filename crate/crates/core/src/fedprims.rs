//! Eager federated building blocks, computed directly on placed arrays.
//!
//! This is the reference semantics the interpreter and the sharded runtime
//! are checked against, so it is deliberately single-threaded.

use crate::error::{Error, Result};
use crate::ir::{eval_equation, infer, AbstractValue, Primitive};
use crate::placement::{ClientCount, PlacedStructure, PlacedTensor, Placement};
use crate::program::{FedBuilder, MapBody};
use crate::tensor::{reduce_axis, tile_axis, ReduceOp, Tensor};

fn expect_placement(op: &str, x: &PlacedTensor, want: Placement) -> Result<()> {
    if x.placement() != want {
        return Err(Error::Placement {
            op: op.to_string(),
            reason: format!("operand must be {want}-placed, got {}", x.placement()),
        });
    }
    Ok(())
}

/// Copy a server value to every client.
pub fn federated_broadcast(x: &PlacedTensor, clients: ClientCount) -> Result<PlacedTensor> {
    expect_placement("federated_broadcast", x, Placement::Server)?;
    let t = tile_axis(x.tensor(), clients.get(), 0, false)?;
    PlacedTensor::new(t, Placement::Clients, clients)
}

/// Sum a clients value into a server value.
pub fn federated_sum(x: &PlacedTensor) -> Result<PlacedTensor> {
    expect_placement("federated_sum", x, Placement::Clients)?;
    let t = reduce_axis(ReduceOp::Sum, x.tensor(), 0, true)?;
    Ok(crate::placement::place_server(&t.index_leading(0)?))
}

/// Unweighted mean of a clients value, delivered to the server.
pub fn federated_mean(x: &PlacedTensor) -> Result<PlacedTensor> {
    expect_placement("federated_mean", x, Placement::Clients)?;
    let t = crate::ir::clients_mean(x.tensor())?;
    Ok(crate::placement::place_server(&t.index_leading(0)?))
}

/// Apply `f` to every slice of a uniformly placed structure. The leaves, in
/// canonical order, are the arguments of `f`; results keep the placement.
pub fn federated_map<F>(f: F, xs: &PlacedStructure) -> Result<PlacedStructure>
where
    F: Fn(&[Tensor]) -> Result<Vec<Tensor>>,
{
    let placement = crate::placement::validate_structure(xs)?.ok_or_else(|| {
        Error::InvalidArgument {
            op: "federated_map",
            reason: "nothing to map over".into(),
        }
    })?;
    let leaves = xs.leaves();
    let extent = leaves[0].1.cardinality();
    let mut outputs: Vec<Vec<Tensor>> = Vec::new();
    for i in 0..extent {
        let slice = leaves
            .iter()
            .map(|(_, t)| t.tensor().index_leading(i))
            .collect::<Result<Vec<_>>>()?;
        let outs = f(&slice)?;
        if outputs.is_empty() {
            outputs = vec![Vec::with_capacity(extent); outs.len()];
        }
        if outs.is_empty() || outs.len() != outputs.len() {
            return Err(Error::InvalidArgument {
                op: "federated_map",
                reason: "mapped function must return the same non-zero number of values for every client".into(),
            });
        }
        for (acc, t) in outputs.iter_mut().zip(outs) {
            acc.push(t);
        }
    }
    let leaves = outputs
        .iter()
        .map(|parts| {
            Ok(PlacedStructure::Leaf(PlacedTensor::from_stacked(
                Tensor::stack(parts)?,
                placement,
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlacedStructure::Tuple(leaves))
}

/// Value held by the eager backend.
#[derive(Debug, Clone, PartialEq)]
pub struct EagerValue {
    pub tensor: Tensor,
    pub placement: Option<Placement>,
}

impl EagerValue {
    pub fn local(tensor: Tensor) -> Self {
        EagerValue {
            tensor,
            placement: None,
        }
    }

    pub fn placed(p: &PlacedTensor) -> Self {
        EagerValue {
            tensor: p.tensor().clone(),
            placement: Some(p.placement()),
        }
    }

    pub fn abstract_value(&self) -> AbstractValue {
        AbstractValue {
            shape: self.tensor.shape().to_vec(),
            dtype: self.tensor.dtype(),
            placement: self.placement,
        }
    }
}

/// Eager backend: programs written against [`FedBuilder`] run immediately.
#[derive(Debug, Clone)]
pub struct Eager {
    clients: Option<ClientCount>,
    in_body: bool,
}

impl Eager {
    pub fn new(clients: ClientCount) -> Self {
        Eager {
            clients: Some(clients),
            in_body: false,
        }
    }

    pub fn clients(&self) -> Option<ClientCount> {
        self.clients
    }

    /// Wrap an input, checking its placement extent.
    pub fn input(&self, tensor: Tensor, placement: Option<Placement>) -> Result<EagerValue> {
        if let (Some(p), Some(n)) = (placement, self.clients) {
            PlacedTensor::new(tensor.clone(), p, n)?;
        }
        Ok(EagerValue { tensor, placement })
    }
}

impl FedBuilder for Eager {
    type Value = EagerValue;

    fn value_type(&self, v: &EagerValue) -> AbstractValue {
        v.abstract_value()
    }

    fn bind(&mut self, primitive: Primitive, args: &[EagerValue]) -> Result<EagerValue> {
        let id = primitive.id();
        if self.in_body && id.is_federated() {
            return Err(Error::Placement {
                op: id.name().to_string(),
                reason: "federated operations cannot appear inside a per-client function".into(),
            });
        }
        if let Primitive::MapClients { .. } = primitive {
            return Err(Error::InvalidGraph("bind map_clients through federated_map".into()));
        }
        let types: Vec<AbstractValue> = args.iter().map(EagerValue::abstract_value).collect();
        let refs: Vec<&AbstractValue> = types.iter().collect();
        let out_type = infer(&primitive, &refs, self.clients)?.remove(0);
        let ins: Vec<Tensor> = args.iter().map(|a| a.tensor.clone()).collect();
        let tensor = eval_equation(&primitive, &ins, self.clients)?.remove(0);
        Ok(EagerValue {
            tensor,
            placement: out_type.placement,
        })
    }

    fn federated_map(&mut self, args: &[EagerValue], f: &MapBody<'_, Self>) -> Result<Vec<EagerValue>> {
        let op = "map_clients".to_string();
        if self.in_body {
            return Err(Error::Placement {
                op,
                reason: "nested federated_map".into(),
            });
        }
        let Some(first) = args.first() else {
            return Err(Error::InvalidArgument {
                op: "map_clients",
                reason: "federated_map needs at least one argument".into(),
            });
        };
        let extent = first.tensor.shape().first().copied();
        if first.placement.is_none()
            || args
                .iter()
                .any(|a| a.placement != first.placement || a.tensor.shape().first().copied() != extent)
        {
            return Err(Error::Placement {
                op,
                reason: "mapped arguments must share one placement and leading extent".into(),
            });
        }
        let extent = extent.unwrap_or(0);
        let mut body = Eager {
            clients: None,
            in_body: true,
        };
        let mut outputs: Vec<Vec<Tensor>> = Vec::new();
        for i in 0..extent {
            let slice = args
                .iter()
                .map(|a| Ok(EagerValue::local(a.tensor.index_leading(i)?)))
                .collect::<Result<Vec<_>>>()?;
            let outs = f(&mut body, &slice)?;
            if outs.is_empty() || (i > 0 && outs.len() != outputs.len()) {
                return Err(Error::InvalidArgument {
                    op: "map_clients",
                    reason: "the mapped function returned no values".into(),
                });
            }
            if i == 0 {
                outputs = vec![Vec::with_capacity(extent); outs.len()];
            }
            for (acc, v) in outputs.iter_mut().zip(outs) {
                acc.push(v.tensor);
            }
        }
        outputs
            .iter()
            .map(|parts| {
                Ok(EagerValue {
                    tensor: Tensor::stack(parts)?,
                    placement: first.placement,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::{client_slice, place_clients, place_server};

    fn n(k: usize) -> ClientCount {
        ClientCount::new(k).unwrap()
    }

    #[test]
    fn broadcast_tiles_server_value() {
        let x = place_server(&Tensor::vector(&[1., 2.]));
        let y = federated_broadcast(&x, n(3)).unwrap();
        assert_eq!(y.placement(), Placement::Clients);
        assert_eq!(y.tensor().to_vec(), vec![1., 2., 1., 2., 1., 2.]);
        for i in 0..3 {
            assert_eq!(client_slice(&y, i).unwrap(), Tensor::vector(&[1., 2.]));
        }
        let one = federated_broadcast(&x, n(1)).unwrap();
        assert_eq!(one.tensor(), x.tensor());
        assert!(federated_broadcast(&y, n(3)).is_err());
    }

    #[test]
    fn sum_and_mean() {
        let c = place_clients(
            &[Tensor::vector(&[1.]), Tensor::vector(&[2.]), Tensor::vector(&[3.])],
            n(3),
        )
        .unwrap();
        let s = federated_sum(&c).unwrap();
        assert_eq!((s.placement(), s.tensor().to_vec()), (Placement::Server, vec![6.]));
        let c2 = place_clients(&[Tensor::vector(&[2.]), Tensor::vector(&[4.])], n(2)).unwrap();
        assert_eq!(federated_mean(&c2).unwrap().tensor().to_vec(), vec![3.]);
        assert!(federated_sum(&s).is_err());
        assert!(federated_mean(&s).is_err());
        let single = place_clients(&[Tensor::vector(&[7., 8.])], n(1)).unwrap();
        assert_eq!(federated_mean(&single).unwrap(), federated_sum(&single).unwrap());
    }

    #[test]
    fn map_doubles_each_client() {
        let c = place_clients(
            &[Tensor::vector(&[1.]), Tensor::vector(&[2.]), Tensor::vector(&[3.])],
            n(3),
        )
        .unwrap();
        let out = federated_map(
            |xs| Ok(vec![crate::tensor::ew_unary(crate::tensor::UnaryOp::Scale(2.0), &xs[0])?]),
            &PlacedStructure::Leaf(c),
        )
        .unwrap();
        let leaves = out.leaves();
        assert_eq!(leaves[0].1.tensor().to_vec(), vec![2., 4., 6.]);
        assert_eq!(leaves[0].1.placement(), Placement::Clients);
    }

    #[test]
    fn map_rejects_mixed_structure() {
        let c = place_clients(&[Tensor::vector(&[1.]), Tensor::vector(&[2.])], n(2)).unwrap();
        let s = place_server(&Tensor::vector(&[1.]));
        let xs = PlacedStructure::Tuple(vec![PlacedStructure::Leaf(c), PlacedStructure::Leaf(s)]);
        assert!(matches!(
            federated_map(|xs| Ok(xs.to_vec()), &xs),
            Err(Error::MixedStructure { .. })
        ));
    }

    #[test]
    fn eager_backend_checks_placements() {
        let mut e = Eager::new(n(2));
        let x = e.input(Tensor::vector(&[5.0]), Some(Placement::Server)).unwrap();
        let err = e.federated_sum(&x).unwrap_err();
        assert!(matches!(err, Error::Placement { ref op, .. } if op == "sum_from_clients"));
        let y = e.federated_broadcast(&x).unwrap();
        let z = e
            .federated_map(&[y], &|b, v| Ok(vec![b.scale(2.0, &v[0])?]))
            .unwrap();
        let s = e.federated_sum(&z[0]).unwrap();
        assert_eq!(s.tensor.to_vec(), vec![20.0]);
        assert_eq!(s.placement, Some(Placement::Server));
    }
}
