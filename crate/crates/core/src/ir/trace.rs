use crate::error::{Error, Result};
use crate::placement::ClientCount;
use crate::program::{FedBuilder, MapBody};

use super::{inline_map, AbstractValue, Graph, GraphBuilder, Primitive, Var};

/// How `federated_map` is staged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapMode {
    /// Trace the per-client function once and inline it as batched ops over
    /// the leading axis.
    #[default]
    Inline,
    /// Keep a `map_clients` equation with the per-client graph as its body.
    Nested,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TraceOptions {
    pub map_mode: MapMode,
}

/// Staging backend: every operation appends an equation.
#[derive(Debug)]
pub struct Tracer {
    builder: GraphBuilder,
    options: TraceOptions,
    in_body: bool,
}

impl Tracer {
    pub fn builder(&self) -> &GraphBuilder {
        &self.builder
    }
}

impl FedBuilder for Tracer {
    type Value = Var;

    fn value_type(&self, v: &Var) -> AbstractValue {
        self.builder.value(*v).clone()
    }

    fn bind(&mut self, primitive: Primitive, args: &[Var]) -> Result<Var> {
        let id = primitive.id();
        if id.is_federated() && self.in_body {
            return Err(Error::Placement {
                op: id.name().to_string(),
                reason: "federated operations cannot appear inside a per-client function".into(),
            });
        }
        if let Primitive::MapClients { .. } = primitive {
            return Err(Error::InvalidGraph(
                "bind map_clients through federated_map".into(),
            ));
        }
        self.builder.push1(primitive, args)
    }

    fn federated_map(&mut self, args: &[Var], f: &MapBody<'_, Self>) -> Result<Vec<Var>> {
        let op = "map_clients".to_string();
        if self.in_body {
            return Err(Error::Placement {
                op,
                reason: "nested federated_map".into(),
            });
        }
        let types: Vec<AbstractValue> = args.iter().map(|v| self.value_type(v)).collect();
        let Some(first) = types.first() else {
            return Err(Error::InvalidArgument {
                op: "map_clients",
                reason: "federated_map needs at least one argument".into(),
            });
        };
        if first.placement.is_none()
            || types
                .iter()
                .any(|t| t.placement != first.placement || t.shape[0] != first.shape[0])
        {
            return Err(Error::Placement {
                op,
                reason: "mapped arguments must share one placement and leading extent".into(),
            });
        }
        let mut body = Tracer {
            builder: GraphBuilder::new(None),
            options: self.options,
            in_body: true,
        };
        let inputs: Vec<Var> = types.iter().map(|t| body.builder.input(t.payload())).collect();
        let outputs = f(&mut body, &inputs)?;
        if outputs.is_empty() {
            return Err(Error::InvalidArgument {
                op: "map_clients",
                reason: "the mapped function returned no values".into(),
            });
        }
        let body = body.builder.finish(outputs);
        match self.options.map_mode {
            MapMode::Inline => inline_map(&mut self.builder, &body, args),
            MapMode::Nested => self.builder.map_clients(body, args),
        }
    }
}

/// Stage `program` into a graph with the given input types.
pub fn trace<F>(input_specs: &[AbstractValue], clients: ClientCount, program: F) -> Result<Graph>
where
    F: FnOnce(&mut Tracer, &[Var]) -> Result<Vec<Var>>,
{
    trace_with(TraceOptions::default(), input_specs, clients, program)
}

pub fn trace_with<F>(
    options: TraceOptions,
    input_specs: &[AbstractValue],
    clients: ClientCount,
    program: F,
) -> Result<Graph>
where
    F: FnOnce(&mut Tracer, &[Var]) -> Result<Vec<Var>>,
{
    for spec in input_specs {
        if let Some(p) = spec.placement {
            if spec.shape.first() != Some(&p.cardinality(clients)) {
                return Err(Error::Placement {
                    op: "trace".into(),
                    reason: format!("input spec {spec} does not match {clients} clients"),
                });
            }
        }
    }
    let mut tracer = Tracer {
        builder: GraphBuilder::new(Some(clients)),
        options,
        in_body: false,
    };
    let inputs: Vec<Var> = input_specs
        .iter()
        .map(|s| tracer.builder.input(s.clone()))
        .collect();
    let outputs = program(&mut tracer, &inputs)?;
    let graph = tracer.builder.finish(outputs);
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::PrimitiveId;
    use crate::tensor::DType;

    fn n(k: usize) -> ClientCount {
        ClientCount::new(k).unwrap()
    }

    #[test]
    fn identity_traces_to_empty_graph() {
        let spec = AbstractValue::server(&[2], DType::F64);
        let g = trace(&[spec], n(2), |_, xs| Ok(xs.to_vec())).unwrap();
        assert!(g.equations().is_empty());
        assert_eq!(g.outputs(), g.inputs());
    }

    #[test]
    fn summing_a_server_value_names_the_operation() {
        let spec = AbstractValue::server(&[2], DType::F64);
        let err = trace(&[spec], n(2), |t, xs| Ok(vec![t.federated_sum(&xs[0])?])).unwrap_err();
        match err {
            Error::Placement { op, .. } => assert_eq!(op, "sum_from_clients"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn communication_inside_body_is_rejected() {
        let spec = AbstractValue::clients(n(2), &[2], DType::F64);
        let err = trace(&[spec], n(2), |t, xs| {
            t.federated_map(&xs[..1], &|b, ys| Ok(vec![b.federated_sum(&ys[0])?]))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Placement { .. }));
    }

    #[test]
    fn nested_mode_keeps_map_equation() {
        let spec = AbstractValue::clients(n(3), &[2], DType::F64);
        let g = trace_with(
            TraceOptions { map_mode: MapMode::Nested },
            &[spec],
            n(3),
            |t, xs| t.federated_map(&xs[..1], &|b, ys| Ok(vec![b.scale(2.0, &ys[0])?])),
        )
        .unwrap();
        assert_eq!(g.equation_ids(), vec![PrimitiveId::MapClients]);
        assert_eq!(
            g.primitive_ids(),
            vec![PrimitiveId::MapClients, PrimitiveId::Scale]
        );
    }

    #[test]
    fn mismatched_input_spec_rejected() {
        let spec = AbstractValue::clients(n(2), &[2], DType::F64);
        assert!(trace(&[spec], n(3), |_, xs| Ok(xs.to_vec())).is_err());
    }
}
