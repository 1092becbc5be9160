use crate::error::{Error, Result};
use crate::placement::{ClientCount, Placement};
use crate::tensor::{DType, ReduceOp, Tensor};

use super::{infer, AbstractValue, Equation, Graph, Primitive, Var};

/// Append-only construction of a [`Graph`]. Every pushed equation is type
/// checked, so a finished graph is valid by construction.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    clients: Option<ClientCount>,
    vars: Vec<AbstractValue>,
    inputs: Vec<Var>,
    equations: Vec<Equation>,
}

impl GraphBuilder {
    pub fn new(clients: Option<ClientCount>) -> Self {
        GraphBuilder {
            clients,
            vars: Vec::new(),
            inputs: Vec::new(),
            equations: Vec::new(),
        }
    }

    pub fn clients(&self) -> Option<ClientCount> {
        self.clients
    }

    fn fresh(&mut self, av: AbstractValue) -> Var {
        let v = Var(self.vars.len() as u32);
        self.vars.push(av);
        v
    }

    pub fn input(&mut self, av: AbstractValue) -> Var {
        let v = self.fresh(av);
        self.inputs.push(v);
        v
    }

    pub fn value(&self, v: Var) -> &AbstractValue {
        &self.vars[v.index()]
    }

    pub fn push(&mut self, primitive: Primitive, inputs: &[Var]) -> Result<Vec<Var>> {
        if let Some(v) = inputs.iter().find(|v| v.index() >= self.vars.len()) {
            return Err(Error::InvalidGraph(format!(
                "variable {} does not belong to this graph",
                v.0
            )));
        }
        let ins: Vec<&AbstractValue> = inputs.iter().map(|&v| &self.vars[v.index()]).collect();
        let outs = infer(&primitive, &ins, self.clients)?;
        let outputs: Vec<Var> = outs.into_iter().map(|av| self.fresh(av)).collect();
        self.equations.push(Equation {
            primitive,
            inputs: inputs.to_vec(),
            outputs: outputs.clone(),
        });
        Ok(outputs)
    }

    /// Push a single-output equation.
    pub fn push1(&mut self, primitive: Primitive, inputs: &[Var]) -> Result<Var> {
        let outs = self.push(primitive, inputs)?;
        match outs.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::InvalidGraph(format!(
                "expected one output, got {}",
                outs.len()
            ))),
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push1(Primitive::constant(value), &[])
    }

    pub fn placed_constant(&mut self, value: Tensor, placement: Option<Placement>) -> Result<Var> {
        self.push1(Primitive::Constant { value, placement }, &[])
    }

    pub fn scalar(&mut self, value: f64, dtype: DType) -> Result<Var> {
        self.constant(Tensor::scalar(value).cast(dtype))
    }

    /// Zeros with the type (including placement) of `av`.
    pub fn zeros_like(&mut self, av: &AbstractValue) -> Result<Var> {
        self.placed_constant(Tensor::zeros(&av.shape, av.dtype), av.placement)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push1(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push1(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push1(Primitive::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push1(Primitive::Div, &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push1(Primitive::Neg, &[a])
    }

    pub fn scale(&mut self, factor: f64, a: Var) -> Result<Var> {
        self.push1(Primitive::Scale { factor }, &[a])
    }

    pub fn integer_pow(&mut self, exponent: u32, a: Var) -> Result<Var> {
        self.push1(Primitive::IntegerPow { exponent }, &[a])
    }

    pub fn batched_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push1(Primitive::BatchedDot, &[a, b])
    }

    pub fn batched_outer(&mut self, m: Var, b: Var) -> Result<Var> {
        self.push1(Primitive::BatchedOuter, &[m, b])
    }

    pub fn reduce(&mut self, op: ReduceOp, a: Var, axis: usize, keepdims: bool) -> Result<Var> {
        self.push1(Primitive::ReduceLeading { op, axis, keepdims }, &[a])
    }

    pub fn tile(&mut self, a: Var, count: usize, axis: usize, insert: bool) -> Result<Var> {
        self.push1(Primitive::TileLeading { count, axis, insert }, &[a])
    }

    pub fn broadcast_clients(&mut self, a: Var) -> Result<Var> {
        self.push1(Primitive::BroadcastClients, &[a])
    }

    pub fn sum_from_clients(&mut self, a: Var) -> Result<Var> {
        self.push1(Primitive::SumFromClients, &[a])
    }

    pub fn mean_from_clients(&mut self, a: Var) -> Result<Var> {
        self.push1(Primitive::MeanFromClients, &[a])
    }

    pub fn map_clients(&mut self, body: Graph, args: &[Var]) -> Result<Vec<Var>> {
        body.validate_inner(true)?;
        self.push(Primitive::MapClients { body: Box::new(body) }, args)
    }

    pub fn finish(self, outputs: Vec<Var>) -> Graph {
        Graph {
            clients: self.clients,
            vars: self.vars,
            inputs: self.inputs,
            equations: self.equations,
            outputs,
        }
    }
}
