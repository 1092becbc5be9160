//! Backend-generic federated programs.
//!
//! A program is written once against [`FedBuilder`] and then either run
//! eagerly ([`crate::fedprims::Eager`]) or staged into a graph
//! ([`crate::ir::Tracer`]).

use crate::error::Result;
use crate::ir::{AbstractValue, Primitive};
use crate::tensor::{DType, ReduceOp, Tensor};

/// Per-client function handed to [`FedBuilder::federated_map`]. It receives
/// the unplaced slice of every mapped argument.
pub type MapBody<'a, B> =
    dyn Fn(&mut B, &[<B as FedBuilder>::Value]) -> Result<Vec<<B as FedBuilder>::Value>> + 'a;

pub trait FedBuilder: Sized {
    type Value: Clone;

    /// Type of a value held by this builder.
    fn value_type(&self, v: &Self::Value) -> AbstractValue;

    /// Apply a single-output primitive (anything but `map_clients`).
    fn bind(&mut self, primitive: Primitive, args: &[Self::Value]) -> Result<Self::Value>;

    /// Apply `f` to every client's slice of `args`. All arguments must share
    /// one placement; the results keep it.
    fn federated_map(
        &mut self,
        args: &[Self::Value],
        f: &MapBody<'_, Self>,
    ) -> Result<Vec<Self::Value>>;

    fn constant(&mut self, value: Tensor) -> Result<Self::Value> {
        self.bind(Primitive::constant(value), &[])
    }

    /// Rank-0 constant with the dtype of `like`.
    fn scalar_like(&mut self, value: f64, like: &Self::Value) -> Result<Self::Value> {
        let dtype = self.value_type(like).dtype;
        self.constant(Tensor::scalar(value).cast(dtype))
    }

    fn dtype(&self, v: &Self::Value) -> DType {
        self.value_type(v).dtype
    }

    fn shape(&self, v: &Self::Value) -> Vec<usize> {
        self.value_type(v).shape
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::Add, &[a.clone(), b.clone()])
    }

    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::Sub, &[a.clone(), b.clone()])
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::Mul, &[a.clone(), b.clone()])
    }

    fn div(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::Div, &[a.clone(), b.clone()])
    }

    fn neg(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::Neg, std::slice::from_ref(a))
    }

    fn scale(&mut self, factor: f64, a: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::Scale { factor }, std::slice::from_ref(a))
    }

    fn integer_pow(&mut self, exponent: u32, a: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::IntegerPow { exponent }, std::slice::from_ref(a))
    }

    fn batched_dot(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::BatchedDot, &[a.clone(), b.clone()])
    }

    fn batched_outer(&mut self, m: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::BatchedOuter, &[m.clone(), b.clone()])
    }

    fn reduce(
        &mut self,
        op: ReduceOp,
        a: &Self::Value,
        axis: usize,
        keepdims: bool,
    ) -> Result<Self::Value> {
        self.bind(Primitive::ReduceLeading { op, axis, keepdims }, std::slice::from_ref(a))
    }

    fn tile(&mut self, a: &Self::Value, count: usize, axis: usize, insert: bool) -> Result<Self::Value> {
        self.bind(Primitive::TileLeading { count, axis, insert }, std::slice::from_ref(a))
    }

    fn federated_broadcast(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::BroadcastClients, std::slice::from_ref(x))
    }

    fn federated_sum(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::SumFromClients, std::slice::from_ref(x))
    }

    fn federated_mean(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.bind(Primitive::MeanFromClients, std::slice::from_ref(x))
    }
}
