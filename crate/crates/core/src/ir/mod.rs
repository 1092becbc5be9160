//! Traced dataflow IR.
//!
//! A [`Graph`] is a closed SSA program: typed inputs, an ordered list of
//! [`Equation`]s and a list of outputs. Federated communication
//! (`broadcast_clients`, `sum_from_clients`, `mean_from_clients`) and
//! per-client work (`map_clients`) are first-class equations, so transforms
//! and serializers can see exactly where data crosses placements.

mod batch;
mod builder;
mod infer;
mod interp;
mod lower;
mod trace;

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::placement::{ClientCount, Placement};
use crate::tensor::{DType, ReduceOp, Tensor};

pub use batch::inline_map;
pub use builder::GraphBuilder;
pub use infer::infer;
pub(crate) use interp::clients_mean;
pub use interp::{eval_equation, eval_graph};
pub use lower::lower;
pub use trace::{trace, trace_with, MapMode, TraceOptions, Tracer};

/// Variable id, an index into the owning graph's value table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Shape, dtype and (optionally) placement of a traced value. A placed value
/// carries its placement axis as the leading extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractValue {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub placement: Option<Placement>,
}

impl AbstractValue {
    pub fn local(shape: &[usize], dtype: DType) -> Self {
        AbstractValue {
            shape: shape.to_vec(),
            dtype,
            placement: None,
        }
    }

    /// Server-placed value whose payload has shape `payload`.
    pub fn server(payload: &[usize], dtype: DType) -> Self {
        let mut shape = vec![1];
        shape.extend_from_slice(payload);
        AbstractValue {
            shape,
            dtype,
            placement: Some(Placement::Server),
        }
    }

    /// Clients-placed value; every client holds a `payload`-shaped tensor.
    pub fn clients(clients: ClientCount, payload: &[usize], dtype: DType) -> Self {
        let mut shape = vec![clients.get()];
        shape.extend_from_slice(payload);
        AbstractValue {
            shape,
            dtype,
            placement: Some(Placement::Clients),
        }
    }

    pub fn of(t: &Tensor) -> Self {
        Self::local(t.shape(), t.dtype())
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// The per-client (or per-server) view: placement axis dropped.
    pub fn payload(&self) -> AbstractValue {
        AbstractValue {
            shape: self.shape.get(1..).unwrap_or_default().to_vec(),
            dtype: self.dtype,
            placement: None,
        }
    }

    pub fn unplaced(&self) -> AbstractValue {
        AbstractValue {
            placement: None,
            ..self.clone()
        }
    }

    pub fn matches(&self, t: &Tensor) -> bool {
        self.shape == t.shape() && self.dtype == t.dtype()
    }
}

impl fmt::Display for AbstractValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        write!(f, "{}[{}]", self.dtype, dims.join(","))?;
        if let Some(p) = self.placement {
            write!(f, "@{}", p)?;
        }
        Ok(())
    }
}

/// Names of the closed primitive set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveId {
    BroadcastClients,
    MapClients,
    SumFromClients,
    MeanFromClients,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    IntegerPow,
    Scale,
    BatchedDot,
    BatchedOuter,
    ReduceLeading,
    TileLeading,
    Constant,
}

impl PrimitiveId {
    pub const ALL: [PrimitiveId; 16] = [
        PrimitiveId::BroadcastClients,
        PrimitiveId::MapClients,
        PrimitiveId::SumFromClients,
        PrimitiveId::MeanFromClients,
        PrimitiveId::Add,
        PrimitiveId::Sub,
        PrimitiveId::Mul,
        PrimitiveId::Div,
        PrimitiveId::Neg,
        PrimitiveId::IntegerPow,
        PrimitiveId::Scale,
        PrimitiveId::BatchedDot,
        PrimitiveId::BatchedOuter,
        PrimitiveId::ReduceLeading,
        PrimitiveId::TileLeading,
        PrimitiveId::Constant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveId::BroadcastClients => "broadcast_clients",
            PrimitiveId::MapClients => "map_clients",
            PrimitiveId::SumFromClients => "sum_from_clients",
            PrimitiveId::MeanFromClients => "mean_from_clients",
            PrimitiveId::Add => "add",
            PrimitiveId::Sub => "sub",
            PrimitiveId::Mul => "mul",
            PrimitiveId::Div => "div",
            PrimitiveId::Neg => "neg",
            PrimitiveId::IntegerPow => "integer_pow",
            PrimitiveId::Scale => "scale",
            PrimitiveId::BatchedDot => "batched_dot",
            PrimitiveId::BatchedOuter => "batched_outer",
            PrimitiveId::ReduceLeading => "reduce_leading",
            PrimitiveId::TileLeading => "tile_leading",
            PrimitiveId::Constant => "constant",
        }
    }

    /// Look up a registered primitive by name.
    pub fn from_name(name: &str) -> Result<Self> {
        PrimitiveId::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::UnknownPrimitive(name.to_string()))
    }

    /// True for the primitives that move data between placements.
    pub fn is_communication(self) -> bool {
        matches!(
            self,
            PrimitiveId::BroadcastClients | PrimitiveId::SumFromClients | PrimitiveId::MeanFromClients
        )
    }

    /// True for every primitive with federated semantics, including
    /// `map_clients`.
    pub fn is_federated(self) -> bool {
        self.is_communication() || self == PrimitiveId::MapClients
    }
}

impl fmt::Display for PrimitiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A primitive together with its static parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    BroadcastClients,
    /// Apply `body` to every slice along the leading axis of the arguments.
    MapClients { body: Box<Graph> },
    SumFromClients,
    MeanFromClients,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    IntegerPow { exponent: u32 },
    Scale { factor: f64 },
    BatchedDot,
    BatchedOuter,
    /// Reduce `axis`. The default form (axis 0, dropped) is the plain
    /// leading-axis reduction; other axes appear when per-client work is
    /// batched over the clients axis.
    ReduceLeading { op: ReduceOp, axis: usize, keepdims: bool },
    /// Tile `axis` to `count`. `insert` adds a new axis instead of growing an
    /// existing unit axis.
    TileLeading { count: usize, axis: usize, insert: bool },
    Constant { value: Tensor, placement: Option<Placement> },
}

impl Primitive {
    pub fn id(&self) -> PrimitiveId {
        match self {
            Primitive::BroadcastClients => PrimitiveId::BroadcastClients,
            Primitive::MapClients { .. } => PrimitiveId::MapClients,
            Primitive::SumFromClients => PrimitiveId::SumFromClients,
            Primitive::MeanFromClients => PrimitiveId::MeanFromClients,
            Primitive::Add => PrimitiveId::Add,
            Primitive::Sub => PrimitiveId::Sub,
            Primitive::Mul => PrimitiveId::Mul,
            Primitive::Div => PrimitiveId::Div,
            Primitive::Neg => PrimitiveId::Neg,
            Primitive::IntegerPow { .. } => PrimitiveId::IntegerPow,
            Primitive::Scale { .. } => PrimitiveId::Scale,
            Primitive::BatchedDot => PrimitiveId::BatchedDot,
            Primitive::BatchedOuter => PrimitiveId::BatchedOuter,
            Primitive::ReduceLeading { .. } => PrimitiveId::ReduceLeading,
            Primitive::TileLeading { .. } => PrimitiveId::TileLeading,
            Primitive::Constant { .. } => PrimitiveId::Constant,
        }
    }

    pub fn reduce_sum_leading() -> Self {
        Primitive::ReduceLeading {
            op: ReduceOp::Sum,
            axis: 0,
            keepdims: false,
        }
    }

    pub fn constant(value: Tensor) -> Self {
        Primitive::Constant {
            value,
            placement: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub primitive: Primitive,
    pub inputs: Vec<Var>,
    pub outputs: Vec<Var>,
}

/// A traced program. Construct through [`GraphBuilder`] or [`trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub(crate) clients: Option<ClientCount>,
    pub(crate) vars: Vec<AbstractValue>,
    pub(crate) inputs: Vec<Var>,
    pub(crate) equations: Vec<Equation>,
    pub(crate) outputs: Vec<Var>,
}

impl Graph {
    /// Assemble a graph from raw parts and validate it.
    pub fn from_parts(
        clients: Option<ClientCount>,
        vars: Vec<AbstractValue>,
        inputs: Vec<Var>,
        equations: Vec<Equation>,
        outputs: Vec<Var>,
    ) -> Result<Self> {
        let g = Graph {
            clients,
            vars,
            inputs,
            equations,
            outputs,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn clients(&self) -> Option<ClientCount> {
        self.clients
    }

    pub fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Var] {
        &self.outputs
    }

    pub fn equations(&self) -> &[Equation] {
        &self.equations
    }

    pub fn vars(&self) -> &[AbstractValue] {
        &self.vars
    }

    pub fn value(&self, v: Var) -> &AbstractValue {
        &self.vars[v.index()]
    }

    pub fn input_values(&self) -> Vec<AbstractValue> {
        self.inputs.iter().map(|&v| self.value(v).clone()).collect()
    }

    pub fn output_values(&self) -> Vec<AbstractValue> {
        self.outputs.iter().map(|&v| self.value(v).clone()).collect()
    }

    /// Primitive ids in program order, descending into `map_clients` bodies
    /// right after the map equation itself.
    pub fn primitive_ids(&self) -> Vec<PrimitiveId> {
        let mut out = Vec::new();
        self.collect_ids(&mut out);
        out
    }

    fn collect_ids(&self, out: &mut Vec<PrimitiveId>) {
        for eq in &self.equations {
            out.push(eq.primitive.id());
            if let Primitive::MapClients { body } = &eq.primitive {
                body.collect_ids(out);
            }
        }
    }

    /// Top-level equation sequence (no descent into bodies).
    pub fn equation_ids(&self) -> Vec<PrimitiveId> {
        self.equations.iter().map(|e| e.primitive.id()).collect()
    }

    pub fn has_federated_ops(&self) -> bool {
        self.equations.iter().any(|e| e.primitive.id().is_federated())
    }

    /// Check SSA form, definition before use, and that every recorded value
    /// type agrees with the inference rules (placement signatures included).
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(false)
    }

    pub(crate) fn validate_inner(&self, in_body: bool) -> Result<()> {
        let mut defined = vec![false; self.vars.len()];
        let define = |v: Var, defined: &mut Vec<bool>| -> Result<()> {
            match defined.get_mut(v.index()) {
                None => Err(Error::InvalidGraph(format!("variable {} has no type entry", v.0))),
                Some(true) => Err(Error::InvalidGraph(format!("variable {} defined twice", v.0))),
                Some(slot) => {
                    *slot = true;
                    Ok(())
                }
            }
        };
        for &v in &self.inputs {
            define(v, &mut defined)?;
        }
        for (i, eq) in self.equations.iter().enumerate() {
            for &v in &eq.inputs {
                if !defined.get(v.index()).copied().unwrap_or(false) {
                    return Err(Error::InvalidGraph(format!(
                        "equation {i} ({}) uses variable {} before its definition",
                        eq.primitive.id(),
                        v.0
                    )));
                }
            }
            if in_body && eq.primitive.id().is_federated() {
                return Err(Error::InvalidGraph(format!(
                    "{} inside a map_clients body",
                    eq.primitive.id()
                )));
            }
            if let Primitive::MapClients { body } = &eq.primitive {
                body.validate_inner(true)?;
            }
            let ins: Vec<&AbstractValue> = eq.inputs.iter().map(|&v| self.value(v)).collect();
            let inferred = infer(&eq.primitive, &ins, self.clients)?;
            if inferred.len() != eq.outputs.len() {
                return Err(Error::InvalidGraph(format!(
                    "equation {i} ({}) declares {} outputs, expected {}",
                    eq.primitive.id(),
                    eq.outputs.len(),
                    inferred.len()
                )));
            }
            for (&v, expected) in eq.outputs.iter().zip(&inferred) {
                define(v, &mut defined)?;
                if self.value(v) != expected {
                    return Err(Error::InvalidGraph(format!(
                        "equation {i} ({}) output {} recorded as {}, inferred {}",
                        eq.primitive.id(),
                        v.0,
                        self.value(v),
                        expected
                    )));
                }
            }
        }
        if let Some(v) = self.outputs.iter().find(|v| !defined.get(v.index()).copied().unwrap_or(false)) {
            return Err(Error::InvalidGraph(format!("output {} is never defined", v.0)));
        }
        if let Some(i) = defined.iter().position(|d| !d) {
            return Err(Error::InvalidGraph(format!("variable {i} is never defined")));
        }
        if in_body {
            if let Some(&v) = self.inputs.iter().find(|&&v| self.value(v).placement.is_some()) {
                return Err(Error::InvalidGraph(format!(
                    "map_clients body input {} carries a placement",
                    v.0
                )));
            }
        }
        Ok(())
    }

    /// Remove equations whose outputs are never used. Communication
    /// equations survive unless `drop_communication` is set.
    pub fn eliminate_dead_code(&self, drop_communication: bool) -> Graph {
        let mut live: HashSet<Var> = self.outputs.iter().copied().collect();
        let mut keep = vec![false; self.equations.len()];
        for (i, eq) in self.equations.iter().enumerate().rev() {
            let used = eq.outputs.iter().any(|v| live.contains(v));
            let pinned = !drop_communication && eq.primitive.id().is_communication();
            if used || pinned {
                keep[i] = true;
                live.extend(eq.inputs.iter().copied());
            }
        }
        let mut b = GraphBuilder::new(self.clients);
        let mut map = vec![None; self.vars.len()];
        for &v in &self.inputs {
            map[v.index()] = Some(b.input(self.value(v).clone()));
        }
        for (eq, _) in self.equations.iter().zip(&keep).filter(|(_, &k)| k) {
            let ins: Vec<Var> = eq.inputs.iter().map(|v| map[v.index()].unwrap()).collect();
            let outs = b
                .push(eq.primitive.clone(), &ins)
                .expect("re-emitting a valid equation cannot fail");
            for (&old, new) in eq.outputs.iter().zip(outs) {
                map[old.index()] = Some(new);
            }
        }
        let outs = self.outputs.iter().map(|v| map[v.index()].unwrap()).collect();
        b.finish(outs)
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::export::serialize_text(self))
    }
}
