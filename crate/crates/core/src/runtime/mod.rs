//! Sharded execution of federated graphs.
//!
//! [`partition`] splits a graph at its communication equations into an
//! [`ExecutionPlan`]: server steps, per-worker local steps over contiguous
//! client blocks, and explicit broadcast / reduce steps between them.
//! [`Executor`] runs a plan with one worker per block.

mod bench;
mod exec;

pub use bench::{bench_round, BenchReport};
pub use exec::{execute_parallel, Executor, Schedule, StepTimings};

use std::ops::Range;

use crate::error::{Error, Result};
use crate::ir::{Graph, Primitive, Var};
use crate::placement::{ClientCount, Placement};
use crate::tensor::ReduceOp;

/// Assignment of the clients axis to workers: one contiguous, non-empty
/// block per worker, in client order.
///
/// Blocks follow the split points of the pairwise reduction tree, so a
/// worker's partial sum is an exact subtree of the full reduction and
/// combining partials in worker order reproduces it bit for bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardingSpec {
    clients: ClientCount,
    blocks: Vec<Range<usize>>,
}

fn split_blocks(lo: usize, hi: usize, workers: usize, out: &mut Vec<Range<usize>>) {
    if workers == 1 {
        out.push(lo..hi);
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let left = workers / 2;
    split_blocks(lo, mid, left, out);
    split_blocks(mid, hi, workers - left, out);
}

impl ShardingSpec {
    pub fn new(workers: usize, clients: ClientCount) -> Result<Self> {
        if workers == 0 || workers > clients.get() {
            return Err(Error::Sharding(format!(
                "{workers} workers cannot each own a non-empty block of {clients} clients"
            )));
        }
        let mut blocks = Vec::with_capacity(workers);
        split_blocks(0, clients.get(), workers, &mut blocks);
        Ok(ShardingSpec { clients, blocks })
    }

    /// Explicit blocks; they must be contiguous, non-empty and cover all
    /// clients in order.
    pub fn from_blocks(clients: ClientCount, blocks: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.end <= b.start {
                return Err(Error::Sharding(format!("block {b:?} breaks the partition")));
            }
            next = b.end;
        }
        if next != clients.get() || blocks.is_empty() {
            return Err(Error::Sharding(format!(
                "blocks cover {next} of {clients} clients"
            )));
        }
        Ok(ShardingSpec { clients, blocks })
    }

    pub fn worker_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn clients(&self) -> ClientCount {
        self.clients
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }
}

/// Where a value lives during sharded execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Server,
    /// Split across workers along the clients axis.
    Clients,
    /// Unplaced and independent of placed values; every executor holds a
    /// copy.
    Replicated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Equations (by index) run on the server.
    Server(Vec<usize>),
    /// Equations (by index) every worker runs on its own block.
    Local(Vec<usize>),
    /// Server value `src` sent to every worker as `dst`.
    Broadcast { src: Var, dst: Var },
    /// Worker partials of `src` combined at the server into `dst`.
    Reduce { src: Var, dst: Var, op: ReduceOp },
}

impl Step {
    pub fn kind(&self) -> &'static str {
        match self {
            Step::Server(_) => "server",
            Step::Local(_) => "local",
            Step::Broadcast { .. } => "broadcast",
            Step::Reduce { .. } => "reduce",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    graph: Graph,
    spec: ShardingSpec,
    locations: Vec<Location>,
    prelude: Vec<usize>,
    steps: Vec<Step>,
}

impl ExecutionPlan {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn spec(&self) -> &ShardingSpec {
        &self.spec
    }

    pub fn worker_count(&self) -> usize {
        self.spec.worker_count()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Equations evaluated once, before any step, and shared by all
    /// executors.
    pub fn prelude(&self) -> &[usize] {
        &self.prelude
    }

    pub fn location(&self, v: Var) -> Location {
        self.locations[v.index()]
    }

    /// Location annotation of every equation, in program order.
    pub fn annotations(&self) -> Vec<Location> {
        self.graph
            .equations()
            .iter()
            .map(|e| match e.primitive {
                Primitive::BroadcastClients => Location::Clients,
                _ => e
                    .outputs
                    .first()
                    .map(|&o| self.locations[o.index()])
                    .unwrap_or(Location::Replicated),
            })
            .collect()
    }

    pub fn communication_steps(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Broadcast { .. } | Step::Reduce { .. }))
            .count()
    }
}

fn location_of(p: Option<Placement>) -> Location {
    match p {
        Some(Placement::Server) => Location::Server,
        Some(Placement::Clients) => Location::Clients,
        None => Location::Replicated,
    }
}

/// Split `g` into a plan for `spec`. A graph without clients-placed values
/// runs entirely on the server with a single worker.
pub fn partition(g: &Graph, spec: &ShardingSpec) -> Result<ExecutionPlan> {
    let locations: Vec<Location> = g.vars().iter().map(|av| location_of(av.placement)).collect();
    let has_clients = locations.contains(&Location::Clients);
    let spec = if has_clients {
        match g.clients() {
            Some(n) if n == spec.clients() => spec.clone(),
            other => {
                return Err(Error::Sharding(format!(
                    "spec shards {} clients, graph has {}",
                    spec.clients(),
                    other.map(|c| c.to_string()).unwrap_or_else(|| "none".into())
                )))
            }
        }
    } else {
        let n = ClientCount::new(1)?;
        ShardingSpec::new(1, n)?
    };
    let mut prelude = Vec::new();
    let mut steps: Vec<Step> = Vec::new();
    for (i, eq) in g.equations().iter().enumerate() {
        let out_loc = eq
            .outputs
            .first()
            .map(|&o| locations[o.index()])
            .unwrap_or(Location::Replicated);
        let step = match &eq.primitive {
            Primitive::BroadcastClients => Step::Broadcast {
                src: eq.inputs[0],
                dst: eq.outputs[0],
            },
            Primitive::SumFromClients => Step::Reduce {
                src: eq.inputs[0],
                dst: eq.outputs[0],
                op: ReduceOp::Sum,
            },
            Primitive::MeanFromClients => Step::Reduce {
                src: eq.inputs[0],
                dst: eq.outputs[0],
                op: ReduceOp::Mean,
            },
            _ => match out_loc {
                Location::Replicated => {
                    prelude.push(i);
                    continue;
                }
                Location::Server => {
                    if let Some(Step::Server(eqs)) = steps.last_mut() {
                        eqs.push(i);
                        continue;
                    }
                    Step::Server(vec![i])
                }
                Location::Clients => {
                    if let Some(Step::Local(eqs)) = steps.last_mut() {
                        eqs.push(i);
                        continue;
                    }
                    Step::Local(vec![i])
                }
            },
        };
        steps.push(step);
    }
    Ok(ExecutionPlan {
        graph: g.clone(),
        spec,
        locations,
        prelude,
        steps,
    })
}
