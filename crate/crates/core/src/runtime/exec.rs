use std::ops::Range;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::ir::{eval_equation, Equation, Primitive, Var};
use crate::placement::Placement;
use crate::tensor::{ew_binary, pairwise_sum, reduce_axis, tile_axis, BinaryOp, ReduceOp, Tensor};

use super::{ExecutionPlan, Location, Step};

/// How the workers of a plan are run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// One pool thread per worker (falls back to `Sequential` when the crate
    /// is built without the `parallel` feature).
    Parallel,
    /// Workers run one after another on the calling thread.
    Sequential,
}

/// Wall time spent per step kind during one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTimings {
    pub prelude: Duration,
    pub server: Duration,
    pub local: Duration,
    pub broadcast: Duration,
    pub reduce: Duration,
}

impl StepTimings {
    pub fn entries(&self) -> [(&'static str, Duration); 5] {
        [
            ("prelude", self.prelude),
            ("server", self.server),
            ("local", self.local),
            ("broadcast", self.broadcast),
            ("reduce", self.reduce),
        ]
    }

    fn add(&mut self, kind: &str, d: Duration) {
        match kind {
            "server" => self.server += d,
            "local" => self.local += d,
            "broadcast" => self.broadcast += d,
            "reduce" => self.reduce += d,
            _ => self.prelude += d,
        }
    }
}

struct Worker {
    block: Range<usize>,
    env: Vec<Option<Tensor>>,
}

type Env = Vec<Option<Tensor>>;

fn lookup(env: &Env, shared: &Env, v: Var) -> Tensor {
    env[v.index()]
        .clone()
        .or_else(|| shared[v.index()].clone())
        .expect("plan evaluates definitions before uses")
}

fn run_eq(eq: &Equation, env: &mut Env, shared: &Env, plan: &ExecutionPlan, block: Option<&Range<usize>>) -> Result<()> {
    let ins: Vec<Tensor> = eq.inputs.iter().map(|&v| lookup(env, shared, v)).collect();
    let mut outs = eval_equation(&eq.primitive, &ins, plan.graph.clients())?;
    if let (
        Primitive::Constant {
            placement: Some(Placement::Clients),
            ..
        },
        Some(b),
    ) = (&eq.primitive, block)
    {
        outs[0] = outs[0].slice_leading(b.start, b.end)?;
    }
    for (&o, t) in eq.outputs.iter().zip(outs) {
        env[o.index()] = Some(t);
    }
    Ok(())
}

pub struct Executor {
    schedule: Schedule,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    /// Executor with `threads` pool threads for the parallel schedule.
    pub fn new(threads: usize, schedule: Schedule) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            let pool = match schedule {
                Schedule::Parallel => Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads.max(1))
                        .build()
                        .map_err(|e| Error::Sharding(format!("cannot start worker pool: {e}")))?,
                ),
                Schedule::Sequential => None,
            };
            Ok(Executor { schedule, pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            let _ = schedule;
            Ok(Executor {
                schedule: Schedule::Sequential,
            })
        }
    }

    pub fn sequential() -> Self {
        Executor {
            schedule: Schedule::Sequential,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// The schedule actually in effect.
    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    fn for_workers<T, F>(&self, workers: &mut [Worker], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut Worker) -> Result<T> + Sync,
    {
        #[cfg(feature = "parallel")]
        let results: Vec<Result<T>> = match &self.pool {
            Some(pool) => {
                use rayon::prelude::*;
                pool.install(|| workers.par_iter_mut().map(&f).collect())
            }
            None => workers.iter_mut().map(&f).collect(),
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<T>> = workers.iter_mut().map(&f).collect();
        results
            .into_iter()
            .enumerate()
            .map(|(worker, r)| {
                r.map_err(|e| Error::Worker {
                    worker,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    pub fn run(&self, plan: &ExecutionPlan, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        self.run_timed(plan, inputs).map(|(outs, _)| outs)
    }

    pub fn run_timed(&self, plan: &ExecutionPlan, inputs: &[Tensor]) -> Result<(Vec<Tensor>, StepTimings)> {
        let g = &plan.graph;
        if inputs.len() != g.inputs().len() {
            return Err(Error::InvalidArgument {
                op: "execute",
                reason: format!("expected {} inputs, got {}", g.inputs().len(), inputs.len()),
            });
        }
        let nvars = g.vars().len();
        let mut timings = StepTimings::default();
        let mut shared: Env = vec![None; nvars];
        let mut server: Env = vec![None; nvars];
        let mut workers: Vec<Worker> = plan
            .spec
            .blocks()
            .iter()
            .map(|b| Worker {
                block: b.clone(),
                env: vec![None; nvars],
            })
            .collect();

        let start = Instant::now();
        for (&v, t) in g.inputs().iter().zip(inputs) {
            let av = g.value(v);
            if !av.matches(t) {
                return Err(Error::InvalidArgument {
                    op: "execute",
                    reason: format!("input {} expects {av}, got {}{:?}", v.0, t.dtype(), t.shape()),
                });
            }
            match plan.location(v) {
                Location::Replicated => shared[v.index()] = Some(t.clone()),
                Location::Server => server[v.index()] = Some(t.clone()),
                Location::Clients => {
                    for w in &mut workers {
                        w.env[v.index()] = Some(t.slice_leading(w.block.start, w.block.end)?);
                    }
                }
            }
        }
        let empty: Env = vec![None; nvars];
        for &i in &plan.prelude {
            let mut local = std::mem::take(&mut shared);
            run_eq(&g.equations()[i], &mut local, &empty, plan, None)?;
            shared = local;
        }
        timings.add("prelude", start.elapsed());

        for step in &plan.steps {
            let t0 = Instant::now();
            match step {
                Step::Server(eqs) => {
                    for &i in eqs {
                        run_eq(&g.equations()[i], &mut server, &shared, plan, None)?;
                    }
                }
                Step::Local(eqs) => {
                    self.for_workers(&mut workers, |w| {
                        for &i in eqs {
                            run_eq(&g.equations()[i], &mut w.env, &shared, plan, Some(&w.block))?;
                        }
                        Ok(())
                    })?;
                }
                Step::Broadcast { src, dst } => {
                    let value = lookup(&server, &shared, *src);
                    self.for_workers(&mut workers, |w| {
                        w.env[dst.index()] = Some(tile_axis(&value, w.block.len(), 0, false)?);
                        Ok(())
                    })?;
                }
                Step::Reduce { src, dst, op } => {
                    let partials = self.for_workers(&mut workers, |w| {
                        reduce_axis(ReduceOp::Sum, &lookup(&w.env, &shared, *src), 0, true)
                    })?;
                    let mut total = pairwise_sum(&partials)?;
                    if *op == ReduceOp::Mean {
                        let n = Tensor::scalar(plan.spec.clients().get() as f64).cast(total.dtype());
                        total = ew_binary(BinaryOp::Div, &total, &n)?;
                    }
                    server[dst.index()] = Some(total);
                }
            }
            timings.add(step.kind(), t0.elapsed());
        }

        let mut outs = Vec::with_capacity(g.outputs().len());
        for &v in g.outputs() {
            outs.push(match plan.location(v) {
                Location::Replicated => lookup(&shared, &empty, v),
                Location::Server => lookup(&server, &shared, v),
                Location::Clients => {
                    let parts: Vec<Tensor> = workers.iter().map(|w| lookup(&w.env, &shared, v)).collect();
                    Tensor::concat_leading(&parts)?
                }
            });
        }
        Ok((outs, timings))
    }
}

/// Run `plan` with one pool thread per worker.
pub fn execute_parallel(plan: &ExecutionPlan, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    Executor::new(plan.worker_count(), Schedule::Parallel)?.run(plan, inputs)
}
