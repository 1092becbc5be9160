//! Reference federated programs: the linear-regression loss, FedSGD through
//! federated AD, FedAvg with local SGD, and a synthetic cohort generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ad::grad;
use crate::error::{Error, Result};
use crate::fedprims::Eager;
use crate::ir::{eval_graph, trace_with, AbstractValue, Graph, MapMode, TraceOptions};
use crate::placement::{ClientCount, Placement};
use crate::program::FedBuilder;
use crate::tensor::{ew_binary, ew_unary, BinaryOp, DType, ReduceOp, Tensor, UnaryOp};

/// `0.5 * (<x, y> - 1)^2` for a model vector `x` and a datum `y`.
pub fn loss_fn<B: FedBuilder>(b: &mut B, x: &B::Value, y: &B::Value) -> Result<B::Value> {
    let dot = b.batched_dot(x, y)?;
    let one = b.scalar_like(1.0, &dot)?;
    let r = b.sub(&dot, &one)?;
    let sq = b.integer_pow(2, &r)?;
    b.scale(0.5, &sq)
}

/// Loss of one client: [`loss_fn`] for a single datum `(d)`, or its mean
/// over a batch `(B, d)`.
pub fn client_loss<B: FedBuilder>(b: &mut B, x: &B::Value, data: &B::Value) -> Result<B::Value> {
    let shape = b.shape(data);
    match shape.len() {
        1 => loss_fn(b, x, data),
        2 => {
            let xs = b.tile(x, shape[0], 0, true)?;
            let per_example = loss_fn(b, &xs, data)?;
            b.reduce(ReduceOp::Mean, &per_example, 0, false)
        }
        _ => Err(Error::InvalidArgument {
            op: "client_loss",
            reason: format!("client data must be (d) or (batch, d), got {shape:?}"),
        }),
    }
}

/// Gradient of [`client_loss`] with respect to `x`, written out by hand.
pub fn client_grad<B: FedBuilder>(b: &mut B, x: &B::Value, data: &B::Value) -> Result<B::Value> {
    let shape = b.shape(data);
    match shape.len() {
        1 => {
            let dot = b.batched_dot(x, data)?;
            let one = b.scalar_like(1.0, &dot)?;
            let r = b.sub(&dot, &one)?;
            b.mul(&r, data)
        }
        2 => {
            let xs = b.tile(x, shape[0], 0, true)?;
            let dot = b.batched_dot(&xs, data)?;
            let one = b.scalar_like(1.0, &dot)?;
            let r = b.sub(&dot, &one)?;
            let per_example = b.batched_outer(&r, data)?;
            b.reduce(ReduceOp::Mean, &per_example, 0, false)
        }
        _ => Err(Error::InvalidArgument {
            op: "client_grad",
            reason: format!("client data must be (d) or (batch, d), got {shape:?}"),
        }),
    }
}

/// Mean client loss of a server model over a clients-placed cohort.
pub fn federated_loss<B: FedBuilder>(b: &mut B, model: &B::Value, cohort: &B::Value) -> Result<B::Value> {
    let m = b.federated_broadcast(model)?;
    let losses = b.federated_map(&[m, cohort.clone()], &|b, v| {
        Ok(vec![client_loss(b, &v[0], &v[1])?])
    })?;
    b.federated_mean(&losses[0])
}

/// Broadcast `x`, double it on every client, and sum the copies back.
pub fn broadcast_double_and_sum<B: FedBuilder>(b: &mut B, x: &B::Value) -> Result<B::Value> {
    let y = b.federated_broadcast(x)?;
    let z = b.federated_map(&[y], &|b, v| Ok(vec![b.scale(2.0, &v[0])?]))?;
    b.federated_sum(&z[0])
}

/// One FedAvg round: every client runs `local_steps` SGD steps from the
/// broadcast model, and the server moves to the mean client model.
///
/// Clients return the sum of their local gradients `acc`, so a client model
/// is `x - lr * acc` and the server step is `model - lr * mean(acc)`.
pub fn fed_avg<B: FedBuilder>(
    b: &mut B,
    model: &B::Value,
    cohort: &B::Value,
    client_lr: f64,
    local_steps: usize,
) -> Result<B::Value> {
    if local_steps == 0 {
        return Err(Error::InvalidArgument {
            op: "fed_avg",
            reason: "at least one local step is required".into(),
        });
    }
    let m = b.federated_broadcast(model)?;
    let sums = b.federated_map(&[m, cohort.clone()], &|b, v| {
        let (x, data) = (&v[0], &v[1]);
        let mut acc = client_grad(b, x, data)?;
        for _ in 1..local_steps {
            let step = b.scale(client_lr, &acc)?;
            let xk = b.sub(x, &step)?;
            let g = client_grad(b, &xk, data)?;
            acc = b.add(&acc, &g)?;
        }
        Ok(vec![acc])
    })?;
    let avg = b.federated_mean(&sums[0])?;
    let step = b.scale(client_lr, &avg)?;
    b.sub(model, &step)
}

/// Input types of the loss and FedAvg programs: a server model `(d)` and a
/// cohort of `(d)` or `(batch, d)` per client.
pub fn program_specs(clients: ClientCount, dim: usize, batch: Option<usize>) -> Vec<AbstractValue> {
    let payload = match batch {
        Some(bsz) => vec![bsz, dim],
        None => vec![dim],
    };
    vec![
        AbstractValue::server(&[dim], DType::F64),
        AbstractValue::clients(clients, &payload, DType::F64),
    ]
}

pub fn federated_loss_graph(
    clients: ClientCount,
    dim: usize,
    batch: Option<usize>,
    map_mode: MapMode,
) -> Result<Graph> {
    trace_with(
        TraceOptions { map_mode },
        &program_specs(clients, dim, batch),
        clients,
        |t, xs| Ok(vec![federated_loss(t, &xs[0], &xs[1])?]),
    )
}

pub fn broadcast_double_and_sum_graph(clients: ClientCount, map_mode: MapMode) -> Result<Graph> {
    trace_with(
        TraceOptions { map_mode },
        &[AbstractValue::server(&[], DType::F64)],
        clients,
        |t, xs| Ok(vec![broadcast_double_and_sum(t, &xs[0])?]),
    )
}

pub fn fed_avg_graph(
    clients: ClientCount,
    dim: usize,
    batch: Option<usize>,
    client_lr: f64,
    local_steps: usize,
    map_mode: MapMode,
) -> Result<Graph> {
    trace_with(
        TraceOptions { map_mode },
        &program_specs(clients, dim, batch),
        clients,
        |t, xs| Ok(vec![fed_avg(t, &xs[0], &xs[1], client_lr, local_steps)?]),
    )
}

/// Evaluate [`federated_loss`] eagerly. `model` is `(1, d)`; `cohort` is
/// `(n, d)` or `(n, batch, d)`.
pub fn eval_federated_loss(model: &Tensor, cohort: &Tensor) -> Result<f64> {
    let n = ClientCount::new(cohort.shape().first().copied().unwrap_or(0))?;
    let mut e = Eager::new(n);
    let m = e.input(model.clone(), Some(Placement::Server))?;
    let c = e.input(cohort.clone(), Some(Placement::Clients))?;
    let out = federated_loss(&mut e, &m, &c)?;
    Ok(out.tensor.data()[0])
}

/// Plain SGD state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptState {
    learning_rate: f64,
}

impl OptState {
    /// A zero rate is accepted and leaves the model unchanged.
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(Error::InvalidArgument {
                op: "OptState",
                reason: format!("learning rate must be finite and non-negative, got {learning_rate}"),
            });
        }
        Ok(OptState { learning_rate })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }
}

/// FedSGD: the server gradient comes from differentiating the traced
/// federated loss. The gradient graph is built once and reused.
#[derive(Debug, Clone)]
pub struct FedSgd {
    grad: Graph,
}

impl FedSgd {
    pub fn new(clients: ClientCount, dim: usize, batch: Option<usize>) -> Result<Self> {
        let loss = federated_loss_graph(clients, dim, batch, MapMode::Inline)?;
        Ok(FedSgd { grad: grad(&loss, 0)? })
    }

    pub fn grad_graph(&self) -> &Graph {
        &self.grad
    }

    pub fn gradient(&self, model: &Tensor, cohort: &Tensor) -> Result<Tensor> {
        Ok(eval_graph(&self.grad, &[model.clone(), cohort.clone()])?.remove(0))
    }

    pub fn step(&self, model: &Tensor, cohort: &Tensor, opt: OptState) -> Result<(Tensor, OptState)> {
        let g = self.gradient(model, cohort)?;
        let update = ew_unary(UnaryOp::Scale(opt.learning_rate), &g)?;
        Ok((ew_binary(BinaryOp::Sub, model, &update)?, opt))
    }
}

fn cohort_layout(model: &Tensor, cohort: &Tensor) -> Result<(ClientCount, usize, Option<usize>)> {
    let (ms, cs) = (model.shape(), cohort.shape());
    let bad = || Error::InvalidArgument {
        op: "cohort",
        reason: format!("model {ms:?} and cohort {cs:?} do not fit (1, d) and (n, [batch,] d)"),
    };
    if ms.len() != 2 || ms[0] != 1 || cs.is_empty() || cs.last() != Some(&ms[1]) {
        return Err(bad());
    }
    let n = ClientCount::new(cs[0])?;
    match cs.len() {
        2 => Ok((n, ms[1], None)),
        3 => Ok((n, ms[1], Some(cs[1]))),
        _ => Err(bad()),
    }
}

/// `model - lr * grad(federated_loss)(model, cohort)`.
pub fn fed_sgd_step(model: &Tensor, cohort: &Tensor, opt: OptState) -> Result<(Tensor, OptState)> {
    let (n, dim, batch) = cohort_layout(model, cohort)?;
    FedSgd::new(n, dim, batch)?.step(model, cohort, opt)
}

/// One FedAvg round evaluated through the traced graph.
pub fn fed_avg_round(model: &Tensor, cohort: &Tensor, client_lr: f64, local_steps: usize) -> Result<Tensor> {
    let (n, dim, batch) = cohort_layout(model, cohort)?;
    let g = fed_avg_graph(n, dim, batch, client_lr, local_steps, MapMode::Inline)?;
    Ok(eval_graph(&g, &[model.clone(), cohort.clone()])?.remove(0))
}

/// Synthetic regression data: per-client batches of vectors `y` that all
/// satisfy `<x*, y> = 1` for a known unit vector `x*`, before noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    /// Clients-placed features, shape `(n, batch, d)`. Targets are the
    /// constant 1 of the loss.
    pub features: Tensor,
    /// Server-placed optimum, shape `(1, d)`.
    pub optimum: Tensor,
}

impl Cohort {
    pub fn clients(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn batch(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[2]
    }
}

/// Deterministic cohort for `seed`. The optimum is a coordinate vector, so
/// with `noise == 0` every datum has `<x*, y> == 1` exactly.
pub fn synth_dataset(clients: usize, batch: usize, dim: usize, noise: f64, seed: u64) -> Result<Cohort> {
    if clients == 0 || batch == 0 || dim == 0 {
        return Err(Error::InvalidArgument {
            op: "synth_dataset",
            reason: "sizes must be positive".into(),
        });
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidArgument {
            op: "synth_dataset",
            reason: format!("noise must be finite and non-negative, got {noise}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = rng.random_range(0..dim);
    let mut data = Vec::with_capacity(clients * batch * dim);
    for _ in 0..clients * batch {
        for j in 0..dim {
            let v = if j == axis { 1.0 } else { rng.sample::<f64, _>(StandardNormal) };
            data.push(v);
        }
    }
    if noise > 0.0 {
        for v in &mut data {
            *v += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut optimum = vec![0.0; dim];
    optimum[axis] = 1.0;
    Ok(Cohort {
        features: Tensor::new(vec![clients, batch, dim], data)?,
        optimum: Tensor::new(vec![1, dim], optimum)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::matrix(rows)
    }

    #[test]
    fn loss_values() {
        let mut e = Eager::new(ClientCount::new(1).unwrap());
        let x = e.input(Tensor::vector(&[1., 0.]), None).unwrap();
        let y = e.input(Tensor::vector(&[1., 2.]), None).unwrap();
        assert_eq!(loss_fn(&mut e, &x, &y).unwrap().tensor.to_vec(), vec![0.0]);
        let x = e.input(Tensor::vector(&[1., 1.]), None).unwrap();
        let y = e.input(Tensor::vector(&[2., 3.]), None).unwrap();
        assert_eq!(loss_fn(&mut e, &x, &y).unwrap().tensor.to_vec(), vec![8.0]);
        let z = e.input(Tensor::vector(&[0., 0.]), None).unwrap();
        assert_eq!(loss_fn(&mut e, &z, &y).unwrap().tensor.to_vec(), vec![0.5]);
        let short = e.input(Tensor::vector(&[1.]), None).unwrap();
        assert!(loss_fn(&mut e, &short, &y).is_err());
    }

    #[test]
    fn federated_loss_examples() {
        assert_eq!(eval_federated_loss(&t2(&[&[1., 0.]]), &t2(&[&[1., 2.]])).unwrap(), 0.0);
        assert_eq!(eval_federated_loss(&t2(&[&[1., 1.]]), &t2(&[&[2., 3.]])).unwrap(), 8.0);
        let two = t2(&[&[1., 2.], &[3., 4.]]);
        assert_eq!(eval_federated_loss(&t2(&[&[1., 0.]]), &two).unwrap(), 1.0);
    }

    #[test]
    fn fed_sgd_example() {
        let model = t2(&[&[1., 0.]]);
        let cohort = t2(&[&[1., 2.], &[3., 4.]]);
        let sgd = FedSgd::new(ClientCount::new(2).unwrap(), 2, None).unwrap();
        assert_eq!(sgd.gradient(&model, &cohort).unwrap().to_vec(), vec![3., 4.]);
        let (next, _) = fed_sgd_step(&model, &cohort, OptState::new(0.1).unwrap()).unwrap();
        let v = next.to_vec();
        assert!((v[0] - 0.7).abs() < 1e-15 && (v[1] + 0.4).abs() < 1e-15, "{v:?}");
        let (same, _) = fed_sgd_step(&model, &cohort, OptState::new(0.0).unwrap()).unwrap();
        assert!(same.bit_eq(&model));
        assert!(OptState::new(-1.0).is_err());
    }

    #[test]
    fn fed_avg_example() {
        let model = t2(&[&[1., 0.]]);
        let cohort = t2(&[&[1., 2.], &[3., 4.]]);
        let v = fed_avg_round(&model, &cohort, 0.1, 1).unwrap().to_vec();
        assert!((v[0] - 0.7).abs() < 1e-15 && (v[1] + 0.4).abs() < 1e-15, "{v:?}");
        assert!(fed_avg_round(&model, &cohort, 0.1, 0).is_err());
    }

    #[test]
    fn synthetic_cohort_has_exact_optimum() {
        let c = synth_dataset(3, 4, 2, 0.0, 7).unwrap();
        assert_eq!(c.features.shape(), &[3, 4, 2]);
        assert_eq!(eval_federated_loss(&c.optimum, &c.features).unwrap(), 0.0);
        assert_eq!(c, synth_dataset(3, 4, 2, 0.0, 7).unwrap());
        assert_ne!(c, synth_dataset(3, 4, 2, 0.0, 8).unwrap());
        assert!(synth_dataset(0, 4, 2, 0.0, 7).is_err());
    }
}
