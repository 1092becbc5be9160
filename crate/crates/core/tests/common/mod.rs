#![allow(dead_code)]

use fedflow::ad::{grad, jvp};
use fedflow::algorithms::{broadcast_double_and_sum, client_loss, fed_avg, federated_loss};
use fedflow::ir::{trace_with, MapMode, TraceOptions};
use fedflow::{AbstractValue, ClientCount, DType, FedBuilder, Graph, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn n(k: usize) -> ClientCount {
    ClientCount::new(k).unwrap()
}

/// Test programs, each runnable on any [`FedBuilder`] backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prog {
    DoubleSum,
    Loss,
    LossBatched,
    FedAvgK2,
    /// Mean of client losses and sum of `model + datum`, side by side.
    TwoAggregates,
}

pub const PROGRAMS: [Prog; 5] = [
    Prog::DoubleSum,
    Prog::Loss,
    Prog::LossBatched,
    Prog::FedAvgK2,
    Prog::TwoAggregates,
];

impl Prog {
    pub fn name(self) -> &'static str {
        match self {
            Prog::DoubleSum => "double_sum",
            Prog::Loss => "loss",
            Prog::LossBatched => "loss_batched",
            Prog::FedAvgK2 => "fedavg_k2",
            Prog::TwoAggregates => "two_aggregates",
        }
    }

    pub fn differentiable(self) -> bool {
        matches!(self, Prog::DoubleSum | Prog::Loss | Prog::LossBatched)
    }

    pub fn specs(self, clients: ClientCount) -> Vec<AbstractValue> {
        let f = DType::F64;
        match self {
            Prog::DoubleSum => vec![AbstractValue::server(&[], f)],
            Prog::Loss | Prog::TwoAggregates => vec![
                AbstractValue::server(&[3], f),
                AbstractValue::clients(clients, &[3], f),
            ],
            Prog::LossBatched | Prog::FedAvgK2 => vec![
                AbstractValue::server(&[3], f),
                AbstractValue::clients(clients, &[2, 3], f),
            ],
        }
    }

    pub fn run<B: FedBuilder>(self, b: &mut B, xs: &[B::Value]) -> Result<Vec<B::Value>> {
        Ok(match self {
            Prog::DoubleSum => vec![broadcast_double_and_sum(b, &xs[0])?],
            Prog::Loss | Prog::LossBatched => vec![federated_loss(b, &xs[0], &xs[1])?],
            Prog::FedAvgK2 => vec![fed_avg(b, &xs[0], &xs[1], 0.1, 2)?],
            Prog::TwoAggregates => {
                let m = b.federated_broadcast(&xs[0])?;
                let outs = b.federated_map(&[m, xs[1].clone()], &|b, v| {
                    let l = client_loss(b, &v[0], &v[1])?;
                    let s = b.add(&v[0], &v[1])?;
                    Ok(vec![l, s])
                })?;
                vec![b.federated_mean(&outs[0])?, b.federated_sum(&outs[1])?]
            }
        })
    }

    pub fn trace(self, clients: usize, mode: MapMode) -> Graph {
        let c = n(clients);
        trace_with(TraceOptions { map_mode: mode }, &self.specs(c), c, |t, xs| self.run(t, xs)).unwrap()
    }
}

pub const MODES: [(&str, MapMode); 2] = [("inline", MapMode::Inline), ("nested", MapMode::Nested)];

/// Every program traced in both map modes.
pub fn corpus(clients: usize) -> Vec<(String, Graph)> {
    let mut out = Vec::new();
    for p in PROGRAMS {
        for (tag, mode) in MODES {
            out.push((format!("{}/{tag}", p.name()), p.trace(clients, mode)));
        }
    }
    out
}

/// Corpus plus the jvp of every program and the grad of every
/// differentiable one.
pub fn corpus_with_transforms(clients: usize) -> Vec<(String, Graph)> {
    let mut all = corpus(clients);
    for p in PROGRAMS {
        for (tag, mode) in MODES {
            let g = p.trace(clients, mode);
            all.push((format!("jvp({}/{tag})", p.name()), jvp(&g).unwrap()));
            if p.differentiable() {
                all.push((format!("grad({}/{tag})", p.name()), grad(&g, 0).unwrap()));
            }
        }
    }
    all
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_inputs(g: &Graph, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    g.input_values().iter().map(|av| random_tensor(rng, &av.shape)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
