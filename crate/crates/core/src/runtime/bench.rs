use std::collections::BTreeMap;
use std::fmt::Write;
use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ir::Graph;
use crate::tensor::Tensor;

use super::{partition, Executor, Schedule, ShardingSpec};

/// Timing of one configuration: median round time plus the median time of
/// each step kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub label: String,
    pub clients: usize,
    pub workers: usize,
    pub schedule: String,
    pub repetitions: usize,
    pub median_ms: f64,
    pub steps: BTreeMap<String, f64>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Time `repetitions` runs of `g` under `spec` (after one warm-up run).
pub fn bench_round(
    label: &str,
    g: &Graph,
    spec: &ShardingSpec,
    inputs: &[Tensor],
    repetitions: usize,
    schedule: Schedule,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::InvalidArgument {
            op: "bench_round",
            reason: format!("need at least 3 repetitions, got {repetitions}"),
        });
    }
    let plan = partition(g, spec)?;
    let exec = Executor::new(plan.worker_count(), schedule)?;
    exec.run(&plan, inputs)?;
    let mut totals = Vec::with_capacity(repetitions);
    let mut per_kind: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for _ in 0..repetitions {
        let start = std::time::Instant::now();
        let (_, timings) = exec.run_timed(&plan, inputs)?;
        totals.push(ms(start.elapsed()));
        for (kind, d) in timings.entries() {
            per_kind.entry(kind.to_string()).or_default().push(ms(d));
        }
    }
    Ok(BenchReport {
        label: label.to_string(),
        clients: spec.clients().get(),
        workers: plan.worker_count(),
        schedule: match exec.schedule() {
            Schedule::Parallel => "parallel",
            Schedule::Sequential => "sequential",
        }
        .to_string(),
        repetitions,
        median_ms: median(totals),
        steps: per_kind.into_iter().map(|(k, v)| (k, median(v))).collect(),
    })
}

impl BenchReport {
    /// Machine-readable form: one JSON object.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Fixed-width text table, one row per report.
    pub fn table(reports: &[BenchReport]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>7} {:>10} {:>11} {:>9} {:>9} {:>9} {:>9}",
            "config", "clients", "workers", "schedule", "median_ms", "local", "reduce", "bcast", "server"
        );
        for r in reports {
            let step = |k: &str| r.steps.get(k).copied().unwrap_or(0.0);
            let _ = writeln!(
                out,
                "{:<14} {:>7} {:>7} {:>10} {:>11.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                r.label,
                r.clients,
                r.workers,
                r.schedule,
                r.median_ms,
                step("local"),
                step("reduce"),
                step("broadcast"),
                step("server")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
