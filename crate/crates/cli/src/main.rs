use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use fedflow::ad::{check_closure, grad};
use fedflow::algorithms::{
    broadcast_double_and_sum_graph, eval_federated_loss, fed_avg_graph, federated_loss_graph, synth_dataset,
    FedSgd, OptState,
};
use fedflow::export::{comm_summary, parse, serialize_canonical, serialize_text};
use fedflow::ir::{eval_graph, MapMode};
use fedflow::runtime::{bench_round, BenchReport, Schedule, ShardingSpec};
use fedflow::{ClientCount, DType, Graph, Tensor};

#[derive(Parser)]
#[command(name = "fedflow", version, about = "Federated computation demos, AD checks, export and benchmarks")]
struct Cli {
    /// Emit one JSON record per line instead of human-readable text.
    #[arg(long, global = true)]
    json_lines: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Program {
    Loss,
    GradLoss,
    Fedavg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Canonical,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Workers {
    /// One worker per client.
    Equal,
    /// A single worker running every client in turn.
    #[value(name = "1")]
    One,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Fedsgd,
    Fedavg,
}

#[derive(Subcommand)]
enum Command {
    /// Broadcast x, double it on every client and sum it back.
    Demo {
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        clients: u64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        x: f64,
    },
    /// Compare the federated gradient of the loss against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
        clients: u64,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        dim: u64,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Write a traced program as text or canonical bytes.
    Export {
        #[arg(long, value_enum)]
        program: Program,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        clients: u64,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        dim: u64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Local steps of the fedavg program.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        local_steps: u64,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time FedAvg rounds under the sharded runtime.
    Bench {
        #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
        model_dim: u64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        clients_list: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Workers::Equal)]
        workers: Workers,
        /// Timed rounds per configuration (the median is reported).
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(3..))]
        rounds: u64,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
        local_steps: u64,
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
        batch: u64,
    },
    /// Train on a synthetic cohort and print the loss trajectory.
    Train {
        #[arg(long, value_enum, default_value_t = Algo::Fedsgd)]
        algo: Algo,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
        clients: u64,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        dim: u64,
        #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
        batch: u64,
        /// Server steps (fedsgd) or rounds (fedavg).
        #[arg(long, alias = "rounds", default_value_t = 200)]
        steps: u64,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        local_steps: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit with status 1 when the final loss is above this value.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print a canonical graph file as text with its communication summary.
    Inspect { path: PathBuf },
}

enum Failure {
    Check(String),
    Usage(String),
}

impl From<fedflow::Error> for Failure {
    fn from(e: fedflow::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn count(n: u64) -> Result<ClientCount, Failure> {
    Ok(ClientCount::new(n as usize)?)
}

fn emit(json: bool, record: serde_json::Value, human: impl FnOnce() -> String) {
    if json {
        println!("{record}");
    } else {
        println!("{}", human());
    }
}

fn demo(json: bool, clients: u64, x: f64) -> CmdResult {
    let g = broadcast_double_and_sum_graph(count(clients)?, MapMode::Inline)?;
    let out = eval_graph(&g, &[Tensor::new(vec![1], vec![x])?])?;
    let result = out[0].data()[0];
    emit(json, json!({"command": "demo", "clients": clients, "x": x, "result": result}), || {
        format!("{result}")
    });
    Ok(())
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn gradcheck(json: bool, clients: u64, dim: u64, trials: u64, seed: u64, tolerance: f64) -> CmdResult {
    let (n, d) = (clients as usize, dim as usize);
    let loss = federated_loss_graph(count(clients)?, d, None, MapMode::Inline)?;
    let g = grad(&loss, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let model = random_tensor(&mut rng, &[1, d]);
        let cohort = random_tensor(&mut rng, &[n, d]);
        let analytic = eval_graph(&g, &[model.clone(), cohort.clone()])?.remove(0);
        let mut trial_err: f64 = 0.0;
        for j in 0..d {
            let h = 1e-6 * (1.0 + model.data()[j].abs());
            let bump = |delta: f64| -> Result<f64, Failure> {
                let mut v = model.to_vec();
                v[j] += delta;
                Ok(eval_federated_loss(&Tensor::new(vec![1, d], v)?, &cohort)?)
            };
            let fd = (bump(h)? - bump(-h)?) / (2.0 * h);
            let err = (analytic.data()[j] - fd).abs() / fd.abs().max(1.0);
            trial_err = trial_err.max(err);
        }
        worst = worst.max(trial_err);
        if json {
            println!("{}", json!({"command": "gradcheck", "trial": trial, "max_rel_err": trial_err}));
        }
    }
    let ok = worst <= tolerance;
    emit(
        json,
        json!({"command": "gradcheck", "clients": n, "dim": d, "trials": trials, "seed": seed,
               "max_rel_err": worst, "tolerance": tolerance, "ok": ok}),
        || format!("max relative error {worst:.3e} over {trials} trials (tolerance {tolerance:.0e}): {}",
            if ok { "ok" } else { "FAILED" }),
    );
    if ok {
        Ok(())
    } else {
        Err(Failure::Check(format!("max relative error {worst:e} exceeds {tolerance:e}")))
    }
}

fn build_program(program: Program, clients: u64, dim: u64, local_steps: u64, lr: f64) -> Result<Graph, Failure> {
    let (n, d) = (count(clients)?, dim as usize);
    Ok(match program {
        Program::Loss => federated_loss_graph(n, d, None, MapMode::Inline)?,
        Program::GradLoss => grad(&federated_loss_graph(n, d, None, MapMode::Inline)?, 0)?,
        Program::Fedavg => fed_avg_graph(n, d, None, lr, local_steps as usize, MapMode::Inline)?,
    })
}

fn export(program: Program, clients: u64, dim: u64, format: Format, local_steps: u64, lr: f64, out: Option<PathBuf>) -> CmdResult {
    let g = build_program(program, clients, dim, local_steps, lr)?;
    check_closure(&g)?;
    let bytes = match format {
        Format::Text => serialize_text(&g).into_bytes(),
        Format::Canonical => serialize_canonical(&g),
    };
    match out {
        Some(path) => fs::write(&path, bytes)
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Failure::Usage(e.to_string()))?,
    }
    Ok(())
}

fn bench(json: bool, model_dim: u64, clients_list: &[usize], workers: Workers, rounds: u64, local_steps: u64, batch: u64) -> CmdResult {
    if clients_list.is_empty() {
        return Err(Failure::Usage("--clients-list is empty".into()));
    }
    let (d, bsz) = (model_dim as usize, batch as usize);
    let mut reports = Vec::new();
    for &n in clients_list {
        let clients = count(n as u64)?;
        let g = fed_avg_graph(clients, d, Some(bsz), 0.01, local_steps as usize, MapMode::Inline)?;
        let data = synth_dataset(n, bsz, d, 0.0, 0)?;
        let inputs = [Tensor::zeros(&[1, d], DType::F64), data.features];
        let (w, schedule, label) = match workers {
            Workers::Equal => (n, Schedule::Parallel, "workers=n"),
            Workers::One => (1, Schedule::Sequential, "workers=1"),
        };
        let spec = ShardingSpec::new(w, clients)?;
        let report = bench_round(label, &g, &spec, &inputs, rounds as usize, schedule)?;
        if json {
            println!("{}", report.to_json_line());
        }
        reports.push(report);
    }
    if !json {
        print!("{}", BenchReport::table(&reports));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    json: bool,
    algo: Algo,
    clients: u64,
    dim: u64,
    batch: u64,
    steps: u64,
    lr: f64,
    local_steps: u64,
    noise: f64,
    seed: u64,
    threshold: Option<f64>,
) -> CmdResult {
    let (n, d, bsz) = (clients as usize, dim as usize, batch as usize);
    let opt = OptState::new(lr)?;
    let data = synth_dataset(n, bsz, d, noise, seed)?;
    let cohort = data.features;
    let mut model = Tensor::zeros(&[1, d], DType::F64);
    let sgd = FedSgd::new(count(clients)?, d, Some(bsz))?;
    let avg = fed_avg_graph(count(clients)?, d, Some(bsz), lr, local_steps as usize, MapMode::Inline)?;
    let algo_name = match algo {
        Algo::Fedsgd => "fedsgd",
        Algo::Fedavg => "fedavg",
    };
    let report = |step: u64, loss: f64| {
        emit(json, json!({"command": "train", "algo": algo_name, "step": step, "loss": loss}), || {
            format!("{step:>5} {loss:.6e}")
        })
    };
    let mut loss = eval_federated_loss(&model, &cohort)?;
    report(0, loss);
    for step in 1..=steps {
        model = match algo {
            Algo::Fedsgd => sgd.step(&model, &cohort, opt)?.0,
            Algo::Fedavg => eval_graph(&avg, &[model, cohort.clone()])?.remove(0),
        };
        loss = eval_federated_loss(&model, &cohort)?;
        report(step, loss);
    }
    match threshold {
        Some(t) if loss.is_nan() || loss > t => Err(Failure::Check(format!("final loss {loss:e} exceeds {t:e}"))),
        _ => Ok(()),
    }
}

fn inspect(json: bool, path: PathBuf) -> CmdResult {
    let bytes = fs::read(&path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let g = parse(&bytes)?;
    let summary = comm_summary(&g);
    if json {
        println!(
            "{}",
            json!({"command": "inspect", "equations": g.equations().len(), "communication": summary.names()})
        );
    } else {
        print!("{g}");
        println!("communication: {summary}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json_lines;
    let result = match cli.command {
        Command::Demo { clients, x } => demo(json, clients, x),
        Command::Gradcheck { clients, dim, trials, seed, tolerance } => {
            gradcheck(json, clients, dim, trials, seed, tolerance)
        }
        Command::Export { program, clients, dim, format, local_steps, lr, out } => {
            export(program, clients, dim, format, local_steps, lr, out)
        }
        Command::Bench { model_dim, clients_list, workers, rounds, local_steps, batch } => {
            bench(json, model_dim, &clients_list, workers, rounds, local_steps, batch)
        }
        Command::Train { algo, clients, dim, batch, steps, lr, local_steps, noise, seed, threshold } => {
            train(json, algo, clients, dim, batch, steps, lr, local_steps, noise, seed, threshold)
        }
        Command::Inspect { path } => inspect(json, path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
