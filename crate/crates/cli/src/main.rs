use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use fedring::dp::{calibrate_sigma, epsilon_for, DpError};
use fedring::fixedpoint::FixedPointConfig;
use fedring::net::socket::{self, SocketPeers};
use fedring::net::{NetError, Worker, WorkerId};
use fedring::spdz::{dealer_generate, SpdzError, TripleKey, TripleKind};
use fedring::train::{
    benchmark, evaluate, load_dataset, mpc_forward, train_federated, train_federated_dp,
    train_plain, BenchConfig, DatasetKind, FederatedDataset, Federation, Metric, RunSummary,
    TrainConfig, TrainError, TrainOutcome, TransportKind, DP_PHASES, SCHEMA_VERSION,
};

const EXIT_USAGE: u8 = 1;
const EXIT_BIND: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "fedring",
    version,
    about = "Federated learning with secret sharing and differential privacy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Serve a worker over TCP until interrupted.
    Worker(WorkerArgs),
    /// Train a model and print a JSON summary.
    Train(TrainArgs),
    /// Compute epsilon for a DP-SGD run, or calibrate sigma for a target epsilon.
    Accountant(AccountantArgs),
    /// Generate Beaver triples and check them.
    Dealer(DealerArgs),
    /// Time virtual, socket and DP training on one machine.
    Benchmark(BenchArgs),
}

#[derive(Args, Debug)]
struct WorkerArgs {
    /// Worker name.
    #[arg(long)]
    id: String,
    /// Address to listen on, e.g. 127.0.0.1:7001.
    #[arg(long)]
    listen: String,
    /// Peer workers reachable for share pushes, as ID=ADDR.
    #[arg(long = "peer", value_name = "ID=ADDR")]
    peers: Vec<String>,
    /// Seed of the worker's private randomness (falls back to FEDRING_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Single-process minibatch SGD.
    Plain,
    /// In-process workers.
    Virtual,
    /// Workers over loopback TCP.
    Socket,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset: boston or pima.
    #[arg(long)]
    dataset: String,
    /// CSV file; defaults to data/<dataset>.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed for the split, initialization and workers (falls back to FEDRING_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of data workers.
    #[arg(long, default_value_t = 2)]
    workers: usize,
    /// Learning rate [default: 0.05 for boston, 0.5 for pima, min(0.05, 0.2/sigma) with --dp].
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Hidden layer width.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Lot size L per DP phase.
    #[arg(long, default_value_t = 32)]
    lot: usize,
    /// Number of DP phases T [default: 800 with --dp, else 500].
    #[arg(long)]
    phases: Option<usize>,
    /// Per-example clipping norm C [default: 1.5 with --dp, else 1.0].
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Transport.
    #[arg(long, value_enum, default_value_t = Mode::Virtual)]
    mode: Mode,
    /// Use already running workers instead of spawning them, as ID=ADDR.
    #[arg(long = "connect", value_name = "ID=ADDR", conflicts_with = "mode")]
    connect: Vec<String>,
    /// Train with differential privacy.
    #[arg(long)]
    dp: bool,
    /// Target epsilon; sigma is calibrated to reach it.
    #[arg(long, requires = "dp", conflicts_with = "sigma")]
    eps: Option<f64>,
    /// Noise multiplier, used as given.
    #[arg(long, requires = "dp")]
    sigma: Option<f64>,
    /// Also evaluate the test split with inference on shared weights and inputs.
    #[arg(long)]
    mpc: bool,
    /// Fractional bits of the fixed-point encoding used by --mpc.
    #[arg(long, default_value_t = 16)]
    frac_bits: u32,
    /// Write the per-step trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AccountantArgs {
    /// Sampling ratio q = L/N.
    #[arg(long)]
    q: f64,
    /// Number of phases T.
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Noise multiplier; prints the resulting epsilon.
    #[arg(long, conflicts_with = "target_eps", required_unless_present = "target_eps")]
    sigma: Option<f64>,
    /// Target epsilon; prints the calibrated sigma.
    #[arg(long, alias = "eps")]
    target_eps: Option<f64>,
}

#[derive(Args, Debug)]
struct DealerArgs {
    /// mul or matmul.
    #[arg(long, default_value = "matmul")]
    kind: String,
    /// Operand shape for mul; m,k,n for matmul.
    #[arg(long, default_value = "4,4,4")]
    shape: String,
    /// Comma-separated party names.
    #[arg(long, default_value = "p0,p1")]
    parties: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Runs per mode; medians are reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Noise multiplier for the DP mode.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn net_code(e: &NetError) -> Option<u8> {
    match e {
        NetError::Bind { .. } => Some(EXIT_BIND),
        e if e.is_transport() => Some(EXIT_TRANSPORT),
        _ => None,
    }
}

fn dp_code(e: &DpError) -> Option<u8> {
    match e {
        DpError::Numerical(_) | DpError::Unachievable { .. } => Some(EXIT_NUMERICAL),
        _ => None,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        let code = if let Some(n) = cause.downcast_ref::<NetError>() {
            net_code(n)
        } else if let Some(d) = cause.downcast_ref::<DpError>() {
            dp_code(d)
        } else if let Some(t) = cause.downcast_ref::<TrainError>() {
            match t {
                TrainError::Net(n) => net_code(n),
                TrainError::Chain(fedring::chain::ChainError::Net(n)) => net_code(n),
                TrainError::Dp(d) => dp_code(d),
                _ => None,
            }
        } else {
            None
        };
        if let Some(c) = code {
            return c;
        }
    }
    EXIT_USAGE
}

fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("FEDRING_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("FEDRING_SEED={v:?} is not an integer")),
        Err(_) => Ok(0),
    }
}

fn parse_endpoint(s: &str) -> Result<(WorkerId, String)> {
    let (id, addr) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("expected ID=ADDR, got {s:?}"))?;
    Ok((WorkerId::new(id)?, addr.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Worker(a) => cmd_worker(a),
        Command::Train(a) => cmd_train(a),
        Command::Accountant(a) => cmd_accountant(a),
        Command::Dealer(a) => cmd_dealer(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

fn cmd_worker(a: WorkerArgs) -> Result<()> {
    let id = WorkerId::new(&a.id)?;
    let seed = resolve_seed(a.seed)?;
    let peers = a
        .peers
        .iter()
        .map(|p| parse_endpoint(p))
        .collect::<Result<HashMap<_, _>>>()?;
    let worker = Arc::new(Worker::new(
        id,
        fedring::net::worker_seed(seed, &WorkerId::new(&a.id)?),
    ));
    worker.set_peers(Arc::new(SocketPeers::new(peers)));
    let handle = socket::serve(&a.listen, worker)?;
    let addr = handle.local_addr();
    let stop = handle.stop_flag();
    ctrlc::set_handler(move || {
        stop.store(true, Ordering::SeqCst);
        socket::wake(addr);
    })
    .context("cannot install the interrupt handler")?;
    println!("worker {} listening on {addr}", a.id);
    handle.wait();
    log::info!("worker {} stopped", a.id);
    Ok(())
}

fn default_data_path(kind: DatasetKind) -> PathBuf {
    let rel = PathBuf::from("data").join(format!("{}.csv", kind.name()));
    if rel.exists() {
        return rel;
    }
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(format!("{}.csv", kind.name()))
}

struct Loaded {
    kind: DatasetKind,
    ds: FederatedDataset,
    seed: u64,
}

fn load(a: &DataArgs, workers: usize) -> Result<Loaded> {
    let kind = DatasetKind::parse(&a.dataset)
        .ok_or_else(|| anyhow!("unknown dataset {:?} (expected boston or pima)", a.dataset))?;
    let path = a.data.clone().unwrap_or_else(|| default_data_path(kind));
    let seed = resolve_seed(a.seed)?;
    let ds = load_dataset(&path, kind, seed, workers)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(Loaded { kind, ds, seed })
}

/// The dataset preset with every flag the user passed applied on top.
fn config(a: &DataArgs, kind: DatasetKind, seed: u64, dp_sigma: Option<f64>) -> TrainConfig {
    let preset = TrainConfig::preset(kind, dp_sigma);
    TrainConfig {
        lr: a.lr.unwrap_or(preset.lr),
        epochs: a.epochs,
        batch: a.batch,
        lot: a.lot,
        phases: a.phases.unwrap_or(preset.phases),
        clip: a.clip.unwrap_or(preset.clip),
        delta: a.delta,
        hidden: a.hidden,
        seed,
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let remote: Vec<(WorkerId, String)> = a
        .connect
        .iter()
        .map(|s| parse_endpoint(s))
        .collect::<Result<_>>()?;
    let dealer = remote
        .iter()
        .find(|(id, _)| id.as_str() == "dealer")
        .cloned();
    let data_workers: Vec<_> = remote
        .iter()
        .filter(|(id, _)| id.as_str() != "dealer")
        .cloned()
        .collect();
    let n_workers = if remote.is_empty() {
        a.data.workers
    } else {
        data_workers.len()
    };
    if a.mode == Mode::Plain && (a.dp || a.mpc) {
        bail!("--dp and --mpc need federated workers, not --mode plain");
    }
    let Loaded { kind, ds, seed } = load(&a.data, n_workers)?;
    let sigma = if a.dp {
        let phases = a.data.phases.unwrap_or(DP_PHASES);
        let q = a.data.lot as f64 / ds.train_rows() as f64;
        Some(match (a.sigma, a.eps) {
            (Some(s), _) => s,
            (None, Some(e)) => calibrate_sigma(e, a.data.delta, q, phases as u64)?,
            (None, None) => bail!("--dp needs --eps or --sigma"),
        })
    } else {
        None
    };
    let cfg = config(&a.data, kind, seed, sigma);
    let transport = if remote.is_empty() {
        a.mode
    } else {
        Mode::Socket
    };

    let mut fed = match (a.mode, remote.is_empty()) {
        (Mode::Plain, true) => None,
        (m, true) => {
            let kind = if m == Mode::Socket {
                TransportKind::Socket
            } else {
                TransportKind::Virtual
            };
            Some(Federation::local(kind, n_workers, seed, a.mpc, None)?)
        }
        (_, false) => Some(Federation::remote(&data_workers, dealer, seed, None)?),
    };

    let mut epsilon = None;
    let mut sigma_used = None;
    let outcome: TrainOutcome = match (&mut fed, a.dp) {
        (None, _) => train_plain(&ds, &cfg)?,
        (Some(fed), false) => train_federated(fed, &ds, &cfg)?,
        (Some(fed), true) => {
            let sigma = sigma.expect("sigma resolved for DP runs");
            let out = train_federated_dp(fed, &ds, &cfg, sigma)?;
            epsilon = Some(out.epsilon);
            sigma_used = Some(sigma);
            out.run
        }
    };
    let metric = evaluate(&outcome.model, &ds.test, ds.task(), &ds.scaler)?;
    if let Some(path) = &a.trace {
        let f =
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        outcome.trace.write_csv(f)?;
    }
    let mut summary = serde_json::to_value(RunSummary {
        schema_version: SCHEMA_VERSION,
        dataset: kind.name().into(),
        mode: if a.dp {
            "federated_dp"
        } else if fed.is_some() {
            "federated"
        } else {
            "plain"
        }
        .into(),
        transport: format!("{transport:?}").to_lowercase(),
        workers: n_workers,
        seed,
        metric: metric.name().into(),
        value: metric.value(),
        steps: outcome.steps,
        wall_ms: outcome.wall_ms,
        per_batch_ms: outcome.per_step_ms(),
        epsilon: epsilon.filter(|e| e.is_finite()),
        delta: a.dp.then_some(cfg.delta),
        sigma: sigma_used,
    })?;
    if a.mpc {
        let fed = fed.as_mut().expect("federated run");
        let pred = mpc_forward(fed, &outcome.model, &ds.test.x, FixedPointConfig::new(a.frac_bits)?)?;
        let pred = ds.scaler.decode(&pred);
        let n = ds.test.rows() as f64;
        let m = match metric {
            Metric::Mse(_) => {
                pred.iter()
                    .zip(&ds.test.y)
                    .map(|(p, y)| (p - y) * (p - y))
                    .sum::<f64>()
                    / n
            }
            Metric::Accuracy(_) => {
                pred.iter()
                    .zip(&ds.test.y)
                    .filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5))
                    .count() as f64
                    / n
            }
        };
        summary["mpc_value"] = serde_json::json!(m);
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_accountant(a: AccountantArgs) -> Result<()> {
    match (a.sigma, a.target_eps) {
        (Some(sigma), _) => println!("{:.4}", epsilon_for(a.q, sigma, a.steps, a.delta)?),
        (None, Some(eps)) => println!("{:.4}", calibrate_sigma(eps, a.delta, a.q, a.steps)?),
        (None, None) => bail!("pass --sigma or --target-eps"),
    }
    Ok(())
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad shape {s:?}")))
        .collect()
}

/// Operand shapes of a triple: `shape` for both operands of mul, `[m,k]` and
/// `[k,n]` for matmul.
fn triple_shapes(kind: TripleKind, shape: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    match (kind, shape) {
        (TripleKind::Matmul, &[m, k, n]) => Ok((vec![m, k], vec![k, n])),
        (TripleKind::Matmul, _) => bail!("matmul shape must be m,k,n"),
        (TripleKind::Elementwise, s) => Ok((s.to_vec(), s.to_vec())),
    }
}

fn cmd_dealer(a: DealerArgs) -> Result<()> {
    let kind = TripleKind::parse(&a.kind).ok_or_else(|| anyhow!("unknown triple kind {:?}", a.kind))?;
    let (a_shape, b_shape) = triple_shapes(kind, &parse_shape(&a.shape)?)?;
    let key = TripleKey::new(kind, &a_shape, &b_shape)?;
    let parties = a
        .parties
        .split(',')
        .map(|p| WorkerId::new(p.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha20Rng::seed_from_u64(resolve_seed(a.seed)?);
    let triples = dealer_generate(&key, &parties, a.count, &mut rng)?;
    let mut valid = 0;
    for t in &triples {
        if t.verify()? {
            valid += 1;
        }
    }
    if valid != triples.len() {
        return Err(SpdzError::Config(format!(
            "{} of {} triples failed verification",
            triples.len() - valid,
            triples.len()
        ))
        .into());
    }
    let out = serde_json::json!({
        "kind": kind.name(),
        "a_shape": a_shape,
        "b_shape": b_shape,
        "parties": parties.iter().map(|p| p.as_str()).collect::<Vec<_>>(),
        "count": triples.len(),
        "verified": valid,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_benchmark(a: BenchArgs) -> Result<()> {
    let Loaded { kind, ds, seed } = load(&a.data, a.data.workers)?;
    let cfg = config(&a.data, kind, seed, None);
    let report = benchmark(
        &ds,
        &BenchConfig {
            train: cfg,
            sigma: a.sigma,
            repeats: a.repeats,
        },
    )?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}
