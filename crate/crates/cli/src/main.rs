//! Command-line front end: run searches locally or as a TCP master, serve
//! as a worker, train or retrain single genomes, and export results.

mod config;

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evocnn::dataset::{load_mnist, DataSplit, ImageSet, SplitSpec};
use evocnn::genome::{self, EdgeKind, Genome};
use evocnn::protocol::{run_local, run_worker, serve, ServerOptions, WorkerOptions};
use evocnn::search::{mix_seed, Master};
use evocnn::train::{epoch_log_csv, evaluate, train, InitStrategy, Phenotype, TrainConfig};

use config::RunConfig;

const RETRAIN_HEADER: &str = "run,init,val_err,test_err,val_acc,test_acc";
const POPULATION_HEADER: &str = "rank,generation_id,operator,fitness,nodes,conv_edges,pool_edges,weights";

#[derive(Parser)]
#[command(name = "evocnn", version, about = "Evolve convolutional network structures")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an evolutionary search with in-process workers or as a TCP master.
    Search(SearchArgs),
    /// Evaluate genomes for a TCP master until it is done.
    Worker(WorkerArgs),
    /// Train one genome (the minimal one by default).
    Train(TrainArgs),
    /// Retrain a genome several times and report validation and test scores.
    Retrain(RetrainArgs),
    /// Write a genome archive as a Graphviz graph.
    Export(ExportArgs),
    /// Print statistics from a search checkpoint.
    Stats(StatsArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// TOML run configuration; see `search --dump-config`.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_evals: Option<u64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Train on a random subset of this many images.
    #[arg(long)]
    train_subset: Option<usize>,
    /// Enable node operators.
    #[arg(long, overrides_with = "no_node_ops")]
    node_ops: bool,
    #[arg(long)]
    no_node_ops: bool,
    /// Enable pooling edges.
    #[arg(long, overrides_with = "no_pooling")]
    pooling: bool,
    #[arg(long)]
    no_pooling: bool,
    /// In-process training threads.
    #[arg(long, default_value_t = 1, conflicts_with = "serve")]
    workers: usize,
    /// Act as a TCP master on this address instead of training locally.
    #[arg(long)]
    serve: Option<String>,
    /// Directory for checkpoints, statistics and the best genome.
    #[arg(long, default_value = "evocnn-run")]
    out: PathBuf,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct WorkerArgs {
    /// Master address, host:port.
    #[arg(long)]
    connect: String,
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Train every genome for this many epochs instead of the master's count.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    id: Option<String>,
    /// Consecutive failed connections before giving up.
    #[arg(long, default_value_t = 8)]
    max_retries: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    He,
    Epigenetic,
}

impl From<Init> for InitStrategy {
    fn from(i: Init) -> Self {
        match i {
            Init::He => InitStrategy::He,
            Init::Epigenetic => InitStrategy::Epigenetic,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Genome archive to train; the minimal genome when absent.
    #[arg(long)]
    genome: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "he")]
    init: Init,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the trained genome.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    genome: PathBuf,
    #[arg(long, value_enum, default_value = "he")]
    init: Init,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    genome: PathBuf,
    /// DOT destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Operators,
    Progress,
    Population,
}

#[derive(Args)]
struct StatsArgs {
    /// Checkpoint file or the run directory holding `state.json`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "operators")]
    table: Table,
}

/// A failed command and the exit status that reports it.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn data(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn protocol(error: anyhow::Error) -> Failure {
    Failure { code: 3, error }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    let outcome = match cli.command {
        Command::Search(a) => search(a),
        Command::Worker(a) => worker(a),
        Command::Train(a) => train_one(a),
        Command::Retrain(a) => retrain(a),
        Command::Export(a) => export(a),
        Command::Stats(a) => stats(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// The error chain on one line, skipping causes whose text an outer
/// message already includes.
fn describe(error: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in error.chain() {
        let msg = cause.to_string();
        if text.contains(&msg) {
            continue;
        }
        if !text.is_empty() {
            text.push_str(": ");
        }
        text.push_str(&msg);
    }
    text
}

fn flag(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

fn load_full(dir: &Path) -> Result<ImageSet, Failure> {
    load_mnist(dir, false)
        .with_context(|| format!("loading training images from {}", dir.display()))
        .map_err(data)
}

fn load_split(dir: &Path, split: &SplitSpec) -> Result<(ImageSet, DataSplit), Failure> {
    let full = load_full(dir)?;
    let parts = split
        .apply(&full)
        .context("splitting the training images")
        .map_err(data)?;
    Ok((full, parts))
}

fn load_test(dir: &Path, split: &SplitSpec) -> Result<ImageSet, Failure> {
    let test = load_mnist(dir, true)
        .with_context(|| format!("loading test images from {}", dir.display()))
        .map_err(data)?;
    match split.pad_to {
        Some((w, h)) => test.pad(w, h).context("padding test images").map_err(data),
        None => Ok(test),
    }
}

fn load_genome(path: &Path) -> Result<Genome, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data)?;
    genome::deserialize(&bytes)
        .with_context(|| format!("decoding {}", path.display()))
        .map_err(data)
}

fn write_output(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => std::fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(data),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn search(a: SearchArgs) -> Outcome {
    let mut run = RunConfig::load(a.data.config.as_deref()).map_err(usage)?;
    let s = &mut run.search;
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.max_evals {
        s.max_evaluations = v;
    }
    if let Some(v) = a.population {
        s.population_size = v;
    }
    if let Some(v) = a.epochs {
        s.train.epochs = v;
    }
    if let Some(v) = flag(a.node_ops, a.no_node_ops) {
        s.operators.node_ops_enabled = v;
    }
    if let Some(v) = flag(a.pooling, a.no_pooling) {
        s.operators.pooling_enabled = v;
    }
    if a.train_subset.is_some() {
        run.split.train_subset = a.train_subset;
    }
    run.search.validate().context("invalid configuration").map_err(usage)?;
    if a.dump_config {
        print!("{}", run.to_toml());
        return Ok(());
    }

    let (full, parts) = load_split(&a.data.data_dir, &run.split)?;
    let master = if a.resume {
        let m = Master::load(&a.out)
            .with_context(|| format!("resuming from {}", a.out.display()))
            .map_err(data)?;
        if m.config() != &run.search {
            log::warn!("continuing with the configuration stored in the checkpoint");
        }
        m
    } else {
        Master::new(run.search.clone(), parts.train.dims(), parts.train.classes).map_err(|e| usage(e.into()))?
    };
    if master.input_dims() != parts.train.dims() {
        return Err(data(anyhow!("checkpoint expects {:?} images", master.input_dims())));
    }
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(data)?;
    log::info!(
        "search: {} evaluations, population {}, {} training and {} validation images",
        master.config().max_evaluations,
        master.config().population_size,
        parts.train.len(),
        parts.validation.len()
    );

    let master = match &a.serve {
        Some(addr) => {
            let listener = TcpListener::bind(addr)
                .with_context(|| format!("binding {addr}"))
                .map_err(protocol)?;
            log::info!("serving on {}", listener.local_addr().map_err(|e| protocol(e.into()))?);
            let shared = Arc::new(Mutex::new(master));
            let options = ServerOptions {
                fingerprint: full.fingerprint(),
                split: run.split.clone(),
                checkpoint: Some(a.out.clone()),
                retry_ms: 500,
            };
            serve(listener, Arc::clone(&shared), options).map_err(|e| protocol(e.into()))?;
            let m = shared.lock().expect("master lock");
            m.clone()
        }
        None => {
            let shared = Mutex::new(master);
            run_local(&shared, &parts, a.workers, Some(&a.out)).map_err(|e| protocol(e.into()))?;
            shared.into_inner().expect("master lock")
        }
    };
    match master.best() {
        Some(b) => println!(
            "best fitness {} (generation {}, {} nodes) after {} evaluations; results in {}",
            b.fitness,
            b.generation_id,
            b.enabled_node_count(),
            master.evaluations(),
            a.out.display()
        ),
        None => println!("no genome was evaluated"),
    }
    Ok(())
}

fn worker(a: WorkerArgs) -> Outcome {
    let full = load_full(&a.data_dir)?;
    let mut options = WorkerOptions {
        epochs: a.epochs,
        max_retries: a.max_retries,
        ..WorkerOptions::default()
    };
    if let Some(id) = a.id {
        options.worker_id = id;
    }
    let summary = run_worker(&a.connect, &full, &options).map_err(|e| protocol(e.into()))?;
    println!(
        "evaluated {} genomes ({} reconnects)",
        summary.evaluated, summary.reconnects
    );
    Ok(())
}

fn train_config(run: &RunConfig, epochs: Option<usize>) -> Result<TrainConfig, Failure> {
    let mut config = run.search.train.clone();
    if let Some(e) = epochs {
        config.epochs = e;
    }
    config
        .validate()
        .context("invalid training configuration")
        .map_err(usage)?;
    Ok(config)
}

fn train_one(a: TrainArgs) -> Outcome {
    let run = RunConfig::load(a.data.config.as_deref()).map_err(usage)?;
    let config = train_config(&run, a.epochs)?;
    let (_, parts) = load_split(&a.data.data_dir, &run.split)?;
    let start = match &a.genome {
        Some(p) => load_genome(p)?,
        None => Genome::minimal(parts.train.dims(), parts.train.classes),
    };
    let outcome = train(&start, &parts.train, &parts.validation, &config, a.init.into(), a.seed)
        .context("training")
        .map_err(data)?;
    print!("{}", epoch_log_csv(&outcome.log));
    eprintln!(
        "validation: cross-entropy {:.4}, accuracy {:.4}{}",
        outcome.validation.loss,
        outcome.validation.accuracy(),
        if outcome.diverged { " (diverged)" } else { "" }
    );
    if let Some(p) = &a.out {
        std::fs::write(p, genome::serialize(&outcome.genome))
            .with_context(|| format!("writing {}", p.display()))
            .map_err(data)?;
    }
    Ok(())
}

fn retrain(a: RetrainArgs) -> Outcome {
    let run = RunConfig::load(a.data.config.as_deref()).map_err(usage)?;
    let config = train_config(&run, a.epochs)?;
    let genome = load_genome(&a.genome)?;
    let (_, parts) = load_split(&a.data.data_dir, &run.split)?;
    let test = load_test(&a.data.data_dir, &run.split)?;
    let init: InitStrategy = a.init.into();
    let label = match a.init {
        Init::He => "he",
        Init::Epigenetic => "epigenetic",
    };
    let mut csv = format!("{RETRAIN_HEADER}\n");
    for rep in 0..a.reps {
        let seed = mix_seed(a.seed, rep as u64);
        let outcome = train(&genome, &parts.train, &parts.validation, &config, init, seed)
            .context("retraining")
            .map_err(data)?;
        let mut net = Phenotype::<f32>::compile(&outcome.genome, config.net(), seed)
            .context("compiling the retrained genome")
            .map_err(data)?;
        let t = evaluate(&mut net, &test, config.eval_batch_size)
            .context("testing")
            .map_err(data)?;
        let v = &outcome.validation;
        let _ = writeln!(
            csv,
            "{rep},{label},{},{},{},{}",
            v.loss,
            t.loss,
            v.accuracy(),
            t.accuracy()
        );
        log::info!(
            "run {rep}: validation accuracy {:.4}, test accuracy {:.4}",
            v.accuracy(),
            t.accuracy()
        );
    }
    write_output(a.out.as_deref(), &csv)
}

fn export(a: ExportArgs) -> Outcome {
    let g = load_genome(&a.genome)?;
    write_output(a.out.as_deref(), &genome::export_dot(&g))
}

fn stats(a: StatsArgs) -> Outcome {
    let master = if a.checkpoint.is_dir() {
        Master::load(&a.checkpoint)
    } else {
        std::fs::read(&a.checkpoint)
            .map_err(Into::into)
            .and_then(|b| Master::resume(&b))
    }
    .with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))
    .map_err(data)?;
    let text = match a.table {
        Table::Operators => master.snapshot_stats().0,
        Table::Progress => master.snapshot_stats().1,
        Table::Population => {
            let mut s = format!("{POPULATION_HEADER}\n");
            for (rank, g) in master.population().members().iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{rank},{},{},{},{},{},{},{}",
                    g.generation_id,
                    g.generated_by,
                    g.fitness,
                    g.enabled_node_count(),
                    g.enabled_edge_count(EdgeKind::Convolutional),
                    g.enabled_edge_count(EdgeKind::Pooling),
                    g.weight_count()
                );
            }
            s
        }
    };
    print!("{text}");
    Ok(())
}
