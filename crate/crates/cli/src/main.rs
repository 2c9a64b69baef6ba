use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use c3sl::accounting;
use c3sl::data::{idx, BlobSpec, Dataset};
use c3sl::hrr::{measure_retrieval, KeyFile, KeyKind, KeySet, RetrievalStats};
use c3sl::net::{checkpoint, AdamConfig, Mlp};
use c3sl::pipeline::metrics::{write_json, write_steps_csv};
use c3sl::pipeline::{train, Compression, RunOptions, Tally, TrainConfig};
use c3sl::transport::frame::PROTOCOL_VERSION;
use c3sl::transport::message::ErrorCode;
use c3sl::transport::{self, CloudConfig, CloudProfile, ProtocolError};
use c3sl::{Error, Exec};

const EXIT_USAGE: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "c3sl", version, about = "Batch-wise compressed split learning")]
struct Cli {
    /// Seed for keys, initial weights, data order and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory (output file for keygen).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Format of bench and report tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[arg(long, global = true)]
    quiet: bool,

    /// Run every kernel on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a key set and write it in the key file format.
    Keygen {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        dim: u32,
        #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
        count: u16,
    },
    /// Monte-Carlo retrieval quality for a list of ratios.
    Bench {
        #[arg(long, default_value_t = 2048, value_parser = clap::value_parser!(u32).range(1..))]
        dim: u32,
        /// Comma-separated compression ratios.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16", value_parser = clap::value_parser!(u16).range(1..))]
        ratio: Vec<u16>,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
        trials: u32,
        /// Use coordinate deltas as keys.
        #[arg(long)]
        delta_keys: bool,
    },
    /// Train both halves in one process.
    Train(TrainArgs),
    /// Serve the cloud half over TCP.
    ServeCloud(CloudArgs),
    /// Train the edge half against a remote cloud.
    RunEdge {
        #[arg(long)]
        connect: String,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Parameter, FLOP and payload counts for both codecs on the reference models.
    Report {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16", value_parser = clap::value_parser!(u64).range(1..))]
        ratio: Vec<u64>,
    },
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Cut-layer width `D`.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Comma-separated hidden widths of the cloud half.
    #[arg(long, value_delimiter = ',', default_value = "128")]
    cloud_hidden: Vec<usize>,
    /// Coordinate-delta keys instead of Gaussian ones.
    #[arg(long, conflicts_with = "vanilla")]
    delta_keys: bool,
    /// No codec at the cut (ratio must be 1).
    #[arg(long)]
    vanilla: bool,
    /// Write zero wall-clock times so reruns produce identical files.
    #[arg(long)]
    no_timing: bool,
}

impl ModelArgs {
    fn compression(&self) -> Compression {
        if self.vanilla {
            Compression::None
        } else if self.delta_keys {
            Compression::Hrr(KeyKind::Delta)
        } else {
            Compression::Hrr(KeyKind::Gaussian)
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..Default::default() }
    }
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    ratio: u16,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..))]
    batch: u32,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// `blobs` or `idx:IMAGES,LABELS`.
    #[arg(long, default_value = "blobs")]
    dataset: String,
    /// Comma-separated hidden widths of the edge half.
    #[arg(long, value_delimiter = ',', default_value = "128")]
    edge_hidden: Vec<usize>,
    /// Reject full batches the ratio does not divide.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    blobs: BlobArgs,
}

#[derive(Args, Debug, Clone)]
struct BlobArgs {
    /// Number of classes (synthetic data).
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Input width (synthetic data).
    #[arg(long, default_value_t = 64)]
    input_dim: usize,
    #[arg(long, default_value_t = 2000)]
    train_size: usize,
    #[arg(long, default_value_t = 500)]
    test_size: usize,
}

#[derive(Args, Debug, Clone)]
struct CloudArgs {
    #[arg(long)]
    listen: String,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Sessions to serve before exiting.
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    #[arg(long, default_value_t = PROTOCOL_VERSION, hide = true)]
    protocol_version: u16,
    #[command(flatten)]
    model: ModelArgs,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Protocol(ProtocolError::Remote { code, .. }) if *code == ErrorCode::Numeric as u16 => EXIT_NUMERIC,
            Error::Protocol(_) => EXIT_PROTOCOL,
            Error::Io(_) | Error::Format(_) => EXIT_IO,
            Error::Contract(_) | Error::Internal(_) => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

struct Ctx {
    seed: u64,
    out: Option<PathBuf>,
    format: Format,
    quiet: bool,
    exec: Exec,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf, Failure> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let ctx = Ctx { seed: cli.seed, out: cli.out, format: cli.format, quiet: cli.quiet, exec };
    let result = match cli.command {
        Command::Keygen { dim, count } => keygen(&ctx, dim as usize, count as usize),
        Command::Bench { dim, ratio, trials, delta_keys } => bench(&ctx, dim as usize, &ratio, trials as usize, delta_keys),
        Command::Train(args) => run_train(&ctx, &args),
        Command::ServeCloud(args) => serve_cloud(&ctx, &args),
        Command::RunEdge { connect, train } => run_edge(&ctx, &connect, &train),
        Command::Report { ratio } => report(&ctx, &ratio),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn keygen(ctx: &Ctx, dim: usize, count: usize) -> CmdResult {
    let keys = KeySet::generate(dim, count, ctx.seed)?;
    let path = ctx.out.clone().unwrap_or_else(|| PathBuf::from("keys.c3ks"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(&path)?);
    KeyFile::from_keys(&keys)?.write_to(&mut w)?;
    w.flush()?;
    println!("params: {}", keys.param_count());
    Ok(())
}

fn bench(ctx: &Ctx, dim: usize, ratios: &[u16], trials: usize, delta: bool) -> CmdResult {
    let kind = if delta { KeyKind::Delta } else { KeyKind::Gaussian };
    let rows = ratios
        .iter()
        .map(|&r| measure_retrieval(dim, r as usize, trials, ctx.seed, kind, ctx.exec))
        .collect::<Result<Vec<RetrievalStats>, Error>>()?;
    let dir = ctx.out_dir()?;
    match ctx.format {
        Format::Csv => write_bench_csv(&dir.join("bench.csv"), &rows)?,
        Format::Json => write_json(&dir.join("bench.json"), &rows)?,
    }
    ctx.say(format!("{:>5} {:>12} {:>12} {:>14} {:>14}", "R", "cos_mean", "cos_std", "signal_energy", "cross_energy"));
    for s in &rows {
        ctx.say(format!(
            "{:>5} {:>12.6} {:>12.6} {:>14.6} {:>14.6}",
            s.ratio, s.mean_cosine, s.std_cosine, s.mean_signal_energy, s.mean_cross_energy
        ));
    }
    Ok(())
}

const BENCH_CSV_HEADER: &str =
    "ratio,dim,trials,mean_cosine,std_cosine,mean_signal_energy,mean_cross_energy,mean_cross_overlap";

fn write_bench_csv(path: &Path, rows: &[RetrievalStats]) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for s in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.ratio,
            s.dim,
            s.trials,
            s.mean_cosine,
            s.std_cosine,
            s.mean_signal_energy,
            s.mean_cross_energy,
            s.mean_cross_overlap
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Training and test sets; IDX data keeps its last fifth for testing.
fn load_dataset(spec: &str, blobs: &BlobArgs, seed: u64) -> Result<(Dataset, Dataset, String), Failure> {
    if spec == "blobs" {
        let blob = BlobSpec {
            num_classes: blobs.classes,
            input_dim: blobs.input_dim,
            train: blobs.train_size,
            test: blobs.test_size,
            ..Default::default()
        };
        let (train, test) = blob.generate(seed)?;
        return Ok((train, test, "blobs".into()));
    }
    let Some(paths) = spec.strip_prefix("idx:") else {
        return Err(Failure { code: EXIT_USAGE, message: format!("unknown dataset {spec:?}") });
    };
    let Some((images, labels)) = paths.split_once(',') else {
        return Err(Failure { code: EXIT_USAGE, message: "expected idx:IMAGES,LABELS".into() });
    };
    let (train, test) = idx::load(Path::new(images), Path::new(labels))?.split_tail(0.2)?;
    Ok((train, test, spec.to_string()))
}

fn train_config(ctx: &Ctx, args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        ratio: args.ratio as usize,
        batch_size: args.batch as usize,
        cut_dim: args.model.dim as usize,
        seed: ctx.seed,
        epochs: args.epochs,
        adam: args.model.adam(),
        strict_grouping: args.strict,
        compression: args.model.compression(),
        edge_hidden: args.edge_hidden.clone(),
        cloud_hidden: args.model.cloud_hidden.clone(),
        ..Default::default()
    }
}

fn save_model(path: &Path, model: &Mlp) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    checkpoint::write(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run_train(ctx: &Ctx, args: &TrainArgs) -> CmdResult {
    let config = train_config(ctx, args);
    config.validate()?;
    let (train_set, test_set, name) = load_dataset(&args.dataset, &args.blobs, ctx.seed)?;
    let opts = RunOptions { exec: ctx.exec, timing: !args.model.no_timing };
    let out = train(&config, &train_set, Some(&test_set), &name, opts)?;
    let dir = ctx.out_dir()?;
    write_steps_csv(&dir.join("steps.csv"), &out.steps)?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    save_model(&dir.join("edge.c3md"), &out.model.edge)?;
    save_model(&dir.join("cloud.c3md"), &out.model.cloud)?;
    let s = &out.summary;
    ctx.say(format!("steps: {}", s.steps));
    ctx.say(format!("final loss: {:.6}", s.final_loss));
    if let Some(acc) = s.final_accuracy {
        ctx.say(format!("test accuracy: {acc:.4}"));
    }
    ctx.say(format!("bytes: {} forward, {} backward", s.forward_bytes, s.backward_bytes));
    ctx.say(format!("feature compression: {:.1}x", s.compression_ratio));
    Ok(())
}

fn run_edge(ctx: &Ctx, addr: &str, args: &TrainArgs) -> CmdResult {
    let config = train_config(ctx, args);
    config.validate()?;
    let (train_set, _, name) = load_dataset(&args.dataset, &args.blobs, ctx.seed)?;
    let opts = RunOptions { exec: ctx.exec, timing: !args.model.no_timing };
    let mut conn = transport::connect_edge(addr)?;
    let mut tally = Tally::default();
    let result = transport::run_edge(&config, &train_set, &mut conn, opts, &mut tally);
    let dir = ctx.out_dir()?;
    // Partial metrics are kept even when the session fails.
    write_steps_csv(&dir.join("steps.csv"), &tally.steps)?;
    let outcome = result?;
    let summary = tally.summary(&config, &name, None);
    write_json(&dir.join("summary.json"), &summary)?;
    save_model(&dir.join("edge.c3md"), &outcome.edge)?;
    ctx.say(format!("steps: {}", summary.steps));
    ctx.say(format!("final loss: {:.6}", summary.final_loss));
    ctx.say(format!("bytes on the wire: {} sent, {} received", outcome.bytes_sent, outcome.bytes_received));
    ctx.say(format!("feature compression: {:.1}x", summary.compression_ratio));
    Ok(())
}

fn serve_cloud(ctx: &Ctx, args: &CloudArgs) -> CmdResult {
    let profile = CloudProfile {
        cut_dim: args.model.dim as usize,
        cloud_hidden: args.model.cloud_hidden.clone(),
        num_classes: args.classes,
        seed: ctx.seed,
        adam: args.model.adam(),
        compression: args.model.compression(),
    };
    let mut config = CloudConfig::new(profile);
    config.frames.version = args.protocol_version;
    config.exec = ctx.exec;
    config.timing = !args.model.no_timing;
    let listener = TcpListener::bind(&args.listen)?;
    ctx.say(format!("listening on {}", listener.local_addr()?));
    let dir = ctx.out_dir()?;
    let mut failure = None;
    let mut index = 0;
    transport::serve_cloud(&listener, &config, args.sessions, |outcome, tally| {
        let suffix = if args.sessions == 1 { String::new() } else { format!("_{index}") };
        index += 1;
        let saved = write_steps_csv(&dir.join(format!("cloud_steps{suffix}.csv")), &tally.steps).map_err(Failure::from);
        let result = outcome.map_err(Failure::from).and_then(|o| {
            saved?;
            save_model(&dir.join(format!("cloud{suffix}.c3md")), &o.cloud)?;
            if !ctx.quiet {
                println!("session done: {} steps, {} bytes received", tally.steps.len(), o.bytes_received);
            }
            Ok(())
        });
        match result {
            Ok(()) => true,
            Err(f) => {
                failure = Some(f);
                false
            }
        }
    })?;
    failure.map_or(Ok(()), Err)
}

fn report(ctx: &Ctx, ratios: &[u64]) -> CmdResult {
    let reports = accounting::grid(ratios)?;
    let dir = ctx.out_dir()?;
    write_json(&dir.join("report.json"), &reports)?;
    if ctx.format == Format::Csv {
        let mut w = BufWriter::new(File::create(dir.join("report.csv"))?);
        writeln!(w, "method,model,ratio,params,flops,forward_bytes,backward_bytes,label_bytes,floored")?;
        for r in &reports {
            let method = r.method.name();
            writeln!(
                w,
                "{method},{},{},{},{},{},{},{},{}",
                r.model, r.ratio, r.params, r.flops, r.forward_bytes, r.backward_bytes, r.label_bytes, r.floored
            )?;
        }
        w.flush()?;
    }
    if !ctx.quiet {
        print!("{}", accounting::format_table(&reports));
    }
    Ok(())
}
