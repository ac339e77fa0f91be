//! `gsm`: cost analysis, synthetic data, training, evaluation and gradient
//! checks for gate-shift networks.
//!
//! Exit codes: 0 success, 1 I/O, 2 validation, 3 numerical failure,
//! 4 gradient-check failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsm_core::analysis::{parse_archspec, report};
use gsm_core::backbone::{build_mini_net, MiniGsmNet, NetConfig};
use gsm_core::gradcheck_suite::{render_rows, run_suite, Scope, SuiteConfig};
use gsm_core::synth::{
    generate, read_dataset, write_dataset, Split, SyntheticTask, SyntheticTaskSpec,
};
use gsm_core::trainer::{evaluate, metrics_tsv, train, EvalOptions, FrameOrder, TrainConfig};
use gsm_core::{GateActivation, GateMode, GsmError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_IO: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_GRADCHECK: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "gsm",
    version,
    about = "Gate-shift networks for video action recognition"
)]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Single worker thread; identical arguments give identical outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameter and FLOP report for an architecture spec.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic clip dataset.
    GenData(GenDataArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally with reordered frames.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    spec: PathBuf,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Table,
    Tsv,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value = "direction")]
    task: SyntheticTask,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 6)]
    object_size: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GateChoice {
    LearnedTanh,
    LearnedSigmoid,
    FrozenZero,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Arch {
    Mini,
    Tiny,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON training config; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GateChoice::LearnedTanh)]
    gate: GateChoice,
    #[arg(long, value_enum, default_value_t = Arch::Mini)]
    arch: Arch,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics TSV; defaults to `<out>.metrics.tsv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// natural, reversed, permute:SEED or an explicit list such as permute:0,2,1,3.
    #[arg(long, default_value = "natural")]
    frame_order: FrameOrder,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    split: SplitChoice,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitChoice {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "primitives")]
    scope: Scope,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Random instances per operation.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Scale every backward rule by this factor to exercise the harness.
    #[arg(long, value_name = "SCALE")]
    inject_fault: Option<f64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<GsmError> for Failure {
    fn from(e: GsmError) -> Self {
        let code = match &e {
            GsmError::Io(_) => EXIT_IO,
            GsmError::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = configure_threads(cli.deterministic) {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// One worker under `--deterministic`, otherwise `GSM_THREADS` or the
/// rayon default.
fn configure_threads(deterministic: bool) -> Result<(), Failure> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var("GSM_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Failure {
                        code: EXIT_VALIDATION,
                        message: format!("GSM_THREADS must be a positive integer, got '{v}'"),
                    })?,
            ),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        // Only fails if a global pool already exists, which main never builds.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(cli, a),
    }
}

fn analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| io_failure(&a.spec, e))?;
    let spec = parse_archspec(&text)?;
    let frames = a.frames.unwrap_or(spec.input.frames);
    let r = report(&spec, frames)?;
    match a.format {
        ReportFormat::Table => print!("{}", r.to_table()),
        ReportFormat::Tsv => print!("{}", r.to_tsv()),
    }
    Ok(())
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> Result<(), Failure> {
    let spec = SyntheticTaskSpec {
        task: a.task,
        frames: a.frames,
        size: a.size,
        object_size: a.object_size,
        noise_sigma: a.noise,
        per_class: a.per_class,
        seed: cli.seed,
    };
    let ds = generate(&spec)?;
    write_dataset(&ds, &a.out)?;
    let s = &ds.stats;
    println!(
        "wrote {} samples ({} train, {} test, {} classes) to {}",
        ds.samples.len(),
        ds.train().len(),
        ds.test().len(),
        ds.classes,
        a.out.display()
    );
    println!("mean {:?} std {:?}", s.mean, s.std);
    Ok(())
}

fn train_config(cli: &Cli, a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            serde_json::from_str(&text).map_err(|e| Failure {
                code: EXIT_VALIDATION,
                message: format!("{}: {e}", path.display()),
            })?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = cli.seed;
    cfg.deterministic = cli.deterministic;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup_epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = a.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = a.dropout {
        cfg.dropout_rate = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<(), Failure> {
    let cfg = train_config(cli, a)?;
    let ds = read_dataset(&a.data)?;
    let (frames, h, w) = ds.clip_geometry().ok_or_else(|| Failure {
        code: EXIT_VALIDATION,
        message: format!("{} holds no samples", a.data.display()),
    })?;
    let act = match a.gate {
        GateChoice::LearnedSigmoid => GateActivation::Sigmoid,
        _ => GateActivation::Tanh,
    };
    let mut net_cfg = match a.arch {
        Arch::Mini => NetConfig::mini(frames, ds.classes, act),
        Arch::Tiny => NetConfig::tiny(frames, ds.classes, act),
    };
    net_cfg.height = h;
    net_cfg.width = w;
    let mode = if a.gate == GateChoice::FrozenZero {
        GateMode::ForcedZero
    } else {
        GateMode::Learned
    };
    let mut net: MiniGsmNet<f32> = build_mini_net(net_cfg, cli.seed)?.with_gate_mode(mode);
    net.set_input_stats(&ds.stats);

    let metrics = train(&mut net, &ds, &cfg, |m| {
        eprintln!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  train acc {:.4}  eval acc {:.4}",
            m.epoch, m.lr, m.train_loss, m.train_acc, m.eval_acc
        )
    })?;
    net.save(&a.out)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".metrics.tsv");
        PathBuf::from(p)
    });
    std::fs::write(&metrics_path, metrics_tsv(&metrics))
        .map_err(|e| io_failure(&metrics_path, e))?;
    match metrics.last() {
        Some(m) => println!(
            "final eval accuracy {:.4} after {} epochs",
            m.eval_acc,
            metrics.len()
        ),
        None => println!("no epochs run; checkpoint holds the initialization"),
    }
    println!("checkpoint {}", a.out.display());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<(), Failure> {
    let net = MiniGsmNet::<f32>::load(&a.ckpt)?;
    let ds = read_dataset(&a.data)?;
    if ds.classes != net.config.classes {
        return Err(GsmError::InvalidArgument(format!(
            "dataset has {} classes, checkpoint expects {}",
            ds.classes, net.config.classes
        ))
        .into());
    }
    let split = match a.split {
        SplitChoice::Train => Split::Train,
        SplitChoice::Test => Split::Test,
    };
    let samples = ds.split(split);
    let opts = EvalOptions {
        frame_order: a.frame_order.clone(),
        ..EvalOptions::default()
    };
    let r = evaluate(&net, &samples, &opts)?;
    println!("samples {}", samples.len());
    println!("accuracy {:.6}", r.accuracy);
    for (c, acc) in r.per_class_accuracy.iter().enumerate() {
        println!("class {c} accuracy {acc:.6}");
    }
    Ok(())
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<(), Failure> {
    let cfg = SuiteConfig {
        eps: a.eps,
        tolerance: a.tol,
        instances: a.instances,
        seed: cli.seed,
        fault_scale: a.inject_fault,
    };
    let rows = run_suite(a.scope, &cfg)?;
    print!("{}", render_rows(&rows));
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} (max relative error {:.3e})", r.op, r.max_relative_error))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GRADCHECK,
            message: format!("gradient check failed: {}", failed.join(", ")),
        })
    }
}
