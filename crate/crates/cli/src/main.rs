use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use delay_snn::bench::{bench, stats_table, BenchConfig};
use delay_snn::config::{Preset, RunConfig};
use delay_snn::data::{make_interval_task, read_event_file, write_event_file, BinningConfig, SplitKind};
use delay_snn::network::{load_model, save_model, LoadOptions, NetworkModel};
use delay_snn::recurrent::KernelKind;
use delay_snn::train::{evaluate, grad_check, train, two_phase, Ablation, Dataset, DelaySummary, GradCheckConfig};
use delay_snn::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "engine", version, about = "Recurrent spiking networks with learnable delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it together with a JSON report.
    Train(TrainArgs),
    /// Accuracy and confusion counts of a saved model on an event file.
    Eval(EvalArgs),
    /// Time dense against conv recurrence in eval mode.
    Bench(BenchArgs),
    /// Per-layer delay statistics of a saved model.
    Stats {
        #[arg(long)]
        model: PathBuf,
    },
    /// Generate a synthetic interval-discrimination split.
    GenData(GenArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Shd,
    Ssc,
    Interval,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum AblationArg {
    Learnable,
    FixedUnit,
    FixedValue,
    /// Learn, then retrain with delays fixed at the mean of the learned ones.
    FixedMean,
    /// Learn, then retrain with delays fixed at the median of the learned ones.
    FixedMedian,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Dense,
    Conv,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Dense => KernelKind::Dense,
            KernelArg::Conv => KernelKind::Conv,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "interval")]
    preset: PresetArg,
    #[arg(long, value_enum, default_value = "learnable")]
    ablation: AblationArg,
    /// Delay used by `--ablation fixed-value`.
    #[arg(long)]
    fixed_value: Option<f64>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long, default_value = "model.dsnn")]
    out: PathBuf,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    time_steps: usize,
    /// Raw channels per input channel; inferred from the model by default.
    #[arg(long)]
    bin_factor: Option<usize>,
    #[arg(long)]
    binarize: bool,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    neurons: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 100)]
    time_steps: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 3)]
    kernel_size: usize,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "interval")]
    kind: String,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 50)]
    time_steps: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    lag_a: usize,
    #[arg(long, default_value_t = 12)]
    lag_b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 8)]
    neurons: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 20)]
    time_steps: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    #[arg(long, value_enum, default_value = "conv")]
    kernel: KernelArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-3)]
    delay_tolerance: f64,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParam { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn resolve_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::preset(match args.preset {
            PresetArg::Shd => Preset::Shd,
            PresetArg::Ssc => Preset::Ssc,
            PresetArg::Interval => Preset::Interval,
        }),
    };
    if args.train.is_some() {
        cfg.data.synthetic = None;
        cfg.data.train.clone_from(&args.train);
        cfg.data.valid.clone_from(&args.valid);
        cfg.data.test.clone_from(&args.test);
    }
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.training.batch_size = b;
    }
    if let Some(s) = args.seed {
        cfg.training.seed = s;
        cfg.model_seed = s;
    }
    if let Some(n) = args.neurons {
        for l in &mut cfg.network.layers {
            l.neurons = n;
        }
    }
    if let Some(m) = args.layers {
        let template = cfg.network.layers[0].clone();
        cfg.network.layers = vec![template; m];
    }
    if let Some(k) = args.kernel {
        for l in &mut cfg.network.layers {
            l.kernel = k.into();
        }
    }
    cfg.training.ablation = match args.ablation {
        AblationArg::Learnable | AblationArg::FixedMean | AblationArg::FixedMedian => Ablation::Learnable,
        AblationArg::FixedUnit => Ablation::FixedUnit,
        AblationArg::FixedValue => Ablation::FixedValue {
            value: args
                .fixed_value
                .ok_or_else(|| Failure::Usage("--ablation fixed-value requires --fixed-value".into()))?,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let cfg = resolve_config(&args)?;
    if args.dump_config {
        println!("{}", cfg.to_json()?);
        return Ok(());
    }
    let splits = cfg.load_splits()?;
    let train_set = splits
        .train
        .ok_or_else(|| Failure::Usage("no training data: pass --train or use a synthetic preset".into()))?;
    let summary = match args.ablation {
        AblationArg::FixedMean => Some(DelaySummary::Mean),
        AblationArg::FixedMedian => Some(DelaySummary::Median),
        _ => None,
    };
    let echo = serde_json::to_value(&cfg)?;
    if let Some(summary) = summary {
        let mut report = two_phase(
            &cfg.network,
            cfg.model_seed,
            &train_set,
            splits.valid.as_ref(),
            splits.test.as_ref(),
            &cfg.training,
            summary,
        )?;
        report.learnable.config = echo.clone();
        report.fixed.config = echo;
        fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
        println!(
            "learnable test accuracy {}; fixed at {:.2}: {}",
            fmt_acc(report.learnable.test_accuracy()),
            report.fixed_value,
            fmt_acc(report.fixed.test_accuracy())
        );
        return Ok(());
    }
    let mut model = NetworkModel::new(cfg.network.clone(), cfg.model_seed)?;
    let mut report = train(
        &mut model,
        &train_set,
        splits.valid.as_ref(),
        splits.test.as_ref(),
        &cfg.training,
    )?;
    report.config = echo;
    save_model(&args.out, &model)?;
    fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "after {} epochs: loss {:.4} train acc {:.3}",
            last.epoch + 1,
            last.train_loss,
            last.train_accuracy
        );
    }
    println!("test accuracy {}", fmt_acc(report.test_accuracy()));
    Ok(())
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let model = load_model(&args.model, LoadOptions { round_delays: true })?;
    let split = read_event_file(&args.data, SplitKind::Test)?;
    let in_ch = model.config.input_channels;
    let bin_factor = match args.bin_factor {
        Some(f) => f,
        None if split.channels as usize % in_ch == 0 => split.channels as usize / in_ch,
        None => {
            return Err(Failure::Runtime(format!(
                "data has {} channels, model expects a divisor-compatible {in_ch}",
                split.channels
            )))
        }
    };
    let data = Dataset::from_split(&split, &BinningConfig::new(args.time_steps, bin_factor, args.binarize))?;
    let result = evaluate(&model, &data, args.batch_size)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> CmdResult {
    let cfg = BenchConfig {
        neurons: args.neurons,
        layers: args.layers,
        time_steps: args.time_steps,
        batch: args.batch,
        kernel_size: args.kernel_size,
        repetitions: args.repetitions,
        seed: args.seed,
        ..BenchConfig::default()
    };
    let report = bench(&cfg)?;
    print!("{}", report.render());
    if let Some(path) = args.json {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_stats(model: &Path) -> CmdResult {
    let model = load_model(model, LoadOptions::default())?;
    print!("{}", stats_table(&model)?);
    Ok(())
}

fn cmd_gen(args: GenArgs) -> CmdResult {
    if args.kind != "interval" {
        return Err(Failure::Usage(format!("unknown data kind `{}`", args.kind)));
    }
    let split = make_interval_task(
        args.samples,
        args.time_steps,
        args.channels,
        args.lag_a,
        args.lag_b,
        args.seed,
        SplitKind::Train,
    )?;
    write_event_file(&args.out, &split)?;
    let counts = split.class_counts();
    println!("wrote {} samples (class counts {:?}) to {}", split.len(), counts, args.out.display());
    Ok(())
}

fn cmd_grad(args: GradArgs) -> CmdResult {
    let cfg = GradCheckConfig {
        neurons: args.neurons,
        layers: args.layers,
        time: args.time_steps,
        batch: args.batch,
        sigma: args.sigma,
        kernel: args.kernel.into(),
        seed: args.seed,
        tol_weights: args.tolerance,
        tol_delays: args.delay_tolerance,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&cfg)?;
    println!("group\tchecked\texcluded\tmax rel. error\ttolerance\tstatus");
    for g in &report.groups {
        let status = match (&g.skipped, g.passed()) {
            (Some(reason), _) => format!("skipped ({reason})"),
            (None, true) => "ok".into(),
            (None, false) => "FAIL".into(),
        };
        println!(
            "{:?}\t{}\t{}\t{:.2e}\t{:.0e}\t{}",
            g.group, g.checked, g.excluded, g.max_rel_error, g.tolerance, status
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check("gradient check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Stats { model } => cmd_stats(&model),
        Command::GenData(a) => cmd_gen(a),
        Command::GradCheck(a) => cmd_grad(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}
