use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use declip::experiment::{restore, run_experiment, ExperimentSpec, Method, MethodSpec};
use declip::operators::DEFAULT_EPSILON;
use declip::wav::{parse_wav, write_wav, SampleFormat};
use declip::{clip_mask, delta_sdr, hard_clip, threshold_for_input_sdr, Error, Signal};

#[derive(Parser)]
#[command(name = "declip", version, about = "Restore hard-clipped mono audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore a clipped recording.
    Declip(DeclipArgs),
    /// Hard-clip a recording.
    Clip(ClipArgs),
    /// Write a synthetic test corpus.
    Synth(SynthArgs),
    /// Run an experiment sweep described by a JSON spec.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pwl1,
    AppladeOracle,
    AppladeDnn,
    AppladeIdentity,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Float32,
    Pcm16,
}

impl From<FormatArg> for SampleFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Float32 => SampleFormat::Float32,
            FormatArg::Pcm16 => SampleFormat::Pcm16,
        }
    }
}

#[derive(Args)]
#[group(multiple = false)]
struct Level {
    /// Clipping threshold. For `declip`, the input is the clipped
    /// observation; without --tau or --input-sdr its peak is used.
    #[arg(long)]
    tau: Option<f64>,
    /// Clip the input at the threshold giving this input SDR (dB). For
    /// `declip`, the input is then the clean reference.
    #[arg(long = "input-sdr", value_name = "DB")]
    input_sdr: Option<f64>,
}

#[derive(Args)]
struct DeclipArgs {
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    #[arg(long = "out", value_name = "WAV")]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "pwl1")]
    method: MethodArg,
    #[command(flatten)]
    level: Level,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Thresholding strength on the base-window power scale.
    #[arg(long, conflicts_with = "auto_lambda")]
    lambda: Option<f64>,
    /// lambda = 30 p (the default for the applade methods).
    #[arg(long = "auto-lambda")]
    auto_lambda: bool,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Penalty for pwl1; soft thresholds are w / rho.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Weight file for applade-dnn.
    #[arg(long, value_name = "APLW")]
    model: Option<PathBuf>,
    /// Clean reference, for the oracle and for SDR reporting.
    #[arg(long, value_name = "WAV")]
    truth: Option<PathBuf>,
    /// Per-iteration diagnostics as CSV.
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "float32")]
    format: FormatArg,
}

#[derive(Args)]
struct ClipArgs {
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    #[arg(long = "out", value_name = "WAV")]
    output: PathBuf,
    #[command(flatten)]
    level: Level,
    #[arg(long, value_enum, default_value = "float32")]
    format: FormatArg,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = declip::corpus::DEFAULT_LENGTH)]
    length: usize,
    #[arg(long = "sample-rate", default_value_t = declip::corpus::DEFAULT_SAMPLE_RATE)]
    sample_rate: u32,
    #[arg(long, value_enum, default_value = "float32")]
    format: FormatArg,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_name = "JSON")]
    spec: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

const EXIT_ARGS: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Model(_) | Error::Json(_) => EXIT_IO,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_ARGS,
    }
}

fn read(path: &Path) -> declip::Result<Signal> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    // name the file in parse errors
    parse_wav(&bytes).map(|w| w.signal).map_err(|e| match e {
        Error::Format { offset, msg, .. } => Error::Format {
            what: "WAV file",
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Clips `x` per the level arguments; `None` when neither is given.
fn clip_by_level(x: &Signal, level: &Level) -> declip::Result<Option<(f64, Signal)>> {
    let tau = match (level.tau, level.input_sdr) {
        (Some(t), _) => t,
        (None, Some(db)) => threshold_for_input_sdr(x, db)?,
        (None, None) => return Ok(None),
    };
    Ok(Some((tau, hard_clip(x, tau)?)))
}

fn run_declip(a: &DeclipArgs) -> declip::Result<()> {
    let input = read(&a.input)?;
    let mut truth = a.truth.as_deref().map(read).transpose()?;
    let (tau, y) = match (a.level.tau, a.level.input_sdr) {
        (Some(t), _) => (t, input),
        (None, Some(_)) => {
            let (tau, y) = clip_by_level(&input, &a.level)?.expect("level given");
            truth.get_or_insert(input);
            (tau, y)
        }
        (None, None) => (input.peak(), input),
    };
    if a.model.is_some() && !matches!(a.method, MethodArg::AppladeDnn) {
        return Err(Error::InvalidArgument(
            "--model only applies to applade-dnn".into(),
        ));
    }
    let lambda = if a.auto_lambda { None } else { a.lambda };
    let spec = match a.method {
        MethodArg::Pwl1 => MethodSpec::Pwl1 { rho: a.rho },
        MethodArg::AppladeOracle => MethodSpec::AppladeOracle {
            lambda,
            epsilon: a.epsilon,
        },
        MethodArg::AppladeIdentity => MethodSpec::AppladeIdentity {
            lambda,
            epsilon: a.epsilon,
        },
        MethodArg::AppladeDnn => MethodSpec::AppladeDnn {
            model: a
                .model
                .clone()
                .ok_or_else(|| Error::InvalidArgument("applade-dnn needs --model".into()))?,
            lambda,
            epsilon: a.epsilon,
        },
    };
    let method: Method = spec.resolve()?;
    let mask = clip_mask(&y, tau)?;
    let result = restore(&y, tau, &method, a.iters, truth.as_ref());
    let restoration = match result {
        Ok(r) => r,
        Err(Error::Divergence {
            iteration,
            reason,
            trace,
        }) => {
            if let Some(path) = &a.trace {
                write_trace(path, &trace)?;
            }
            return Err(Error::Divergence {
                iteration,
                reason,
                trace,
            });
        }
        Err(e) => return Err(e),
    };
    write_wav(&a.output, &restoration.output, a.format.into())?;
    if let Some(path) = &a.trace {
        write_trace(path, &restoration.trace)?;
    }
    let mut line = format!(
        "{}: tau={tau:.6} p={:.4} iterations={} time/iter={:.4}s",
        spec.name(),
        mask.clip_ratio(),
        restoration.trace.iterations,
        restoration.trace.time_per_iteration(),
    );
    if let Some(l) = restoration.lambda {
        line += &format!(" lambda={l:.4}");
    }
    if let Some(t) = &truth {
        line += &format!(" delta_sdr={:.2}dB", delta_sdr(t, &restoration.output, &y)?);
    }
    println!("{line}");
    Ok(())
}

fn write_trace(path: &Path, trace: &declip::IterationTrace) -> declip::Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    for r in &trace.records {
        w.serialize(r).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

fn run_clip(a: &ClipArgs) -> declip::Result<()> {
    let x = read(&a.input)?;
    let (tau, y) = clip_by_level(&x, &a.level)?
        .ok_or_else(|| Error::InvalidArgument("clip needs --tau or --input-sdr".into()))?;
    write_wav(&a.output, &y, a.format.into())?;
    println!(
        "tau={tau:.6} p={:.4} input_sdr={:.2}dB",
        clip_mask(&y, tau)?.clip_ratio(),
        declip::sdr(&x, &y)?
    );
    Ok(())
}

fn run_synth(a: &SynthArgs) -> declip::Result<()> {
    if a.count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    for i in 0..a.count {
        let s = declip::corpus::synth_signal(a.seed, i as u64, a.length, a.sample_rate)?;
        let path = a.out_dir.join(format!("synth-{}-{i:04}.wav", a.seed));
        write_wav(&path, &s, a.format.into())?;
    }
    println!("wrote {} signals to {}", a.count, a.out_dir.display());
    Ok(())
}

fn run_bench(a: &BenchArgs) -> declip::Result<()> {
    let spec = ExperimentSpec::read(&a.spec)?;
    let report = run_experiment(&spec, &a.out_dir)?;
    println!(
        "{:<18} {:>8} {:>8} {:>10} {:>12}",
        "method", "level", "failed", "median dB", "s/iter"
    );
    for r in &report.summary.rows {
        let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        println!(
            "{:<18} {:>8} {:>8} {:>10} {:>12}",
            r.method,
            r.input_sdr_db,
            r.failures,
            fmt(r.median_delta_sdr_db, 2),
            fmt(r.median_time_per_iteration_s, 4)
        );
    }
    println!("{}", report.csv_path.display());
    println!("{}", report.summary_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Declip(a) => run_declip(a),
        Command::Clip(a) => run_clip(a),
        Command::Synth(a) => run_synth(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
