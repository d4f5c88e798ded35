//! Clip/restore sweeps over a corpus with CSV and JSON outputs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{declip_traced, IterationTrace, SolverConfig, DEFAULT_ITERATIONS};
use crate::corpus::{synth_corpus, CorpusConfig};
use crate::denoiser::{identity_estimator, load_unet, oracle_estimator, MagnitudeEstimator};
use crate::error::{Error, Result};
use crate::gabor::GaborConfig;
use crate::operators::{lambda_from_clip_ratio, DEFAULT_EPSILON};
use crate::signal::{
    clip_mask, delta_sdr, hard_clip, peak_normalize, threshold_for_input_sdr, Signal,
};
use crate::wav::{read_wav, write_wav, SampleFormat};

pub const DEFAULT_LEVELS: [f64; 5] = [1.0, 3.0, 5.0, 10.0, 15.0];

/// Gabor geometry used for every restoration: Hann 1024, hop 256, 1024
/// channels. Signals are zero-padded to a multiple of the hop.
pub const WINDOW_LENGTH: usize = 1024;
pub const HOP: usize = 256;
pub const CHANNELS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic {
        seed: u64,
        count: usize,
    },
    /// Every `*.wav` file in the directory, in file-name order.
    WavDir(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodSpec {
    /// The clipped observation itself.
    ClipOnly,
    Pwl1 {
        #[serde(default = "default_rho")]
        rho: f64,
    },
    /// `lambda` defaults to `30 p` when absent.
    AppladeOracle {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    AppladeIdentity {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    AppladeDnn {
        model: PathBuf,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_rho() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_levels() -> Vec<f64> {
    DEFAULT_LEVELS.to_vec()
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::ClipOnly => "clip-only",
            MethodSpec::Pwl1 { .. } => "pwl1",
            MethodSpec::AppladeOracle { .. } => "applade-oracle",
            MethodSpec::AppladeIdentity { .. } => "applade-identity",
            MethodSpec::AppladeDnn { .. } => "applade-dnn",
        }
    }

    /// Loads any model file and fixes the estimator.
    pub fn resolve(&self) -> Result<Method> {
        Ok(match self {
            MethodSpec::ClipOnly => Method::ClipOnly,
            MethodSpec::Pwl1 { rho } => Method::Pwl1 { rho: *rho },
            MethodSpec::AppladeOracle { lambda, epsilon } => Method::Applade {
                estimator: Estimator::Oracle,
                lambda: *lambda,
                epsilon: *epsilon,
            },
            MethodSpec::AppladeIdentity { lambda, epsilon } => Method::Applade {
                estimator: Estimator::Fixed(Arc::new(identity_estimator())),
                lambda: *lambda,
                epsilon: *epsilon,
            },
            MethodSpec::AppladeDnn {
                model,
                lambda,
                epsilon,
            } => Method::Applade {
                estimator: Estimator::Fixed(Arc::new(load_unet(model)?)),
                lambda: *lambda,
                epsilon: *epsilon,
            },
        })
    }
}

#[derive(Clone)]
pub enum Estimator {
    /// `|G x|` of the reference signal; needs the truth at restore time.
    Oracle,
    Fixed(Arc<dyn MagnitudeEstimator>),
}

#[derive(Clone)]
pub enum Method {
    ClipOnly,
    Pwl1 {
        rho: f64,
    },
    Applade {
        estimator: Estimator,
        /// On the base-window scale; `None` selects `30 p`.
        lambda: Option<f64>,
        epsilon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
    /// When set, clipped inputs and restored outputs are written here as
    /// float32 WAV files.
    pub restored: Option<PathBuf>,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            csv: "metrics.csv".into(),
            summary: "summary.json".into(),
            restored: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub corpus: CorpusSource,
    /// Input SDR grid in dB.
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Relative paths are resolved against the output directory.
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument(
                "levels and methods must be non-empty".into(),
            ));
        }
        if let Some(l) = self.levels.iter().find(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "input SDR level {l} is not finite"
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument(
                "iteration count must be at least 1".into(),
            ));
        }
        if let CorpusSource::Synthetic { count: 0, .. } = self.corpus {
            return Err(Error::InvalidArgument(
                "synthetic corpus needs at least one signal".into(),
            ));
        }
        let mut names: Vec<&str> = self.methods.iter().map(MethodSpec::name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "method {} listed twice",
                w[0]
            )));
        }
        Ok(())
    }
}

/// One row of the metrics table; CSV columns follow the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub signal_id: String,
    pub method: String,
    pub input_sdr_db: f64,
    pub tau: Option<f64>,
    pub clip_ratio: Option<f64>,
    /// `inf` when the restoration is exact.
    pub delta_sdr_db: Option<f64>,
    pub iterations: Option<usize>,
    pub time_per_iteration_s: Option<f64>,
    pub total_time_s: Option<f64>,
    /// `ok`, or `error: <message>` for a failed restoration.
    pub status: String,
}

impl MetricRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(
        signal_id: &str,
        method: &str,
        level: f64,
        tau: Option<f64>,
        p: Option<f64>,
        e: &Error,
    ) -> Self {
        MetricRecord {
            signal_id: signal_id.to_string(),
            method: method.to_string(),
            input_sdr_db: level,
            tau,
            clip_ratio: p,
            delta_sdr_db: None,
            iterations: None,
            time_per_iteration_s: None,
            total_time_s: None,
            status: format!("error: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub input_sdr_db: f64,
    pub signals: usize,
    pub failures: usize,
    pub median_delta_sdr_db: Option<f64>,
    pub median_time_per_iteration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn get(&self, method: &str, level: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.input_sdr_db == level)
    }
}

/// Median of the values, averaging the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Per-(method, level) medians over the successful rows.
pub fn summarize(records: &[MetricRecord]) -> Summary {
    let mut groups: BTreeMap<(String, u64), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method.clone(), r.input_sdr_db.to_bits()))
            .or_default()
            .push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((method, level), rs)| {
            let ok: Vec<&&MetricRecord> = rs.iter().filter(|r| r.is_ok()).collect();
            let gains: Vec<f64> = ok.iter().filter_map(|r| r.delta_sdr_db).collect();
            let times: Vec<f64> = ok.iter().filter_map(|r| r.time_per_iteration_s).collect();
            SummaryRow {
                method,
                input_sdr_db: f64::from_bits(level),
                signals: rs.len(),
                failures: rs.len() - ok.len(),
                median_delta_sdr_db: median(&gains),
                median_time_per_iteration_s: median(&times),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.input_sdr_db.total_cmp(&b.input_sdr_db))
    });
    Summary { rows }
}

/// Result of one restoration.
#[derive(Debug, Clone)]
pub struct Restoration {
    pub output: Signal,
    pub trace: IterationTrace,
    pub lambda: Option<f64>,
}

fn pad(x: &Signal, len: usize) -> Result<Signal> {
    let mut v = x.samples().to_vec();
    v.resize(len, 0.0);
    x.with_samples(v)
}

/// Length the solver runs at: a multiple of the hop, at least one window.
pub fn padded_length(len: usize) -> usize {
    len.div_ceil(HOP).max(WINDOW_LENGTH / HOP) * HOP
}

pub fn gabor_for_length(len: usize) -> Result<GaborConfig> {
    GaborConfig::hann(WINDOW_LENGTH, HOP, CHANNELS, padded_length(len))
}

/// Restores `y` clipped at `tau`. The signal is zero-padded to
/// [`padded_length`] for the solver (the padding is reliable and pinned to
/// zero) and truncated afterwards. `truth` is required by the oracle and
/// otherwise only feeds the trace.
pub fn restore(
    y: &Signal,
    tau: f64,
    method: &Method,
    iterations: usize,
    truth: Option<&Signal>,
) -> Result<Restoration> {
    let mask = clip_mask(y, tau)?;
    if let Method::ClipOnly = method {
        return Ok(Restoration {
            output: y.clone(),
            trace: IterationTrace::default(),
            lambda: None,
        });
    }
    if let Some(t) = truth {
        if t.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: y.len(),
                actual: t.len(),
            });
        }
    }
    let cfg = gabor_for_length(y.len())?;
    let n = cfg.signal_length();
    let y_pad = pad(y, n)?;
    let truth_pad = truth.map(|t| pad(t, n)).transpose()?;
    let mask_pad = clip_mask(&y_pad, tau)?;
    let (solver, lambda) = match method {
        Method::ClipOnly => unreachable!(),
        Method::Pwl1 { rho } => (SolverConfig::pwl1(&cfg, *rho), None),
        Method::Applade {
            estimator,
            lambda,
            epsilon,
        } => {
            let lambda = match lambda {
                Some(l) => *l,
                None => lambda_from_clip_ratio(mask.clip_ratio())?,
            };
            let estimator: Arc<dyn MagnitudeEstimator> = match estimator {
                Estimator::Oracle => {
                    let t = truth_pad.as_ref().ok_or_else(|| {
                        Error::InvalidArgument(
                            "the oracle estimator needs the reference signal".into(),
                        )
                    })?;
                    Arc::new(oracle_estimator(t, &cfg)?)
                }
                Estimator::Fixed(e) => Arc::clone(e),
            };
            let mut solver = SolverConfig::applade(&cfg, estimator, lambda);
            solver.params.epsilon = *epsilon;
            (solver, Some(lambda))
        }
    };
    let solver = solver.with_iterations(iterations);
    let (out, trace) = declip_traced(&y_pad, &mask_pad, &cfg, &solver, truth_pad.as_ref())?;
    let mut samples = out.into_samples();
    samples.truncate(y.len());
    Ok(Restoration {
        output: y.with_samples(samples)?,
        trace,
        lambda,
    })
}

/// Loads the corpus as `(id, signal)` pairs.
pub fn load_corpus(source: &CorpusSource) -> Result<Vec<(String, Signal)>> {
    match source {
        CorpusSource::Synthetic { seed, count } => {
            Ok(synth_corpus(&CorpusConfig::new(*seed, *count))?
                .into_iter()
                .enumerate()
                .map(|(i, s)| (format!("synth-{seed}-{i:04}"), s))
                .collect())
        }
        CorpusSource::WavDir(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no .wav files in {}",
                    dir.display()
                )));
            }
            paths
                .iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    Ok((id, peak_normalize(&read_wav(p)?)?))
                })
                .collect()
        }
    }
}

fn level_tag(level: f64) -> String {
    format!("{level}dB").replace('.', "p").replace('-', "m")
}

struct Job<'a> {
    id: &'a str,
    truth: &'a Signal,
    level: f64,
}

fn run_job(
    job: &Job,
    methods: &[(&'static str, Method)],
    iterations: usize,
    restored_dir: Option<&Path>,
) -> Vec<MetricRecord> {
    let clipped = threshold_for_input_sdr(job.truth, job.level)
        .and_then(|tau| Ok((tau, hard_clip(job.truth, tau)?)))
        .and_then(|(tau, y)| Ok((tau, clip_mask(&y, tau)?.clip_ratio(), y)));
    let (tau, p, y) = match clipped {
        Ok(v) => v,
        Err(e) => {
            return methods
                .iter()
                .map(|(name, _)| MetricRecord::failed(job.id, name, job.level, None, None, &e))
                .collect()
        }
    };
    let tag = level_tag(job.level);
    if let Some(dir) = restored_dir {
        let path = dir.join(format!("{}_{tag}_clipped.wav", job.id));
        if let Err(e) = write_wav(&path, &y, SampleFormat::Float32) {
            return methods
                .iter()
                .map(|(name, _)| {
                    MetricRecord::failed(job.id, name, job.level, Some(tau), Some(p), &e)
                })
                .collect();
        }
    }
    methods
        .iter()
        .map(|(name, method)| {
            let outcome = restore(&y, tau, method, iterations, Some(job.truth)).and_then(|r| {
                let gain = delta_sdr(job.truth, &r.output, &y)?;
                if let Some(dir) = restored_dir {
                    let path = dir.join(format!("{}_{tag}_{name}.wav", job.id));
                    write_wav(&path, &r.output, SampleFormat::Float32)?;
                }
                Ok((gain, r.trace))
            });
            match outcome {
                Ok((gain, trace)) => MetricRecord {
                    signal_id: job.id.to_string(),
                    method: name.to_string(),
                    input_sdr_db: job.level,
                    tau: Some(tau),
                    clip_ratio: Some(p),
                    delta_sdr_db: Some(gain),
                    iterations: Some(trace.iterations),
                    time_per_iteration_s: Some(trace.time_per_iteration()),
                    total_time_s: Some(trace.total_time),
                    status: "ok".into(),
                },
                Err(e) => MetricRecord::failed(job.id, name, job.level, Some(tau), Some(p), &e),
            }
        })
        .collect()
}

/// Runs every method on every signal at every level, in parallel.
/// Restoration failures become error rows; only corpus, model and output
/// errors abort the run. Records are sorted by (signal id, level, method).
pub fn run_records(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<MetricRecord>> {
    spec.validate()?;
    let corpus = load_corpus(&spec.corpus)?;
    let methods: Vec<(&'static str, Method)> = spec
        .methods
        .iter()
        .map(|m| Ok((m.name(), m.resolve()?)))
        .collect::<Result<_>>()?;
    let restored_dir = spec.outputs.restored.as_ref().map(|d| out_dir.join(d));
    if let Some(dir) = &restored_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let jobs: Vec<Job> = corpus
        .iter()
        .flat_map(|(id, truth)| {
            spec.levels.iter().map(move |&level| Job {
                id: id.as_str(),
                truth,
                level,
            })
        })
        .collect();
    let mut records: Vec<MetricRecord> = jobs
        .par_iter()
        .flat_map_iter(|job| run_job(job, &methods, spec.iterations, restored_dir.as_deref()))
        .collect();
    records.sort_by(|a, b| {
        a.signal_id
            .cmp(&b.signal_id)
            .then(
                a.input_sdr_db
                    .partial_cmp(&b.input_sdr_db)
                    .unwrap_or(Ordering::Equal),
            )
            .then(a.method.cmp(&b.method))
    });
    Ok(records)
}

pub fn write_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("CSV file", line, format!("{other:?}")),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<MetricRecord>,
    pub summary: Summary,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

/// [`run_records`] plus the CSV and JSON summary files under `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = run_records(spec, out_dir)?;
    let summary = summarize(&records);
    let csv_path = out_dir.join(&spec.outputs.csv);
    let summary_path = out_dir.join(&spec.outputs.summary);
    write_csv(&csv_path, &records)?;
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&summary_path, json).map_err(|e| Error::io(&summary_path, e))?;
    Ok(ExperimentReport {
        records,
        summary,
        csv_path,
        summary_path,
    })
}
