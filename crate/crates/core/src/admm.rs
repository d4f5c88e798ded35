//! ADMM declipping with a pluggable spectral update.
//!
//! One round:
//!
//! ```text
//! x <- P(G*(v - u))        projection onto the clipping-consistent set
//! v <- T(G x + u)          thresholding (weighted soft or estimator-driven)
//! u <- u + G x - v
//! ```

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::denoiser::{checked_estimate, MagnitudeEstimator};
use crate::error::{Error, Result};
use crate::gabor::{dgt_slice, idgt_samples, parabola_weights, GaborConfig, Spectrogram};
use crate::operators::{
    applade_threshold, project_in_place, weighted_soft_threshold, ThresholdParams, DEFAULT_EPSILON,
};
use crate::signal::{norm, sdr_slices, ClipMask, Signal};

pub const DEFAULT_ITERATIONS: usize = 200;

/// Largest allowed ratio `||x|| / ||y||` before a run is declared divergent.
pub const ENERGY_GROWTH_LIMIT: f64 = 10.0;

#[derive(Clone)]
pub enum Thresholding {
    /// Parabola-weighted soft thresholding at `w / rho`.
    Pwl1,
    /// `(1 - lambda w / (F(|z|) + eps)^2)_+` with `F` the estimator.
    Applade(Arc<dyn MagnitudeEstimator>),
}

impl fmt::Debug for Thresholding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Thresholding::Pwl1 => f.write_str("Pwl1"),
            Thresholding::Applade(e) => write!(f, "Applade({})", e.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub thresholding: Thresholding,
    pub params: ThresholdParams,
    pub iterations: usize,
    /// Record diagnostics every this many iterations (the last iteration is
    /// always recorded).
    pub trace_every: usize,
}

impl SolverConfig {
    /// Parabola-weighted l1 with penalty `rho`.
    pub fn pwl1(cfg: &GaborConfig, rho: f64) -> Self {
        SolverConfig {
            thresholding: Thresholding::Pwl1,
            params: ThresholdParams {
                rho,
                weights: Some(parabola_weights(cfg)),
                ..Default::default()
            },
            iterations: DEFAULT_ITERATIONS,
            trace_every: 1,
        }
    }

    /// Estimator-driven thresholding with parabola weights.
    ///
    /// `lambda` is read on the base-window power scale (the scale of the
    /// `30 p` rule) and divided by `cfg.power_scale()` so it applies to the
    /// Parseval coefficients the solver works with.
    pub fn applade(cfg: &GaborConfig, estimator: Arc<dyn MagnitudeEstimator>, lambda: f64) -> Self {
        SolverConfig {
            thresholding: Thresholding::Applade(estimator),
            params: ThresholdParams {
                lambda: lambda / cfg.power_scale(),
                epsilon: DEFAULT_EPSILON,
                weights: Some(parabola_weights(cfg)),
                ..Default::default()
            },
            iterations: DEFAULT_ITERATIONS,
            trace_every: 1,
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn validate(&self, cfg: &GaborConfig) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument(
                "iteration count must be at least 1".into(),
            ));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidArgument(
                "trace cadence must be at least 1".into(),
            ));
        }
        self.params.validate()?;
        if let Some(w) = &self.params.weights {
            crate::gabor::check_shape(w.dim(), cfg.shape())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Vec<f64>,
    pub v: Spectrogram,
    pub u: Spectrogram,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `||G x - v||` after the round.
    pub primal_residual: f64,
    /// `||v_new - v_old||`.
    pub dual_change: f64,
    /// SDR gain of `x` over the observation, when the truth is known.
    pub delta_sdr: Option<f64>,
    /// Seconds since the first round started.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub iterations: usize,
    /// Wall time of the iteration loop in seconds.
    pub total_time: f64,
}

impl IterationTrace {
    pub fn time_per_iteration(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.total_time / self.iterations as f64
        }
    }

    pub fn final_delta_sdr(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.delta_sdr)
    }

    pub fn max_delta_sdr(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.delta_sdr)
            .reduce(f64::max)
    }

    /// Elapsed time of the first record whose SDR gain reaches `fraction` of
    /// the final gain.
    pub fn time_to_fraction(&self, fraction: f64) -> Option<f64> {
        let target = fraction * self.final_delta_sdr()?;
        self.records
            .iter()
            .find(|r| r.delta_sdr.is_some_and(|d| d >= target))
            .map(|r| r.elapsed)
    }
}

/// `x = y`, `v = G y`, `u = 0`.
pub fn init_state(y: &Signal, mask: &ClipMask, cfg: &GaborConfig) -> Result<AdmmState> {
    if y.len() != mask.len() {
        return Err(Error::LengthMismatch {
            expected: mask.len(),
            actual: y.len(),
        });
    }
    if !mask.is_consistent(y.samples(), y.samples()) {
        return Err(Error::InvalidArgument(
            "mask was not generated from this observation".into(),
        ));
    }
    Ok(AdmmState {
        x: y.samples().to_vec(),
        v: dgt_slice(y.samples(), cfg)?,
        u: Spectrogram::zeros(cfg),
        k: 0,
    })
}

/// The spectral update `v = T(z)`.
fn threshold(z: &Spectrogram, solver: &SolverConfig) -> Result<Spectrogram> {
    let params = &solver.params;
    match &solver.thresholding {
        Thresholding::Pwl1 => {
            let base = 1.0 / params.rho;
            match &params.weights {
                Some(w) => weighted_soft_threshold(z, base, w),
                None => Ok(crate::operators::soft_threshold(z, base)),
            }
        }
        Thresholding::Applade(estimator) => {
            let estimate = checked_estimate(estimator.as_ref(), &z.magnitude())?;
            applade_threshold(z, &estimate, params)
        }
    }
}

/// One ADMM round. Returns the new state and the residual/dual-change pair.
pub fn step(
    state: &AdmmState,
    solver: &SolverConfig,
    mask: &ClipMask,
    y: &Signal,
    cfg: &GaborConfig,
) -> Result<(AdmmState, f64, f64)> {
    let diff = state.v.add_scaled(-1.0, &state.u)?;
    let mut x = idgt_samples(&diff, cfg)?;
    project_in_place(&mut x, mask, y.samples())?;
    let gx = dgt_slice(&x, cfg)?;
    let z = gx.add_scaled(1.0, &state.u)?;
    let v = threshold(&z, solver)?;
    let residual = gx.add_scaled(-1.0, &v)?;
    let u = state.u.add_scaled(1.0, &residual)?;
    let primal = residual.norm();
    let dual = v.distance(&state.v)?;
    Ok((
        AdmmState {
            x,
            v,
            u,
            k: state.k + 1,
        },
        primal,
        dual,
    ))
}

/// Why a state should abort the run, if it should.
fn divergence(state: &AdmmState, primal: f64, dual: f64, y_norm: f64) -> Option<String> {
    let finite = primal.is_finite()
        && dual.is_finite()
        && state.x.iter().all(|v| v.is_finite())
        && state.v.is_finite()
        && state.u.is_finite();
    if !finite {
        return Some("non-finite iterate".to_string());
    }
    let x_norm = norm(&state.x);
    if y_norm > 0.0 && x_norm > ENERGY_GROWTH_LIMIT * y_norm {
        return Some(format!(
            "||x|| = {x_norm:.3e} exceeds {ENERGY_GROWTH_LIMIT} x ||y|| = {y_norm:.3e}"
        ));
    }
    None
}

/// Runs the configured number of rounds from the standard initialization.
pub fn declip(
    y: &Signal,
    mask: &ClipMask,
    cfg: &GaborConfig,
    solver: &SolverConfig,
) -> Result<(Signal, IterationTrace)> {
    declip_traced(y, mask, cfg, solver, None)
}

/// As [`declip`], additionally tracking the SDR gain against `truth`.
pub fn declip_traced(
    y: &Signal,
    mask: &ClipMask,
    cfg: &GaborConfig,
    solver: &SolverConfig,
    truth: Option<&Signal>,
) -> Result<(Signal, IterationTrace)> {
    solver.validate(cfg)?;
    if let Some(t) = truth {
        if t.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: y.len(),
                actual: t.len(),
            });
        }
    }
    let baseline = truth
        .map(|t| sdr_slices(t.samples(), y.samples()))
        .transpose()?;
    let y_norm = y.norm();

    let mut state = init_state(y, mask, cfg)?;
    let mut trace = IterationTrace::default();
    let start = Instant::now();
    for k in 1..=solver.iterations {
        let (next, primal, dual) = step(&state, solver, mask, y, cfg)?;
        state = next;

        let failure = divergence(&state, primal, dual, y_norm);
        let finite = state.x.iter().all(|v| v.is_finite());

        if k % solver.trace_every == 0 || k == solver.iterations || failure.is_some() {
            let delta_sdr = match (truth, baseline) {
                (Some(t), Some(b)) if finite => {
                    let after = sdr_slices(t.samples(), &state.x)?;
                    Some(if after == b { 0.0 } else { after - b })
                }
                _ => None,
            };
            trace.records.push(IterationRecord {
                iteration: k,
                primal_residual: primal,
                dual_change: dual,
                delta_sdr,
                elapsed: start.elapsed().as_secs_f64(),
            });
        }
        if let Some(reason) = failure {
            trace.iterations = k;
            trace.total_time = start.elapsed().as_secs_f64();
            return Err(Error::Divergence {
                iteration: k,
                reason,
                trace: Box::new(trace),
            });
        }
    }
    trace.iterations = solver.iterations;
    trace.total_time = start.elapsed().as_secs_f64();
    Ok((Signal::from_trusted(state.x, y.sample_rate()), trace))
}
