//! Restoration of hard-clipped audio by ADMM over a tight Gabor frame.
//!
//! Two spectral updates are provided: parabola-weighted soft thresholding
//! and an estimator-driven variant whose per-bin strength is set by an
//! estimate of the clean magnitude spectrogram (identity, oracle, or a small
//! U-Net loaded from a weight file).

pub mod admm;
pub mod corpus;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod gabor;
pub mod operators;
pub mod signal;
pub mod wav;

pub use admm::{
    declip, declip_traced, init_state, step, AdmmState, IterationTrace, SolverConfig, Thresholding,
};
pub use error::{Error, Result};
pub use gabor::{dgt, idgt, GaborConfig, Spectrogram};
pub use signal::{
    clip_mask, delta_sdr, hard_clip, peak_normalize, sdr, threshold_for_input_sdr, ClipMask, Signal,
};
