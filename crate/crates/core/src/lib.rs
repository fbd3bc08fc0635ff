//! Pitch shifting for singing voice, framed as restoration.
//!
//! The crate bundles everything needed to go from a clean vocal take to a
//! restored, pitch-shifted one and to score the result:
//!
//! - [`dsp`]: STFT/ISTFT, mel filterbank, log-mel, MFCC, RMS envelope,
//!   windowed-sinc resampling and Griffin-Lim rendering.
//! - [`pitch`]: YIN-style F0 tracking and contour arithmetic.
//! - [`vocoder`]: a compact source-filter vocoder (F0, smoothed envelope,
//!   band aperiodicity) and the forward/backward artifact-pair generator.
//! - [`psola`]: a TD-PSOLA baseline.
//! - [`diffusion`]: the shallow mel-space diffusion restorer, its noise
//!   schedule, deterministic DDIM sampler and a small trainable denoiser.
//! - [`metrics`]: pairwise and distributional evaluation metrics.
//! - [`dataset`]: corpus ingestion and artifact-pair manufacturing.
//!
//! Frame-level and file-level loops run on rayon when the `parallel`
//! feature is enabled (the default) and fall back to plain iterators
//! otherwise. Outputs do not depend on the thread count.

pub mod audio;
pub mod dataset;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod par;
pub mod pitch;
pub mod psola;
pub mod psrt;
pub mod synth;
pub mod vocoder;

pub use audio::AudioBuffer;
pub use error::{Error, Result};

/// Sample rate every pipeline stage works at.
pub const SAMPLE_RATE: u32 = 44_100;
