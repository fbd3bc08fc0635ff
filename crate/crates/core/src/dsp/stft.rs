use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
pub use rustfft::num_complex::Complex64 as Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

/// STFT framing. Frames are centred: frame `t` is centred on sample `t * hop`
/// after reflection padding of `n_fft / 2` on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
    pub window: Window,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            win: 1024,
            window: Window::Hann,
        }
    }
}

impl SpectralConfig {
    pub fn new(n_fft: usize, hop: usize, win: usize) -> Result<Self> {
        let cfg = Self {
            n_fft,
            hop,
            win,
            window: Window::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Framing used for evaluation metrics (hop 512).
    pub fn evaluation() -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
            win: 2048,
            window: Window::Hann,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.hop && self.hop <= self.win && self.win <= self.n_fft) {
            return Err(Error::config(format!(
                "need 0 < hop <= win <= n_fft, got hop={} win={} n_fft={}",
                self.hop, self.win, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// Window of length `n_fft`, with the `win`-long taper centred and zero elsewhere.
    pub fn window_coeffs(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let off = (self.n_fft - self.win) / 2;
        for i in 0..self.win {
            w[off + i] = match self.window {
                Window::Hann => 0.5 - 0.5 * (2.0 * PI * i as f64 / self.win as f64).cos(),
                Window::Rectangular => 1.0,
            };
        }
        w
    }
}

/// Mirror an out-of-range index back into `0..len` (reflection without edge repeat).
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

fn centred_padded(x: &[f64], n_fft: usize) -> Vec<f64> {
    let pad = (n_fft / 2) as isize;
    (0..x.len() + n_fft)
        .map(|i| x[reflect_index(i as isize - pad, x.len())])
        .collect()
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(n)
}

/// Analyse `n_frames` frames starting at `t * hop` of an already padded signal.
/// Samples past the end read as zero.
pub(crate) fn stft_padded(padded: &[f64], cfg: &SpectralConfig, n_frames: usize) -> Array2<Complex> {
    let n = cfg.n_fft;
    let bins = cfg.bins();
    let w = cfg.window_coeffs();
    let fft = forward_plan(n);
    let rows = par::map_range(n_frames, |t| {
        let start = t * cfg.hop;
        let mut buf: Vec<Complex> = (0..n)
            .map(|i| Complex::new(padded.get(start + i).copied().unwrap_or(0.0) * w[i], 0.0))
            .collect();
        fft.process(&mut buf);
        buf.truncate(bins);
        buf
    });
    let mut out = Array2::zeros((n_frames, bins));
    for (t, row) in rows.into_iter().enumerate() {
        out.row_mut(t).assign(&ndarray::Array1::from(row));
    }
    out
}

/// Least-squares inverse of [`stft_padded`] onto a buffer of `out_len` samples.
pub(crate) fn istft_padded(spec: &Array2<Complex>, cfg: &SpectralConfig, out_len: usize) -> Vec<f64> {
    let n = cfg.n_fft;
    let bins = cfg.bins();
    let w = cfg.window_coeffs();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let frames = par::map_range(spec.nrows(), |t| {
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for k in 0..bins {
            buf[k] = spec[[t, k]];
        }
        for k in bins..n {
            buf[k] = spec[[t, n - k]].conj();
        }
        // DC and Nyquist must be real for a real signal
        buf[0].im = 0.0;
        if n.is_multiple_of(2) {
            buf[n / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        buf.iter()
            .zip(&w)
            .map(|(c, wi)| c.re / n as f64 * wi)
            .collect::<Vec<f64>>()
    });
    let mut acc = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    for (t, frame) in frames.iter().enumerate() {
        let start = t * cfg.hop;
        for i in 0..n {
            if let Some(a) = acc.get_mut(start + i) {
                *a += frame[i];
                norm[start + i] += w[i] * w[i];
            }
        }
    }
    for (a, z) in acc.iter_mut().zip(&norm) {
        *a = if *z > 0.0 { *a / z } else { 0.0 };
    }
    acc
}

/// Centred STFT. Returns a `frames x (n_fft/2 + 1)` complex matrix with
/// `frames = len / hop + 1`.
pub fn stft(audio: &AudioBuffer, cfg: &SpectralConfig) -> Result<Array2<Complex>> {
    cfg.validate()?;
    audio.require_non_empty()?;
    Ok(stft_samples(&audio.samples, cfg))
}

pub(crate) fn stft_samples(x: &[f64], cfg: &SpectralConfig) -> Array2<Complex> {
    let padded = centred_padded(x, cfg.n_fft);
    stft_padded(&padded, cfg, cfg.n_frames(x.len()))
}

/// Inverse of [`stft`] by weighted overlap-add. `length` defaults to
/// `(frames - 1) * hop`.
pub fn istft(
    spec: &Array2<Complex>,
    cfg: &SpectralConfig,
    sample_rate: u32,
    length: Option<usize>,
) -> Result<AudioBuffer> {
    cfg.validate()?;
    if spec.ncols() != cfg.bins() {
        return Err(Error::shape(
            format!("{} bins", cfg.bins()),
            format!("{} bins", spec.ncols()),
        ));
    }
    if spec.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    let len = length.unwrap_or((spec.nrows() - 1) * cfg.hop);
    let pad = cfg.n_fft / 2;
    let full = istft_padded(spec, cfg, len + 2 * pad);
    AudioBuffer::new(full[pad..pad + len].to_vec(), sample_rate)
}
