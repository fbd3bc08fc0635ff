use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mel::{mel_filterbank, MelSpectrogram};
use super::stft::{istft_padded, stft_padded, Complex};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::par;

/// Projected-gradient iterations for the mel-to-linear inversion.
const NNLS_ITERS: usize = 50;

/// Largest eigenvalue of `A A^T` by power iteration.
fn spectral_norm_sq(a: &Array2<f64>) -> f64 {
    let aat = a.dot(&a.t());
    let mut v = Array1::from_elem(aat.nrows(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = aat.dot(&v);
        let n = w.dot(&w).sqrt();
        if n == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w) / v.dot(&v);
        v = w / n;
    }
    lambda
}

/// Invert a log-mel spectrogram to linear power, `frames x bins`, by non-negative
/// least squares against the filterbank (projected gradient, step `1/L`).
pub fn mel_to_power(mel: &MelSpectrogram) -> Result<Array2<f64>> {
    let cfg = &mel.config;
    let fb = mel_filterbank(cfg)?;
    if mel.data.ncols() != cfg.n_mels {
        return Err(Error::shape(cfg.n_mels, mel.data.ncols()));
    }
    let lip = spectral_norm_sq(&fb);
    let step = if lip > 0.0 { 1.0 / lip } else { 0.0 };
    let row_sum = fb.sum_axis(ndarray::Axis(1));
    let col_sum = fb.sum_axis(ndarray::Axis(0));
    let bins = fb.ncols();
    let rows = par::map_range(mel.frames(), |t| {
        let y = mel.data.row(t).mapv(f64::exp);
        // start from the band densities spread back over their bins
        let density: Array1<f64> = y
            .iter()
            .zip(row_sum.iter())
            .map(|(v, s)| if *s > 0.0 { v / s } else { 0.0 })
            .collect();
        let mut p: Array1<f64> = fb.t().dot(&density);
        for k in 0..bins {
            p[k] = if col_sum[k] > 0.0 { p[k] / col_sum[k] } else { 0.0 };
        }
        for _ in 0..NNLS_ITERS {
            let resid = fb.dot(&p) - &y;
            let grad = fb.t().dot(&resid);
            p.zip_mut_with(&grad, |pk, g| *pk = (*pk - step * g).max(0.0));
        }
        p
    });
    let mut out = Array2::zeros((mel.frames(), bins));
    for (t, r) in rows.into_iter().enumerate() {
        out.row_mut(t).assign(&r);
    }
    Ok(out)
}

/// Audio plus the magnitude distance `|| |STFT(x_k)| - A ||_F` after each iteration.
#[derive(Debug, Clone)]
pub struct GriffinLimTrace {
    pub audio: AudioBuffer,
    pub distances: Vec<f64>,
}

/// Render a log-mel spectrogram to audio. Deterministic for a given seed.
pub fn griffin_lim(mel: &MelSpectrogram, iters: usize, seed: u64) -> Result<AudioBuffer> {
    Ok(griffin_lim_traced(mel, iters, seed)?.audio)
}

pub fn griffin_lim_traced(mel: &MelSpectrogram, iters: usize, seed: u64) -> Result<GriffinLimTrace> {
    if iters == 0 {
        return Err(Error::config("griffin-lim needs at least one iteration"));
    }
    let cfg = mel.config.spectral;
    cfg.validate()?;
    let target = mel_to_power(mel)?.mapv(f64::sqrt);
    let frames = target.nrows();
    if frames == 0 {
        return Err(Error::EmptyInput);
    }
    // Work on the padded buffer with plain (non-reflecting) framing so that the
    // inverse is the exact least-squares solution and the distance is monotone.
    let padded_len = (frames - 1) * cfg.hop + cfg.n_fft;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase: Array2<Complex> = Array2::from_shape_fn(target.dim(), |_| {
        let a = rng.random_range(-PI..PI);
        Complex::new(a.cos(), a.sin())
    });
    let mut distances = Vec::with_capacity(iters);
    let mut signal = Vec::new();
    for _ in 0..iters {
        let spec = ndarray::Zip::from(&target)
            .and(&phase)
            .map_collect(|a, p| p * *a);
        signal = istft_padded(&spec, &cfg, padded_len);
        let analysed = stft_padded(&signal, &cfg, frames);
        let mut dist = 0.0;
        ndarray::Zip::from(&mut phase)
            .and(&analysed)
            .and(&target)
            .for_each(|p, x, a| {
                let m = x.norm();
                dist += (m - a).powi(2);
                if m > 0.0 {
                    *p = x / m;
                }
            });
        distances.push(dist.sqrt());
    }
    let pad = cfg.n_fft / 2;
    let len = (frames - 1) * cfg.hop;
    let audio = AudioBuffer::new(signal[pad..pad + len].to_vec(), mel.config.sample_rate)?;
    Ok(GriffinLimTrace { audio, distances })
}
