use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stft::{reflect_index, stft, SpectralConfig};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::par;

/// Log-mel front end. The mel scale is HTK (`2595 log10(1 + f/700)`),
/// filters are area-normalised and the log is natural.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub spectral: SpectralConfig,
    pub sample_rate: u32,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Power is clamped to this value before taking the log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            spectral: SpectralConfig::default(),
            sample_rate: crate::SAMPLE_RATE,
            n_mels: 128,
            f_min: 0.0,
            f_max: 22_050.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    /// Same mel layout on the hop-512 evaluation grid.
    pub fn evaluation() -> Self {
        Self {
            spectral: SpectralConfig::evaluation(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max) {
            return Err(Error::config(format!(
                "need 0 <= f_min < f_max, got {} and {}",
                self.f_min, self.f_max
            )));
        }
        if self.f_max > nyquist {
            return Err(Error::config(format!(
                "f_max {} Hz exceeds Nyquist {} Hz",
                self.f_max, nyquist
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    pub fn floor_value(&self) -> f64 {
        self.log_floor.ln()
    }
}

/// `frames x n_mels` natural-log mel power.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Array2<f64>,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    /// Mel-band amplitudes `exp(logmel / 2)`, for spectral-distance metrics on mels.
    pub fn amplitude(&self) -> Array2<f64> {
        self.data.mapv(|v| (0.5 * v).exp())
    }
}

/// `frames x (n_fft/2 + 1)` non-negative magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub data: Array2<f64>,
    pub config: SpectralConfig,
}

/// Per-frame RMS on the STFT frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEnvelope {
    pub values: Vec<f64>,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// The `n_mels + 2` filter edge frequencies in Hz.
fn mel_points(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Peak frequency of each mel band.
pub fn mel_band_centers(cfg: &MelConfig) -> Vec<f64> {
    mel_points(cfg)[1..=cfg.n_mels].to_vec()
}

/// Triangular, area-normalised filterbank, `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let pts = mel_points(cfg);
    let bins = cfg.spectral.bins();
    let df = cfg.sample_rate as f64 / cfg.spectral.n_fft as f64;
    let mut fb = Array2::zeros((cfg.n_mels, bins));
    for m in 0..cfg.n_mels {
        let (lo, c, hi) = (pts[m], pts[m + 1], pts[m + 2]);
        let norm = 2.0 / (hi - lo);
        for k in 0..bins {
            let f = k as f64 * df;
            let up = (f - lo) / (c - lo);
            let down = (hi - f) / (hi - c);
            let w = up.min(down).max(0.0);
            fb[[m, k]] = w * norm;
        }
    }
    Ok(fb)
}

/// `|STFT|^2`, `frames x bins`.
pub fn power_spectrogram(audio: &AudioBuffer, cfg: &SpectralConfig) -> Result<Array2<f64>> {
    Ok(stft(audio, cfg)?.mapv(|c| c.norm_sqr()))
}

pub fn magnitude_spectrogram(audio: &AudioBuffer, cfg: &SpectralConfig) -> Result<MagnitudeSpectrogram> {
    Ok(MagnitudeSpectrogram {
        data: stft(audio, cfg)?.mapv(|c| c.norm()),
        config: *cfg,
    })
}

pub fn log_mel_from_power(power: &Array2<f64>, fb: &Array2<f64>, cfg: &MelConfig) -> MelSpectrogram {
    let floor = cfg.log_floor;
    let data = power.dot(&fb.t()).mapv(|v| v.max(floor).ln());
    MelSpectrogram { data, config: *cfg }
}

pub fn log_mel(audio: &AudioBuffer, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if audio.sample_rate != cfg.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: cfg.sample_rate,
            got: audio.sample_rate,
        });
    }
    let fb = mel_filterbank(cfg)?;
    let power = power_spectrogram(audio, &cfg.spectral)?;
    Ok(log_mel_from_power(&power, &fb, cfg))
}

/// First `n` coefficients of the orthonormal DCT-II of `v`.
pub fn dct_ii_ortho(v: &[f64], n: usize) -> Vec<f64> {
    let len = v.len() as f64;
    (0..n)
        .map(|k| {
            let scale = if k == 0 { (1.0 / len).sqrt() } else { (2.0 / len).sqrt() };
            let sum: f64 = v
                .iter()
                .enumerate()
                .map(|(i, x)| x * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * len)).cos())
                .sum();
            scale * sum
        })
        .collect()
}

pub fn mfcc_from_log_mel(mel: &MelSpectrogram, n_coeffs: usize) -> Result<Array2<f64>> {
    let n_mels = mel.data.ncols();
    if n_coeffs > n_mels {
        return Err(Error::config(format!(
            "n_coeffs {n_coeffs} exceeds n_mels {n_mels}"
        )));
    }
    // cosine table shared across frames
    let basis = Array2::from_shape_fn((n_mels, n_coeffs), |(i, k)| {
        let scale = if k == 0 {
            (1.0 / n_mels as f64).sqrt()
        } else {
            (2.0 / n_mels as f64).sqrt()
        };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n_mels as f64)).cos()
    });
    Ok(mel.data.dot(&basis))
}

/// `frames x n_coeffs` MFCC matrix.
pub fn mfcc(audio: &AudioBuffer, cfg: &MelConfig, n_coeffs: usize) -> Result<Array2<f64>> {
    if n_coeffs > cfg.n_mels {
        return Err(Error::config(format!(
            "n_coeffs {n_coeffs} exceeds n_mels {}",
            cfg.n_mels
        )));
    }
    mfcc_from_log_mel(&log_mel(audio, cfg)?, n_coeffs)
}

/// RMS over the `win`-long span of each STFT frame (same centring and padding).
pub fn rms_envelope(audio: &AudioBuffer, cfg: &SpectralConfig) -> Result<VolumeEnvelope> {
    cfg.validate()?;
    audio.require_non_empty()?;
    let x = &audio.samples;
    let len = x.len();
    let half = (cfg.win / 2) as isize;
    let values = par::map_range(cfg.n_frames(len), |t| {
        let start = (t * cfg.hop) as isize - half;
        let sum: f64 = (0..cfg.win as isize)
            .map(|i| x[reflect_index(start + i, len)].powi(2))
            .sum();
        (sum / cfg.win as f64).sqrt()
    });
    Ok(VolumeEnvelope { values })
}
