//! F0 tracking and contour arithmetic.
//!
//! The tracker is YIN: squared-difference function via FFT
//! cross-correlation, cumulative-mean normalisation, a tolerant first-dip
//! search to avoid octave errors, and parabolic refinement of the lag.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::par;
use crate::psrt::{self, DType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitchConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub hop: usize,
    /// A frame is voiced when its normalised difference minimum is below this.
    pub voicing_threshold: f64,
    /// YIN integration window in samples.
    pub window: usize,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            f_min: 65.0,
            f_max: 800.0,
            hop: 256,
            voicing_threshold: 0.15,
            window: 1024,
        }
    }
}

impl PitchConfig {
    pub fn evaluation() -> Self {
        Self {
            hop: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq = sample_rate as f64 / 2.0;
        if !(0.0 < self.f_min && self.f_min < self.f_max && self.f_max < nyq) {
            return Err(Error::config(format!(
                "need 0 < f_min < f_max < {nyq}, got {} and {}",
                self.f_min, self.f_max
            )));
        }
        if self.hop == 0 || self.window == 0 {
            return Err(Error::config("hop and window must be positive"));
        }
        if !(0.0 < self.voicing_threshold && self.voicing_threshold < 1.0) {
            return Err(Error::config("voicing threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Samples read per frame, centred on the frame position.
    pub fn span(&self, sample_rate: u32) -> usize {
        self.window + (sample_rate as f64 / self.f_min).ceil() as usize + 2
    }
}

/// Per-frame F0 in Hz (0 where unvoiced) with voicing flags.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl F0Contour {
    pub fn unvoiced(frames: usize, hop: usize, sample_rate: u32) -> Self {
        Self {
            f0: vec![0.0; frames],
            voiced: vec![false; frames],
            hop,
            sample_rate,
        }
    }

    /// Build from raw Hz values; anything `<= 0` is unvoiced.
    pub fn from_hz(f0: Vec<f64>, hop: usize, sample_rate: u32) -> Self {
        let voiced = f0.iter().map(|&f| f > 0.0).collect();
        let f0 = f0.into_iter().map(|f| f.max(0.0)).collect();
        Self {
            f0,
            voiced,
            hop,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.voiced.iter().filter(|&&v| v).count() as f64 / self.len() as f64
    }

    /// Median over voiced frames, `None` if nothing is voiced.
    pub fn median_voiced(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .f0
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &on)| on)
            .map(|(&f, _)| f)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }

    /// `frames x 2` matrix of `[f0_hz, voiced]`.
    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), 2), |(t, c)| {
            if c == 0 {
                self.f0[t]
            } else if self.voiced[t] {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn from_matrix(m: &Array2<f64>, hop: usize, sample_rate: u32) -> Result<Self> {
        if m.ncols() != 2 {
            return Err(Error::shape("frames x 2", m.dim()));
        }
        let voiced: Vec<bool> = m.column(1).iter().map(|&v| v > 0.5).collect();
        let f0 = m
            .column(0)
            .iter()
            .zip(&voiced)
            .map(|(&f, &v)| if v { f } else { 0.0 })
            .collect();
        Ok(Self {
            f0,
            voiced,
            hop,
            sample_rate,
        })
    }

    pub fn write_psrt(&self, path: impl AsRef<Path>) -> Result<()> {
        psrt::write_2d(path, &self.to_matrix(), DType::F32)
    }

    pub fn read_psrt(path: impl AsRef<Path>, hop: usize, sample_rate: u32) -> Result<Self> {
        Self::from_matrix(&psrt::read_2d(path)?, hop, sample_rate)
    }

    /// CSV with header `frame,f0_hz,voiced`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,f0_hz,voiced\n");
        for (t, (f, v)) in self.f0.iter().zip(&self.voiced).enumerate() {
            s.push_str(&format!("{t},{f},{}\n", u8::from(*v)));
        }
        s
    }
}

/// Multiply voiced F0 by `2^(semitones/12)`; voicing is untouched.
pub fn shift_f0(contour: &F0Contour, semitones: f64) -> F0Contour {
    let ratio = 2f64.powf(semitones / 12.0);
    F0Contour {
        f0: contour
            .f0
            .iter()
            .zip(&contour.voiced)
            .map(|(&f, &v)| if v { f * ratio } else { 0.0 })
            .collect(),
        ..contour.clone()
    }
}

/// `1200 log2(f_est / f_ref)`.
pub fn cents_between(f_ref: f64, f_est: f64) -> Result<f64> {
    if !(f_ref > 0.0) {
        return Err(Error::NonPositiveFrequency(f_ref));
    }
    if !(f_est > 0.0) {
        return Err(Error::NonPositiveFrequency(f_est));
    }
    Ok(1200.0 * (f_est / f_ref).log2())
}

/// Relative slack when picking the earliest near-minimal dip.
const DIP_TOLERANCE: f64 = 1.05;
/// Absolute slack on the same test, so near-zero minima of clean periodic
/// signals do not make the choice between period multiples arbitrary.
const DIP_SLACK: f64 = 0.02;

struct Yin {
    sr: f64,
    window: usize,
    lag_min: usize,
    lag_max: usize,
    fft_len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Yin {
    fn new(cfg: &PitchConfig, sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        let lag_min = ((sr / cfg.f_max).floor() as usize).max(2);
        let lag_max = (sr / cfg.f_min).ceil() as usize;
        let fft_len = (cfg.window + lag_max + 2).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            sr,
            window: cfg.window,
            lag_min,
            lag_max,
            fft_len,
            fwd: planner.plan_fft_forward(fft_len),
            inv: planner.plan_fft_inverse(fft_len),
        }
    }

    /// Normalised difference function for lags `0..=lag_max + 1`.
    fn cmnd(&self, seg: &[f64]) -> Option<Vec<f64>> {
        let w = self.window;
        let n_lags = self.lag_max + 2;
        let energy: f64 = seg.iter().map(|v| v * v).sum();
        if energy < 1e-10 * seg.len() as f64 {
            return None;
        }
        let mut a: Vec<Complex64> = (0..self.fft_len)
            .map(|i| Complex64::new(if i < w { seg[i] } else { 0.0 }, 0.0))
            .collect();
        let mut b: Vec<Complex64> = (0..self.fft_len)
            .map(|i| Complex64::new(seg.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.fwd.process(&mut a);
        self.fwd.process(&mut b);
        let mut r: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect();
        self.inv.process(&mut r);
        let scale = 1.0 / self.fft_len as f64;
        // running energies of the lagged window
        let mut prefix = vec![0.0; seg.len() + 1];
        for (i, v) in seg.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v * v;
        }
        let e0 = prefix[w];
        let mut d = vec![0.0; n_lags];
        for tau in 1..n_lags {
            let et = prefix[tau + w] - prefix[tau];
            d[tau] = (e0 + et - 2.0 * r[tau].re * scale).max(0.0);
        }
        let mut out = vec![1.0; n_lags];
        let mut running = 0.0;
        for tau in 1..n_lags {
            running += d[tau];
            out[tau] = if running > 0.0 {
                d[tau] * tau as f64 / running
            } else {
                1.0
            };
        }
        Some(out)
    }

    /// `(lag, cmnd value)` of the chosen dip.
    fn pick(&self, cmnd: &[f64]) -> (f64, f64) {
        let range = self.lag_min..=self.lag_max;
        let global = range
            .clone()
            .map(|t| cmnd[t])
            .fold(f64::INFINITY, f64::min);
        let limit = DIP_TOLERANCE * global + DIP_SLACK;
        let mut tau = range
            .clone()
            .find(|&t| cmnd[t] <= limit)
            .unwrap_or(self.lag_min);
        while tau < self.lag_max && cmnd[tau + 1] < cmnd[tau] {
            tau += 1;
        }
        let (y0, y1, y2) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        let shift = if denom > 0.0 {
            (0.5 * (y0 - y2) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        (tau as f64 + shift, y1)
    }
}

/// Estimate F0 on the STFT frame grid: frame `t` is centred on `t * hop`, giving
/// `len / hop + 1` frames. Samples beyond the edges read as zero.
pub fn estimate_f0(audio: &AudioBuffer, cfg: &PitchConfig) -> Result<F0Contour> {
    cfg.validate(audio.sample_rate)?;
    if audio.len() < cfg.window {
        return Err(Error::TooShort {
            needed: cfg.window,
            got: audio.len(),
        });
    }
    let yin = Yin::new(cfg, audio.sample_rate);
    let x = &audio.samples;
    let span = cfg.span(audio.sample_rate);
    let frames = audio.len() / cfg.hop + 1;
    let est = par::map_range(frames, |t| {
        let start = (t * cfg.hop) as isize - (span / 2) as isize;
        let seg: Vec<f64> = (0..span as isize)
            .map(|i| {
                let j = start + i;
                if j < 0 {
                    0.0
                } else {
                    x.get(j as usize).copied().unwrap_or(0.0)
                }
            })
            .collect();
        match yin.cmnd(&seg) {
            None => 0.0,
            Some(c) => {
                let (lag, val) = yin.pick(&c);
                if val < cfg.voicing_threshold {
                    (yin.sr / lag).clamp(cfg.f_min, cfg.f_max)
                } else {
                    0.0
                }
            }
        }
    });
    Ok(F0Contour::from_hz(est, cfg.hop, audio.sample_rate))
}
