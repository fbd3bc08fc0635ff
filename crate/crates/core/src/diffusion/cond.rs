use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

const F0_LO: f64 = 65.0;
const F0_HI: f64 = 800.0;
const VOLUME_FLOOR: f64 = 1e-5;

/// Frame-aligned conditioning: F0 in Hz (0 when unvoiced), RMS volume, and
/// optional content embeddings of any width.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub f0: Vec<f64>,
    pub volume: Vec<f64>,
    pub content: Option<Array2<f64>>,
}

impl Conditioning {
    pub fn new(f0: Vec<f64>, volume: Vec<f64>, content: Option<Array2<f64>>) -> Result<Self> {
        if f0.len() != volume.len() {
            return Err(Error::shape(f0.len(), volume.len()));
        }
        if let Some(c) = &content {
            if c.nrows() != f0.len() {
                return Err(Error::shape(f0.len(), c.nrows()));
            }
        }
        if f0.iter().chain(&volume).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("f0 and volume must be finite and non-negative"));
        }
        Ok(Self { f0, volume, content })
    }

    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    pub fn dim(&self) -> usize {
        3 + self.content.as_ref().map_or(0, |c| c.ncols())
    }

    pub fn voiced(&self) -> Vec<bool> {
        self.f0.iter().map(|&f| f > 0.0).collect()
    }

    /// Network input: scaled log F0, voicing flag, scaled log volume, content.
    pub fn features(&self) -> Array2<f64> {
        let n = self.frames();
        let mut out = Array2::zeros((n, self.dim()));
        let (lo, hi) = (F0_LO.ln(), F0_HI.ln());
        for t in 0..n {
            let f = self.f0[t];
            if f > 0.0 {
                out[[t, 0]] = 2.0 * (f.ln() - lo) / (hi - lo) - 1.0;
                out[[t, 1]] = 1.0;
            }
            out[[t, 2]] = self.volume[t].max(VOLUME_FLOOR).ln() / 5.0 + 1.0;
        }
        if let Some(c) = &self.content {
            out.slice_mut(s![.., 3..]).assign(c);
        }
        out
    }

    /// Frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames() {
            return Err(Error::shape(start + len, self.frames()));
        }
        Ok(Self {
            f0: self.f0[start..start + len].to_vec(),
            volume: self.volume[start..start + len].to_vec(),
            content: self
                .content
                .as_ref()
                .map(|c| c.slice(s![start..start + len, ..]).to_owned()),
        })
    }
}

/// Affine map from log-mel values onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelNorm {
    pub min: f64,
    pub max: f64,
}

impl MelNorm {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::config(format!("invalid mel range [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    /// Range spanned by a set of mels.
    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for m in mels {
            for &v in m {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo == hi {
            hi = lo + 1.0;
        }
        Self::new(lo, hi)
    }

    /// Log-mel units per normalised unit.
    pub fn scale(&self) -> f64 {
        (self.max - self.min) / 2.0
    }

    pub fn normalize(&self, m: &Array2<f64>) -> Array2<f64> {
        let s = self.scale();
        m.mapv(|v| (v - self.min) / s - 1.0)
    }

    pub fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let s = self.scale();
        x.mapv(|v| (v + 1.0) * s + self.min)
    }

    pub fn normalize_mel(&self, mel: &MelSpectrogram) -> Array2<f64> {
        self.normalize(&mel.data)
    }
}
