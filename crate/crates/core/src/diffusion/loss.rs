use ndarray::{ArrayView2, Zip};

use crate::dsp::{mel_band_centers, MelConfig};
use crate::error::{Error, Result};

/// Components of the training objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossParts {
    pub diffusion: f64,
    pub mel: f64,
    pub f0: f64,
    pub total: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.diffusion.is_finite() && self.mel.is_finite() && self.f0.is_finite() && self.total.is_finite()
    }

    pub(crate) fn add_scaled(&mut self, other: &LossParts, w: f64) {
        self.diffusion += w * other.diffusion;
        self.mel += w * other.mel;
        self.f0 += w * other.f0;
        self.total += w * other.total;
    }
}

/// Mean squared error between true and predicted noise.
pub fn diffusion_loss(eps: ArrayView2<f64>, eps_hat: ArrayView2<f64>) -> Result<f64> {
    if eps.dim() != eps_hat.dim() {
        return Err(Error::shape(eps.dim(), eps_hat.dim()));
    }
    if eps.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = Zip::from(&eps).and(&eps_hat).fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
    Ok(sum / eps.len() as f64)
}

/// `(mean |M̂ - M|, mean |f̂0 - f0|)`, the latter over frames voiced in `f0_ref`
/// (zero when none are).
pub fn aux_losses(
    mel_hat: ArrayView2<f64>,
    mel_ref: ArrayView2<f64>,
    f0_hat: &[f64],
    f0_ref: &[f64],
) -> Result<(f64, f64)> {
    if mel_hat.dim() != mel_ref.dim() {
        return Err(Error::shape(mel_ref.dim(), mel_hat.dim()));
    }
    if f0_hat.len() != f0_ref.len() || f0_ref.len() != mel_ref.nrows() {
        return Err(Error::shape(mel_ref.nrows(), (f0_hat.len(), f0_ref.len())));
    }
    if mel_ref.is_empty() {
        return Err(Error::EmptyInput);
    }
    let l_mel = Zip::from(&mel_hat).and(&mel_ref).fold(0.0, |acc, a, b| acc + (a - b).abs()) / mel_ref.len() as f64;
    let (sum, n) = f0_hat
        .iter()
        .zip(f0_ref)
        .filter(|(_, &r)| r > 0.0)
        .fold((0.0, 0usize), |(s, n), (h, r)| (s + (h - r).abs(), n + 1));
    let l_f0 = if n == 0 { 0.0 } else { sum / n as f64 };
    Ok((l_mel, l_f0))
}

pub fn total_loss(l_diff: f64, l_mel: f64, l_f0: f64, lambda_mel: f64, lambda_f0: f64) -> f64 {
    l_diff + lambda_mel * l_mel + lambda_f0 * l_f0
}

/// Coarse F0 read off a log-mel frame: the loudest band inside the singing
/// range, refined by a power-weighted mean over it and its two neighbours.
/// Not differentiable; it only reports how far the estimate's F0 drifts.
#[derive(Debug, Clone, PartialEq)]
pub struct MelF0Estimator {
    bands: Vec<usize>,
    centers: Vec<f64>,
}

impl MelF0Estimator {
    pub const F_LO: f64 = 65.0;
    pub const F_HI: f64 = 800.0;

    pub fn from_centers(all_centers: &[f64]) -> Result<Self> {
        let bands: Vec<usize> = (0..all_centers.len())
            .filter(|&b| (Self::F_LO..=Self::F_HI).contains(&all_centers[b]))
            .collect();
        if bands.is_empty() {
            return Err(Error::config("no mel band centre lies in the F0 range"));
        }
        let centers = bands.iter().map(|&b| all_centers[b]).collect();
        Ok(Self { bands, centers })
    }

    pub fn new(cfg: &MelConfig) -> Result<Self> {
        Self::from_centers(&mel_band_centers(cfg))
    }

    fn frame(&self, row: ndarray::ArrayView1<f64>) -> f64 {
        let vals: Vec<f64> = self.bands.iter().map(|&b| row[b]).collect();
        let peak = (0..vals.len()).fold(0, |best, j| if vals[j] > vals[best] { j } else { best });
        let lo = peak.saturating_sub(1);
        let hi = (peak + 2).min(vals.len());
        let (mut num, mut den) = (0.0, 0.0);
        for j in lo..hi {
            let w = (vals[j] - vals[peak]).exp();
            num += w * self.centers[j];
            den += w;
        }
        num / den
    }

    /// Per-frame estimate in Hz for a log-mel matrix.
    pub fn estimate(&self, mel: ArrayView2<f64>) -> Vec<f64> {
        mel.rows().into_iter().map(|r| self.frame(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diffusion_loss_cases() {
        let a = array![[1.0, 1.0]];
        let b = array![[0.0, 0.0]];
        assert_eq!(diffusion_loss(a.view(), b.view()).unwrap(), 1.0);
        assert_eq!(diffusion_loss(a.view(), a.view()).unwrap(), 0.0);
        assert!(diffusion_loss(a.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn aux_loss_cases() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let f = [220.0, 0.0];
        assert_eq!(aux_losses(m.view(), m.view(), &f, &f).unwrap(), (0.0, 0.0));
        let shifted = m.mapv(|v| v - 0.7);
        let (l, _) = aux_losses(shifted.view(), m.view(), &f, &f).unwrap();
        assert!((l - 0.7).abs() < 1e-12);
        let (_, lf) = aux_losses(m.view(), m.view(), &[440.0, 440.0], &[220.0, 220.0]).unwrap();
        assert_eq!(lf, 220.0);
        assert!(aux_losses(m.view(), m.view(), &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(1.5, 2.0, 3.0, 0.0, 0.0), 1.5);
        assert!((total_loss(1.0, 2.0, 3.0, 0.5, 0.1) - 2.3).abs() < 1e-12);
    }

    #[test]
    fn estimator_picks_loud_band() {
        let centers = [30.0, 100.0, 200.0, 400.0, 900.0];
        let e = MelF0Estimator::from_centers(&centers).unwrap();
        let m = array![[50.0, 0.0, 40.0, 0.0, 50.0]];
        assert!((e.estimate(m.view())[0] - 200.0).abs() < 1e-6);
        let even = array![[0.0, 1.0, 1.0, 1.0, 0.0]];
        assert!((e.estimate(even.view())[0] - 150.0).abs() < 1e-9);
        assert!(MelF0Estimator::from_centers(&[10.0, 2000.0]).is_err());
    }

    #[test]
    fn estimator_tracks_sawtooth_fundamental() {
        use crate::dsp::log_mel;
        let cfg = MelConfig::default();
        let e = MelF0Estimator::new(&cfg).unwrap();
        for f0 in [150.0, 220.0, 330.0] {
            let mel = log_mel(&crate::synth::sawtooth(f0, 0.5, 44_100, 0.3), &cfg).unwrap();
            let est = e.estimate(mel.data.view());
            let mid = est[est.len() / 2];
            // within one band spacing of the true fundamental
            assert!((mid / f0).log2().abs() < 0.15, "{f0}: {mid}");
        }
    }
}
