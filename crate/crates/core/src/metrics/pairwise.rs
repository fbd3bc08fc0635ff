use ndarray::{s, ArrayView2};

use crate::audio::AudioBuffer;
use crate::dsp::{mfcc, mfcc_from_log_mel, MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::pitch::F0Contour;

pub const SI_SDR_CAP_DB: f64 = 100.0;
pub const N_MFCC: usize = 13;
const LSD_FLOOR: f64 = 1e-8;

fn crop<'a>(a: ArrayView2<'a, f64>, b: ArrayView2<'a, f64>) -> Result<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(a.ncols(), b.ncols()));
    }
    let n = a.nrows().min(b.nrows());
    if a.nrows() != b.nrows() {
        log::warn!("cropping {} and {} frames to {n}", a.nrows(), b.nrows());
    }
    Ok((a.slice_move(s![..n, ..]), b.slice_move(s![..n, ..])))
}

/// `‖R - E‖_F / ‖R‖_F` on magnitudes; `None` when the reference is all zero.
pub fn spectral_convergence(reference: ArrayView2<f64>, estimate: ArrayView2<f64>) -> Result<Option<f64>> {
    let (r, e) = crop(reference, estimate)?;
    let num: f64 = r.iter().zip(e.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = r.iter().map(|a| a * a).sum();
    Ok((den > 0.0).then(|| (num / den).sqrt()))
}

/// Mean over frames of the RMS difference of `log10` power.
pub fn lsd(reference: ArrayView2<f64>, estimate: ArrayView2<f64>) -> Result<f64> {
    let (r, e) = crop(reference, estimate)?;
    if r.nrows() == 0 || r.ncols() == 0 {
        return Err(Error::EmptyInput);
    }
    let total: f64 = r
        .rows()
        .into_iter()
        .zip(e.rows())
        .map(|(rr, er)| {
            let ms: f64 = rr
                .iter()
                .zip(er.iter())
                .map(|(a, b)| {
                    let d = (a * a).max(LSD_FLOOR).log10() - (b * b).max(LSD_FLOOR).log10();
                    d * d
                })
                .sum::<f64>()
                / rr.len() as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / r.nrows() as f64)
}

/// Scale-invariant SDR in dB, capped at ±100. `None` for a silent reference.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Option<f64> {
    let n = reference.len().min(estimate.len());
    if reference.len() != estimate.len() {
        log::warn!("cropping {} and {} samples to {n}", reference.len(), estimate.len());
    }
    if n == 0 {
        return None;
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (mr, me) = (mean(&reference[..n]), mean(&estimate[..n]));
    let r: Vec<f64> = reference[..n].iter().map(|v| v - mr).collect();
    let e: Vec<f64> = estimate[..n].iter().map(|v| v - me).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return None;
    }
    let alpha = r.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = alpha * alpha * rr;
    let noise: f64 = r.iter().zip(&e).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    let db = if target == 0.0 {
        -SI_SDR_CAP_DB
    } else if noise == 0.0 {
        SI_SDR_CAP_DB
    } else {
        10.0 * (target / noise).log10()
    };
    Some(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

fn common_voiced(r: &F0Contour, e: &F0Contour) -> Vec<(f64, f64)> {
    if r.len() != e.len() {
        log::warn!("cropping contours of {} and {} frames", r.len(), e.len());
    }
    (0..r.len().min(e.len()))
        .filter(|&t| r.voiced[t] && e.voiced[t])
        .map(|t| (r.f0[t], e.f0[t]))
        .collect()
}

fn rms(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (n > 0).then(|| (s / n as f64).sqrt())
}

/// RMS of `1200 log2(est / ref)` over frames voiced in both.
pub fn f0_rmse_cents(reference: &F0Contour, estimate: &F0Contour) -> Option<f64> {
    rms(common_voiced(reference, estimate)
        .into_iter()
        .map(|(r, e)| 1200.0 * (e / r).log2()))
}

/// RMS of the natural-log F0 difference over frames voiced in both.
pub fn log_f0_rmse(reference: &F0Contour, estimate: &F0Contour) -> Option<f64> {
    rms(common_voiced(reference, estimate)
        .into_iter()
        .map(|(r, e)| e.ln() - r.ln()))
}

/// Percentage of frames whose voicing decisions differ.
pub fn vuv_error(reference: &F0Contour, estimate: &F0Contour) -> Result<f64> {
    let n = reference.len().min(estimate.len());
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let diff = (0..n)
        .filter(|&t| reference.voiced[t] != estimate.voiced[t])
        .count();
    Ok(100.0 * diff as f64 / n as f64)
}

fn mean_row_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    let (a, b) = crop(a, b)?;
    if a.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    let total: f64 = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .sum();
    Ok(total / a.nrows() as f64)
}

/// Mean per-frame Euclidean distance between 13-coefficient MFCCs.
pub fn mfcc_distance(reference: &AudioBuffer, estimate: &AudioBuffer, cfg: &MelConfig) -> Result<f64> {
    if reference.sample_rate != estimate.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: reference.sample_rate,
            got: estimate.sample_rate,
        });
    }
    let a = mfcc(reference, cfg, N_MFCC)?;
    let b = mfcc(estimate, cfg, N_MFCC)?;
    mean_row_distance(a.view(), b.view())
}

/// [`mfcc_distance`] computed directly from log-mels.
pub fn mel_mfcc_distance(reference: &MelSpectrogram, estimate: &MelSpectrogram) -> Result<f64> {
    let a = mfcc_from_log_mel(reference, N_MFCC)?;
    let b = mfcc_from_log_mel(estimate, N_MFCC)?;
    mean_row_distance(a.view(), b.view())
}

/// [`spectral_convergence`] on mel-band amplitudes.
pub fn mel_spectral_convergence(reference: &MelSpectrogram, estimate: &MelSpectrogram) -> Result<Option<f64>> {
    spectral_convergence(reference.amplitude().view(), estimate.amplitude().view())
}
