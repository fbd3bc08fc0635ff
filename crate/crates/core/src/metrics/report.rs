use serde::{Deserialize, Serialize};

use super::pairwise::{f0_rmse_cents, log_f0_rmse, lsd, mfcc_distance, si_sdr, spectral_convergence, vuv_error};
use crate::audio::AudioBuffer;
use crate::dsp::{magnitude_spectrogram, resample, MelConfig};
use crate::error::Result;
use crate::pitch::{estimate_f0, PitchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub mel: MelConfig,
    pub pitch: PitchConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::evaluation(),
            pitch: PitchConfig::evaluation(),
        }
    }
}

/// Pairwise metrics; `None` (JSON `null`) where a metric is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub sc: Option<f64>,
    pub lsd: Option<f64>,
    pub si_sdr_db: Option<f64>,
    pub f0_rmse_cents: Option<f64>,
    pub log_f0_rmse: Option<f64>,
    pub vuv_error_pct: Option<f64>,
    pub mfcc_l2: Option<f64>,
    pub mmd: Option<f64>,
    pub kid: Option<f64>,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 9] = [
        "sc",
        "lsd",
        "si_sdr_db",
        "f0_rmse_cents",
        "log_f0_rmse",
        "vuv_error_pct",
        "mfcc_l2",
        "mmd",
        "kid",
    ];

    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.sc,
            self.lsd,
            self.si_sdr_db,
            self.f0_rmse_cents,
            self.log_f0_rmse,
            self.vuv_error_pct,
            self.mfcc_l2,
            self.mmd,
            self.kid,
        ]
    }
}

/// All pairwise metrics of `estimate` against `reference`. The estimate is
/// resampled to the reference rate if needed; undefined metrics are `None`.
pub fn evaluate_pair(reference: &AudioBuffer, estimate: &AudioBuffer, cfg: &EvalConfig) -> Result<MetricsReport> {
    reference.require_non_empty()?;
    estimate.require_non_empty()?;
    let est = if estimate.sample_rate != reference.sample_rate {
        resample(estimate, reference.sample_rate)?
    } else {
        estimate.clone()
    };
    let mut mel = cfg.mel;
    mel.sample_rate = reference.sample_rate;
    mel.f_max = mel.f_max.min(reference.sample_rate as f64 / 2.0);

    let r_mag = magnitude_spectrogram(reference, &mel.spectral)?;
    let e_mag = magnitude_spectrogram(&est, &mel.spectral)?;
    let sc = spectral_convergence(r_mag.data.view(), e_mag.data.view())?;
    let lsd = Some(lsd(r_mag.data.view(), e_mag.data.view())?);
    let si = si_sdr(&reference.samples, &est.samples);

    let (f0_cents, log_f0, vuv) = match (estimate_f0(reference, &cfg.pitch), estimate_f0(&est, &cfg.pitch)) {
        (Ok(r), Ok(e)) => (f0_rmse_cents(&r, &e), log_f0_rmse(&r, &e), vuv_error(&r, &e).ok()),
        (r, e) => {
            log::warn!("pitch metrics skipped: {:?} {:?}", r.err(), e.err());
            (None, None, None)
        }
    };
    let mfcc = mfcc_distance(reference, &est, &mel).ok();
    Ok(MetricsReport {
        sc,
        lsd,
        si_sdr_db: si,
        f0_rmse_cents: f0_cents,
        log_f0_rmse: log_f0,
        vuv_error_pct: vuv,
        mfcc_l2: mfcc,
        mmd: None,
        kid: None,
    })
}
