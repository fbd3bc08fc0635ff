use std::path::Path;

use serde::{Deserialize, Serialize};

use reshift_core::dataset::{FeatureConfig, PairsConfig};
use reshift_core::diffusion::TrainConfig;
use reshift_core::metrics::EvalConfig;
use reshift_core::pitch::PitchConfig;
use reshift_core::vocoder::VocoderConfig;
use reshift_core::{Error, Result, SAMPLE_RATE};

/// Everything a run can be configured with. Every section is optional in
/// the JSON file; missing sections and fields take the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Run seed. It replaces the seed field of every section below.
    pub seed: u64,
    pub shift: ShiftConfig,
    pub pairs: PairsConfig,
    pub train: TrainConfig,
    pub restore: RestoreConfig,
    pub eval: EvalSection,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftConfig {
    pub vocoder: VocoderConfig,
    /// Pitch marks for PSOLA.
    pub psola: PitchConfig,
    /// Tracker used to report the median F0 of input and output.
    pub measure: PitchConfig,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            vocoder: VocoderConfig::default(),
            psola: PitchConfig::default(),
            measure: PitchConfig {
                f_max: 1_800.0,
                ..PitchConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestoreConfig {
    /// Shallow start step; `None` uses the depth stored in the checkpoint.
    pub depth: Option<usize>,
    pub stride: Option<usize>,
    pub griffin_lim_iters: usize,
    /// F0 tracking for WAV inputs; the hop always follows the checkpoint's mel hop.
    pub pitch: PitchConfig,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            depth: None,
            stride: None,
            griffin_lim_iters: 32,
            pitch: PitchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub metrics: EvalConfig,
    /// RBF bandwidth for MMD; `None` picks the median pairwise distance.
    pub mmd_sigma: Option<f64>,
    pub kid_subset_size: usize,
    pub kid_subsets: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: EvalConfig::default(),
            mmd_sigma: None,
            kid_subset_size: 50,
            kid_subsets: 100,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Push the run seed into every section that carries one.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.shift.vocoder.seed = seed;
        self.pairs.seed = seed;
        self.pairs.vocoder.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate_shift(&self) -> Result<()> {
        for p in [&self.shift.vocoder.pitch, &self.shift.psola, &self.shift.measure] {
            p.validate(SAMPLE_RATE)?;
        }
        positive("vocoder n_fft", self.shift.vocoder.n_fft)
    }

    pub fn validate_restore(&self) -> Result<()> {
        self.restore.pitch.validate(SAMPLE_RATE)?;
        positive("griffin_lim_iters", self.restore.griffin_lim_iters)?;
        if let Some(s) = self.restore.stride {
            positive("stride", s)?;
        }
        Ok(())
    }

    pub fn validate_eval(&self) -> Result<()> {
        self.eval.metrics.mel.validate()?;
        self.eval.metrics.pitch.validate(self.eval.metrics.mel.sample_rate)?;
        if let Some(s) = self.eval.mmd_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig("mmd_sigma must be positive".into()));
            }
        }
        if self.eval.kid_subset_size < 2 {
            return Err(Error::InvalidConfig("kid_subset_size must be at least 2".into()));
        }
        positive("kid_subsets", self.eval.kid_subsets)
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidConfig(format!("{name} must be positive")));
    }
    Ok(())
}
