use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::cond::{Conditioning, MelNorm};
use super::denoiser::{DenoiserConfig, DenoiserParams};
use super::sampler::restore;
use super::schedule::NoiseSchedule;
use super::train::{Adam, TrainConfig};
use crate::dsp::{MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::psrt::{self, DType};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub version: u32,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub mel: MelConfig,
    pub norm: MelNorm,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
}

/// Model weights plus everything needed to resume training or run inference.
///
/// On disk this is a directory: `manifest.json`, `params/<name>.psrt` and,
/// when optimiser state is present, `adam_m/<name>.psrt` and `adam_v/<name>.psrt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: DenoiserParams,
    pub adam: Option<Adam>,
}

fn tensor_path(dir: &Path, group: &str, name: &str) -> std::path::PathBuf {
    dir.join(group).join(format!("{name}.psrt"))
}

impl Checkpoint {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.manifest.train.schedule)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let cfg = &self.params.config;
        let names = cfg.tensor_names();
        let mut manifest = self.manifest.clone();
        manifest.model = *cfg;
        manifest.tensors = names
            .iter()
            .zip(&self.params.tensors)
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect();
        for (n, t) in names.iter().zip(&self.params.tensors) {
            psrt::write_2d(tensor_path(dir, "params", n), t, DType::F64)?;
        }
        if let Some(adam) = &self.adam {
            for (i, n) in names.iter().enumerate() {
                psrt::write_2d(tensor_path(dir, "adam_m", n), &adam.m[i], DType::F64)?;
                psrt::write_2d(tensor_path(dir, "adam_v", n), &adam.v[i], DType::F64)?;
            }
        }
        let mut json = serde_json::to_value(&manifest)?;
        if let Some(adam) = &self.adam {
            json["adam_steps"] = adam.t.into();
        }
        let mut text = serde_json::to_string_pretty(&json)?;
        text.push('\n');
        psrt::write_atomic(&dir.join(MANIFEST), text.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut json: serde_json::Value = serde_json::from_str(&text)?;
        let adam_steps = json.as_object_mut().and_then(|o| o.remove("adam_steps")).and_then(|v| v.as_u64());
        let manifest: CheckpointManifest = serde_json::from_value(json)?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} unsupported",
                manifest.version
            )));
        }
        manifest.train.validate()?;
        let names = manifest.model.tensor_names();
        let listed: Vec<&str> = manifest.tensors.iter().map(|t| t.name.as_str()).collect();
        if listed != names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Format("tensor list does not match the model layout".into()));
        }
        let read_group = |group: &str| -> Result<Vec<Array2<f64>>> {
            names.iter().map(|n| psrt::read_2d(tensor_path(dir, group, n))).collect()
        };
        let params = DenoiserParams::from_tensors(manifest.model, read_group("params")?)?;
        let adam = match adam_steps {
            Some(t) => {
                let m = read_group("adam_m")?;
                let v = read_group("adam_v")?;
                let shapes_ok = m.iter().chain(&v).zip(params.tensors.iter().chain(&params.tensors)).all(|(a, b)| a.dim() == b.dim());
                if !shapes_ok {
                    return Err(Error::Format("optimiser state shape mismatch".into()));
                }
                Some(Adam { m, v, t })
            }
            None => None,
        };
        Ok(Self {
            manifest,
            params,
            adam,
        })
    }

    /// Shallow-diffusion restoration of a log-mel under this model.
    pub fn restore_mel(
        &self,
        mel: &MelSpectrogram,
        cond: &Conditioning,
        depth: usize,
        stride: usize,
        seed: u64,
    ) -> Result<MelSpectrogram> {
        if mel.config != self.manifest.mel {
            return Err(Error::config("mel configuration differs from the checkpoint"));
        }
        if cond.dim() != self.params.config.cond_dim {
            return Err(Error::config(format!(
                "model expects {} conditioning features, got {}",
                self.params.config.cond_dim,
                cond.dim()
            )));
        }
        if cond.frames() != mel.frames() {
            return Err(Error::shape(mel.frames(), cond.frames()));
        }
        let norm = self.manifest.norm;
        let x = norm.normalize(&mel.data);
        let features = cond.features();
        let sched = self.schedule()?;
        let y = restore(&self.params, x.view(), features.view(), &sched, depth, stride, seed)?;
        Ok(MelSpectrogram {
            data: norm.denormalize(&y),
            config: mel.config,
        })
    }
}
