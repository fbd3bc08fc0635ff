use ndarray::{s, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointManifest, CHECKPOINT_VERSION};
use super::cond::{Conditioning, MelNorm};
use super::denoiser::{DenoiserConfig, DenoiserParams};
use super::loss::{aux_losses, LossParts, MelF0Estimator};
use super::sampler::{forward_noise, gaussian};
use super::schedule::{NoiseSchedule, ScheduleConfig};
use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    /// Shallow start step used at inference.
    pub depth: usize,
    pub stride: usize,
    pub lambda_mel: f64,
    pub lambda_f0: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub batch_size: usize,
    pub block_frames: usize,
    pub steps: u64,
    pub validate_every: u64,
    pub seed: u64,
    pub channels: usize,
    pub layers: usize,
    /// Training steps are drawn from `1..=max_step`; 0 means all of `1..=K`.
    pub max_step: usize,
    /// Start the skip path from per-band statistics of the clean mels.
    pub band_prior: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            depth: 30,
            stride: 1,
            lambda_mel: 1.0,
            lambda_f0: 0.1,
            lr: 2e-4,
            lr_decay: 0.5,
            lr_decay_every: 10_000,
            batch_size: 32,
            block_frames: 512,
            steps: 2_000,
            validate_every: 200,
            seed: 0,
            channels: 64,
            layers: 4,
            max_step: 0,
            band_prior: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        NoiseSchedule::new(self.schedule)?;
        if self.depth > self.schedule.steps {
            return Err(Error::config(format!(
                "depth {} exceeds schedule length {}",
                self.depth, self.schedule.steps
            )));
        }
        if self.max_step > self.schedule.steps {
            return Err(Error::config("max_step exceeds schedule length"));
        }
        if self.stride == 0 || self.batch_size == 0 || self.block_frames == 0 {
            return Err(Error::config("stride, batch_size and block_frames must be positive"));
        }
        if !(self.lr >= 0.0 && self.lambda_mel >= 0.0 && self.lambda_f0 >= 0.0) {
            return Err(Error::config("lr and loss weights must be non-negative"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay_every > 0) {
            return Err(Error::config("lr_decay and lr_decay_every must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * self.lr_decay.powi((step / self.lr_decay_every) as i32)
    }
}

/// One aligned clip in normalised mel space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub clean: Array2<f64>,
    pub art: Array2<f64>,
    pub cond: Array2<f64>,
    pub voiced: Vec<bool>,
}

impl TrainExample {
    pub fn new(clean_mel: &Array2<f64>, art_mel: &Array2<f64>, cond: &Conditioning, norm: &MelNorm) -> Result<Self> {
        if clean_mel.dim() != art_mel.dim() {
            return Err(Error::shape(clean_mel.dim(), art_mel.dim()));
        }
        if cond.frames() != clean_mel.nrows() {
            return Err(Error::shape(clean_mel.nrows(), cond.frames()));
        }
        Ok(Self {
            clean: norm.normalize(clean_mel),
            art: norm.normalize(art_mel),
            cond: cond.features(),
            voiced: cond.voiced(),
        })
    }

    pub fn frames(&self) -> usize {
        self.clean.nrows()
    }
}

/// A single training operand: clean and degraded block, conditioning, step and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x0: Array2<f64>,
    pub mel_art: Array2<f64>,
    pub cond: Array2<f64>,
    pub voiced: Vec<bool>,
    pub t: usize,
    pub eps: Array2<f64>,
}

/// Adam moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &DenoiserParams) -> Self {
        let zeros: Vec<Array2<f64>> = params.tensors.iter().map(|t| Array2::zeros(t.dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut DenoiserParams, grads: &[Array2<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            Zip::from(&mut params.tensors[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                });
        }
    }
}

/// Independent stream per `(seed, step, item)`.
fn item_rng(seed: u64, step: u64, item: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&item.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Reserved step index for validation draws.
const VALIDATION_STREAM: u64 = u64::MAX;

pub struct Trainer {
    pub config: TrainConfig,
    pub mel: MelConfig,
    pub norm: MelNorm,
    pub params: DenoiserParams,
    pub adam: Adam,
    /// Completed optimisation steps.
    pub step: u64,
    schedule: NoiseSchedule,
    f0: MelF0Estimator,
}

impl Trainer {
    pub fn new(config: TrainConfig, mel: MelConfig, norm: MelNorm, cond_dim: usize) -> Result<Self> {
        config.validate()?;
        let model = DenoiserConfig {
            n_mels: mel.n_mels,
            channels: config.channels,
            cond_dim,
            steps: config.schedule.steps,
            layers: config.layers,
        };
        let params = DenoiserParams::init(model, config.seed)?;
        Self::assemble(config, mel, norm, params, None, 0)
    }

    fn assemble(
        config: TrainConfig,
        mel: MelConfig,
        norm: MelNorm,
        params: DenoiserParams,
        adam: Option<Adam>,
        step: u64,
    ) -> Result<Self> {
        let adam = adam.unwrap_or_else(|| Adam::new(&params));
        Ok(Self {
            schedule: NoiseSchedule::new(config.schedule)?,
            f0: MelF0Estimator::new(&mel)?,
            config,
            mel,
            norm,
            params,
            adam,
            step,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let m = ckpt.manifest;
        Self::assemble(m.train, m.mel, m.norm, ckpt.params, ckpt.adam, m.step)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            manifest: CheckpointManifest {
                version: CHECKPOINT_VERSION,
                model: self.params.config,
                train: self.config,
                mel: self.mel,
                norm: self.norm,
                step: self.step,
                tensors: Vec::new(),
            },
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
        }
    }

    /// [`Trainer::new`] followed by [`Trainer::fit_prior`] when the config asks for it.
    pub fn for_data(config: TrainConfig, mel: MelConfig, norm: MelNorm, data: &[TrainExample]) -> Result<Self> {
        let first = data.first().ok_or(Error::EmptyInput)?;
        let mut trainer = Self::new(config, mel, norm, first.cond.ncols())?;
        if config.band_prior {
            trainer.fit_prior(data)?;
        }
        Ok(trainer)
    }

    /// Start the skip path from per-band Gaussian statistics of the clean
    /// training mels.
    pub fn fit_prior(&mut self, data: &[TrainExample]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let m = self.params.config.n_mels;
        let (mut sum, mut sq, mut n) = (vec![0.0; m], vec![0.0; m], 0.0);
        for ex in data {
            for row in ex.clean.rows() {
                for (b, &v) in row.iter().enumerate() {
                    sum[b] += v;
                    sq[b] += v * v;
                }
                n += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, mu)| (q / n - mu * mu).max(0.0)).collect();
        self.params.set_skip_prior(&self.schedule, &mean, &var)
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn draw_item(&self, data: &[TrainExample], rng: &mut ChaCha8Rng, pick: Option<usize>) -> TrainItem {
        let ex = &data[pick.unwrap_or_else(|| rng.random_range(0..data.len()))];
        let len = ex.frames().min(self.config.block_frames);
        let start = rng.random_range(0..=ex.frames() - len);
        let max_t = match self.config.max_step {
            0 => self.schedule.steps(),
            m => m,
        };
        let t = rng.random_range(1..=max_t);
        let eps = gaussian(len, ex.clean.ncols(), rng);
        TrainItem {
            x0: ex.clean.slice(s![start..start + len, ..]).to_owned(),
            mel_art: ex.art.slice(s![start..start + len, ..]).to_owned(),
            cond: ex.cond.slice(s![start..start + len, ..]).to_owned(),
            voiced: ex.voiced[start..start + len].to_vec(),
            t,
            eps,
        }
    }

    /// The batch drawn for optimisation step `step`.
    pub fn batch(&self, data: &[TrainExample], step: u64) -> Vec<TrainItem> {
        (0..self.config.batch_size as u64)
            .map(|i| self.draw_item(data, &mut item_rng(self.config.seed, step, i), None))
            .collect()
    }

    /// Loss and parameter gradients for one item, computed on the single-step
    /// estimate `x̂0`.
    pub fn item_loss_grad(&self, params: &DenoiserParams, item: &TrainItem) -> Result<(LossParts, Vec<Array2<f64>>)> {
        let sched = &self.schedule;
        let ab = sched.alpha_bar(item.t);
        let x_t = forward_noise(item.x0.view(), item.t, item.eps.view(), sched)?;
                let (eps_hat, cache) = params.forward_cached(x_t.view(), item.t, item.cond.view())?;
        let n = eps_hat.len() as f64;
        // d x̂0 / d ε̂
        let c = -((1.0 - ab) / ab).sqrt();
        let x0_hat = Zip::from(&x_t).and(&eps_hat).map_collect(|&x, &e| x / ab.sqrt() + c * e);
        let scale = self.norm.scale();

        let mut d_eps = Zip::from(&eps_hat).and(&item.eps).map_collect(|&h, &e| 2.0 * (h - e) / n);
        let l_diff = Zip::from(&eps_hat).and(&item.eps).fold(0.0, |a, &h, &e| a + (h - e) * (h - e)) / n;

        let l_mel = scale * Zip::from(&x0_hat).and(&item.x0).fold(0.0, |a, &h, &r| a + (h - r).abs()) / n;
        let w_mel = self.config.lambda_mel * scale * c / n;
        Zip::from(&mut d_eps)
            .and(&x0_hat)
            .and(&item.x0)
            .for_each(|d, &h, &r| *d += w_mel * (h - r).signum());

        // the F0 read-out is not differentiable: it is reported, not followed
        let l_f0 = if self.config.lambda_f0 > 0.0 {
            let mel_hat = self.norm.denormalize(&x0_hat);
            let mel_ref = self.norm.denormalize(&item.x0);
            let reference: Vec<f64> = self
                .f0
                .estimate(mel_ref.view())
                .into_iter()
                .zip(&item.voiced)
                .map(|(f, &v)| if v { f } else { 0.0 })
                .collect();
            let estimate = self.f0.estimate(mel_hat.view());
            aux_losses(mel_hat.view(), mel_ref.view(), &estimate, &reference)?.1
        } else {
            0.0
        };
        let parts = LossParts {
            diffusion: l_diff,
            mel: l_mel,
            f0: l_f0,
            total: super::loss::total_loss(l_diff, l_mel, l_f0, self.config.lambda_mel, self.config.lambda_f0),
        };
        let (grads, _) = params.backward(&cache, d_eps.view());
        Ok((parts, grads))
    }

    /// Mean loss and gradients over a batch; items are evaluated in parallel
    /// and reduced in order.
    pub fn batch_loss_grad(&self, params: &DenoiserParams, batch: &[TrainItem]) -> Result<(LossParts, Vec<Array2<f64>>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let results = par::map(batch, |item| self.item_loss_grad(params, item));
        let w = 1.0 / batch.len() as f64;
        let mut parts = LossParts::default();
        let mut grads: Vec<Array2<f64>> = params.tensors.iter().map(|t| Array2::zeros(t.dim())).collect();
        for r in results {
            let (p, g) = r?;
            parts.add_scaled(&p, w);
            for (acc, g) in grads.iter_mut().zip(&g) {
                acc.scaled_add(w, g);
            }
        }
        Ok((parts, grads))
    }

    /// One Adam step on a freshly drawn batch.
    pub fn train_step(&mut self, data: &[TrainExample]) -> Result<LossParts> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let batch = self.batch(data, self.step);
        let (parts, grads) = self.batch_loss_grad(&self.params, &batch)?;
        if !parts.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: self.step });
        }
        let lr = self.config.lr_at(self.step);
        self.adam.update(&mut self.params, &grads, lr);
        self.step += 1;
        Ok(parts)
    }

    /// Loss on every example with a fixed draw of steps and noise; no update.
    pub fn validation_loss(&self, data: &[TrainExample]) -> Result<LossParts> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let batch: Vec<TrainItem> = (0..data.len())
            .map(|i| self.draw_item(data, &mut item_rng(self.config.seed, VALIDATION_STREAM, i as u64), Some(i)))
            .collect();
        Ok(self.batch_loss_grad(&self.params, &batch)?.0)
    }
}
