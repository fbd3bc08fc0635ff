use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sampler::EpsModel;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Temporal convolution stack: a kernel-3 input layer, residual kernel-3
/// layers, a step embedding added after the first layer, conditioning
/// projected into every layer, and a bias-free output projection. A per-step,
/// per-band affine map of the input is added to the output so noise can pass
/// straight through instead of being squeezed through the channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub cond_dim: usize,
    /// Diffusion steps `K`; the step table has `K + 1` rows.
    pub steps: usize,
    pub layers: usize,
}

impl DenoiserConfig {
    pub fn new(n_mels: usize, cond_dim: usize, steps: usize) -> Self {
        Self {
            n_mels,
            channels: 64,
            cond_dim,
            steps,
            layers: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.channels == 0 || self.steps == 0 || self.layers == 0 {
            return Err(Error::config("denoiser dimensions must be positive"));
        }
        Ok(())
    }

    pub fn tensor_count(&self) -> usize {
        5 * self.layers + 4
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.tensor_count());
        for l in 0..self.layers {
            for part in ["w0", "w1", "w2", "bias", "cond"] {
                names.push(format!("layer{l}.{part}"));
            }
        }
        names.push("step_table".into());
        names.push("out".into());
        names.push("skip".into());
        names.push("skip_bias".into());
        names
    }

    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let c = self.channels;
        let mut shapes = Vec::with_capacity(self.tensor_count());
        for l in 0..self.layers {
            let fan_in = if l == 0 { self.n_mels } else { c };
            shapes.extend([(fan_in, c), (fan_in, c), (fan_in, c), (1, c), (self.cond_dim, c)]);
        }
        shapes.push((self.steps + 1, c));
        shapes.push((c, self.n_mels));
        shapes.push((self.steps + 1, self.n_mels));
        shapes.push((self.steps + 1, self.n_mels));
        shapes
    }

    fn step_table_index(&self) -> usize {
        5 * self.layers
    }

    fn out_index(&self) -> usize {
        5 * self.layers + 1
    }

    fn skip_index(&self) -> usize {
        5 * self.layers + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    /// Tensors in [`DenoiserConfig::tensor_names`] order.
    pub tensors: Vec<Array2<f64>>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct DenoiserCache {
    step: usize,
    cond: Array2<f64>,
    /// Layer inputs `h_0 = x, ..., h_L`.
    inputs: Vec<Array2<f64>>,
    /// `tanh` outputs per layer.
    acts: Vec<Array2<f64>>,
}

/// `out[t] = h[t-1] w0 + h[t] w1 + h[t+1] w2`, zero padded.
fn conv3(h: ArrayView2<f64>, w: &[Array2<f64>]) -> Array2<f64> {
    let f = h.nrows();
    let mut out = h.dot(&w[1]);
    if f > 1 {
        let mut lower = out.slice_mut(s![1.., ..]);
        lower += &h.slice(s![..f - 1, ..]).dot(&w[0]);
        let mut upper = out.slice_mut(s![..f - 1, ..]);
        upper += &h.slice(s![1.., ..]).dot(&w[2]);
    }
    out
}

/// Weight gradients of [`conv3`] for upstream gradient `g`.
fn conv3_weight_grads(h: ArrayView2<f64>, g: ArrayView2<f64>) -> [Array2<f64>; 3] {
    let f = h.nrows();
    let w1 = h.t().dot(&g);
    if f > 1 {
        let w0 = h.slice(s![..f - 1, ..]).t().dot(&g.slice(s![1.., ..]));
        let w2 = h.slice(s![1.., ..]).t().dot(&g.slice(s![..f - 1, ..]));
        [w0, w1, w2]
    } else {
        let z = Array2::zeros(w1.dim());
        [z.clone(), w1, z]
    }
}

/// Input gradient of [`conv3`].
fn conv3_input_grad(g: ArrayView2<f64>, w: &[Array2<f64>]) -> Array2<f64> {
    let f = g.nrows();
    let mut dh = g.dot(&w[1].t());
    if f > 1 {
        let mut upper = dh.slice_mut(s![..f - 1, ..]);
        upper += &g.slice(s![1.., ..]).dot(&w[0].t());
        let mut lower = dh.slice_mut(s![1.., ..]);
        lower += &g.slice(s![..f - 1, ..]).dot(&w[2].t());
    }
    dh
}

fn sinusoidal_table(rows: usize, channels: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, channels), |(k, c)| {
        let i = (c / 2) as f64;
        let freq = 1.0 / 10_000f64.powf(2.0 * i / channels as f64);
        let arg = k as f64 * freq;
        0.1 * if c % 2 == 0 { arg.sin() } else { arg.cos() }
    })
}

impl DenoiserParams {
    /// Seeded scaled-normal initialisation; sinusoidal step table.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = config.tensor_names();
        let tensors = config
            .tensor_shapes()
            .into_iter()
            .zip(&names)
            .map(|((r, c), name)| {
                if name == "step_table" {
                    return sinusoidal_table(r, c);
                }
                if name.ends_with("bias") || name == "skip" {
                    return Array2::zeros((r, c));
                }
                let fan_in = if name.ends_with(".w0") || name.ends_with(".w1") || name.ends_with(".w2") {
                    3 * r
                } else {
                    r.max(1)
                };
                let gain = if name == "out" { 0.1 } else { 1.0 };
                let dist = Normal::new(0.0, gain / (fan_in as f64).sqrt()).unwrap();
                Array2::from_shape_simple_fn((r, c), || dist.sample(&mut rng))
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config.tensor_shapes().into_iter().map(Array2::zeros).collect();
        Ok(Self { config, tensors })
    }

    pub fn from_tensors(config: DenoiserConfig, tensors: Vec<Array2<f64>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.tensor_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::shape(shapes.len(), tensors.len()));
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.dim() != *s {
                return Err(Error::shape(*s, t.dim()));
            }
        }
        if tensors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }
        Ok(Self { config, tensors })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Set the skip path to the posterior-mean noise estimate of data whose
    /// bands are independent Gaussians with the given means and variances.
    pub fn set_skip_prior(&mut self, sched: &NoiseSchedule, mean: &[f64], var: &[f64]) -> Result<()> {
        let m = self.config.n_mels;
        if sched.steps() != self.config.steps {
            return Err(Error::shape(self.config.steps, sched.steps()));
        }
        if mean.len() != m || var.len() != m {
            return Err(Error::shape(m, (mean.len(), var.len())));
        }
        if var.iter().chain(mean).any(|v| !v.is_finite()) || var.iter().any(|&v| v < 0.0) {
            return Err(Error::config("band statistics must be finite with non-negative variance"));
        }
        let idx = self.config.skip_index();
        for t in 1..=self.config.steps {
            let ab = sched.alpha_bar(t);
            let noise = 1.0 - ab;
            for b in 0..m {
                // eps_hat = sigma (x_t - sqrt(ab) mu) / (ab v + sigma^2)
                let gain = noise.sqrt() / (ab * var[b] + noise);
                self.tensors[idx][[t, b]] = gain;
                self.tensors[idx + 1][[t, b]] = -gain * ab.sqrt() * mean[b];
            }
        }
        Ok(())
    }

    fn layer(&self, l: usize) -> &[Array2<f64>] {
        &self.tensors[5 * l..5 * l + 5]
    }

    fn check_inputs(&self, x: ArrayView2<f64>, t: usize, cond: ArrayView2<f64>) -> Result<()> {
        let c = &self.config;
        if x.ncols() != c.n_mels {
            return Err(Error::shape(c.n_mels, x.ncols()));
        }
        if cond.dim() != (x.nrows(), c.cond_dim) {
            return Err(Error::shape((x.nrows(), c.cond_dim), cond.dim()));
        }
        if t > c.steps {
            return Err(Error::config(format!("step {t} beyond table size {}", c.steps)));
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>, t: usize, cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, t, cond)?.0)
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<f64>,
        t: usize,
        cond: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, DenoiserCache)> {
        self.check_inputs(x, t, cond)?;
        let cfg = &self.config;
        let mut inputs = Vec::with_capacity(cfg.layers + 1);
        let mut acts = Vec::with_capacity(cfg.layers);
        let mut h = x.to_owned();
        for l in 0..cfg.layers {
            let p = self.layer(l);
            let mut a = conv3(h.view(), &p[..3]);
            a += &p[3].row(0);
            a += &cond.dot(&p[4]);
            let z = a.mapv(f64::tanh);
            let next = if l == 0 {
                let step = self.tensors[cfg.step_table_index()].row(t).to_owned();
                &z + &step
            } else {
                &h + &z
            };
            inputs.push(h);
            acts.push(z);
            h = next;
        }
        let mut out = h.dot(&self.tensors[cfg.out_index()]);
        out += &(&x * &self.tensors[cfg.skip_index()].row(t));
        out += &self.tensors[cfg.skip_index() + 1].row(t);
        inputs.push(h);
        let cache = DenoiserCache {
            step: t,
            cond: cond.to_owned(),
            inputs,
            acts,
        };
        Ok((out, cache))
    }

    /// Gradients of a scalar loss with respect to every tensor and to the
    /// input, given `d loss / d output`.
    pub fn backward(&self, cache: &DenoiserCache, d_out: ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let cfg = &self.config;
        let mut grads: Vec<Array2<f64>> = self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect();
        let h_last = &cache.inputs[cfg.layers];
        grads[cfg.out_index()] = h_last.t().dot(&d_out);
        let x = &cache.inputs[0];
        let skip = self.tensors[cfg.skip_index()].row(cache.step);
        grads[cfg.skip_index()]
            .row_mut(cache.step)
            .assign(&(x * &d_out).sum_axis(Axis(0)));
        grads[cfg.skip_index() + 1]
            .row_mut(cache.step)
            .assign(&d_out.sum_axis(Axis(0)));
        let mut dh = d_out.dot(&self.tensors[cfg.out_index()].t());
        for l in (0..cfg.layers).rev() {
            if l == 0 {
                let row: Array1<f64> = dh.sum_axis(Axis(0));
                grads[cfg.step_table_index()].row_mut(cache.step).assign(&row);
            }
            let z = &cache.acts[l];
            let g = &dh * &z.mapv(|v| 1.0 - v * v);
            let h = &cache.inputs[l];
            let [w0, w1, w2] = conv3_weight_grads(h.view(), g.view());
            grads[5 * l] = w0;
            grads[5 * l + 1] = w1;
            grads[5 * l + 2] = w2;
            grads[5 * l + 3] = g.sum_axis(Axis(0)).insert_axis(Axis(0));
            grads[5 * l + 4] = cache.cond.t().dot(&g);
            let through = conv3_input_grad(g.view(), &self.layer(l)[..3]);
            dh = if l == 0 { through } else { dh + through };
        }
        dh += &(&d_out * &skip);
        (grads, dh)
    }
}

impl EpsModel for DenoiserParams {
    fn predict_eps(&self, x_t: ArrayView2<f64>, t: usize, cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(x_t, t, cond)
    }
}
