use ndarray::{Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Anything that predicts the noise component of `x_t`.
pub trait EpsModel {
    fn predict_eps(&self, x_t: ArrayView2<f64>, t: usize, cond: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// Knows the clean target and returns the exact noise; used to check the sampler.
#[derive(Debug, Clone)]
pub struct OracleDenoiser<'a> {
    pub x0: ArrayView2<'a, f64>,
    pub schedule: &'a NoiseSchedule,
}

impl EpsModel for OracleDenoiser<'_> {
    fn predict_eps(&self, x_t: ArrayView2<f64>, t: usize, _cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        let ab = self.schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(Zip::from(&x_t).and(&self.x0).map_collect(|&x, &c| (x - a * c) / b))
    }
}

fn same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.dim(), b.dim()));
    }
    Ok(())
}

/// Standard normal matrix drawn row-major from a seeded ChaCha stream.
pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) ε`.
pub fn forward_noise(x0: ArrayView2<f64>, t: usize, eps: ArrayView2<f64>, sched: &NoiseSchedule) -> Result<Array2<f64>> {
    same_shape(x0, eps)?;
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(&x0).and(&eps).map_collect(|&x, &e| a * x + b * e))
}

/// `x̂0 = (x_t - sqrt(1 - ᾱ_t) ε̂) / sqrt(ᾱ_t)`.
pub fn predict_x0(x_t: ArrayView2<f64>, eps_hat: ArrayView2<f64>, t: usize, sched: &NoiseSchedule) -> Result<Array2<f64>> {
    same_shape(x_t, eps_hat)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(&x_t).and(&eps_hat).map_collect(|&x, &e| (x - b * e) / a))
}

/// Deterministic (η = 0) update from `t` to any earlier `t_prev`.
pub fn ddim_step(
    x_t: ArrayView2<f64>,
    eps_hat: ArrayView2<f64>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if t_prev >= t {
        return Err(Error::config(format!("DDIM step must go backwards, got {t} -> {t_prev}")));
    }
    sched.check_step(t)?;
    let x0 = predict_x0(x_t, eps_hat, t, sched)?;
    if t_prev == 0 {
        return Ok(x0);
    }
    let ab = sched.alpha_bar(t_prev);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(&x0).and(&eps_hat).map_collect(|&x, &e| a * x + b * e))
}

/// Noise the degraded mel to step `t`.
pub fn shallow_init(mel_art: ArrayView2<f64>, t: usize, z: ArrayView2<f64>, sched: &NoiseSchedule) -> Result<Array2<f64>> {
    forward_noise(mel_art, t, z, sched)
}

/// Visited steps `t, t - stride, ..., 0`; the last jump may be shorter.
pub fn timesteps(t: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    let mut out = vec![t];
    let mut k = t;
    while k > 0 {
        k = k.saturating_sub(stride);
        out.push(k);
    }
    Ok(out)
}

/// Full shallow reverse process. Returns the estimate of the clean input.
pub fn restore(
    model: &impl EpsModel,
    mel_art: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    sched: &NoiseSchedule,
    t: usize,
    stride: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    Ok(restore_traced(model, mel_art, cond, sched, t, stride, seed)?.0)
}

/// [`restore`] that also returns the state after every update.
pub fn restore_traced(
    model: &impl EpsModel,
    mel_art: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    sched: &NoiseSchedule,
    t: usize,
    stride: usize,
    seed: u64,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    if t > sched.steps() {
        return Err(Error::config(format!("T = {t} exceeds K = {}", sched.steps())));
    }
    if cond.nrows() != mel_art.nrows() {
        return Err(Error::shape(mel_art.nrows(), cond.nrows()));
    }
    let steps = timesteps(t, stride)?;
    if t == 0 {
        return Ok((mel_art.to_owned(), Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian(mel_art.nrows(), mel_art.ncols(), &mut rng);
    let mut x = shallow_init(mel_art, t, z.view(), sched)?;
    let mut trace = Vec::with_capacity(steps.len() - 1);
    for w in steps.windows(2) {
        let eps = model.predict_eps(x.view(), w[0], cond)?;
        same_shape(x.view(), eps.view())?;
        x = ddim_step(x.view(), eps.view(), w[0], w[1], sched)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: w[0] as u64 });
        }
        trace.push(x.clone());
    }
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rand_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
        gaussian(r, c, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    struct Zero;
    impl EpsModel for Zero {
        fn predict_eps(&self, x: ArrayView2<f64>, _t: usize, _c: ArrayView2<f64>) -> Result<Array2<f64>> {
            Ok(Array2::zeros(x.dim()))
        }
    }

    #[test]
    fn forward_noise_endpoints() {
        let s = NoiseSchedule::default();
        let x0 = rand_mat(4, 6, 1);
        let eps = rand_mat(4, 6, 2);
        let zero = Array2::zeros((4, 6));
        let a = s.alpha_bar(40);
        let y = forward_noise(x0.view(), 40, zero.view(), &s).unwrap();
        assert!(y.iter().zip(&x0).all(|(y, x)| (y - a.sqrt() * x).abs() < 1e-15));
        let y = forward_noise(zero.view(), 40, eps.view(), &s).unwrap();
        assert!(y.iter().zip(&eps).all(|(y, e)| (y - (1.0 - a).sqrt() * e).abs() < 1e-15));
        assert!(forward_noise(x0.view(), 0, eps.view(), &s).is_err());
        assert!(forward_noise(x0.view(), 3, rand_mat(4, 5, 0).view(), &s).is_err());
    }

    #[test]
    fn zero_eps_rescales() {
        let s = NoiseSchedule::default();
        let x = rand_mat(3, 5, 4);
        let zero = Array2::zeros((3, 5));
        let x0 = predict_x0(x.view(), zero.view(), 20, &s).unwrap();
        let f = 1.0 / s.alpha_bar(20).sqrt();
        assert!(x0.iter().zip(&x).all(|(a, b)| (a - f * b).abs() < 1e-14));
        let y = ddim_step(x.view(), zero.view(), 20, 10, &s).unwrap();
        let g = (s.alpha_bar(10) / s.alpha_bar(20)).sqrt();
        assert!(y.iter().zip(&x).all(|(a, b)| (a - g * b).abs() < 1e-14));
        assert!(ddim_step(x.view(), zero.view(), 10, 10, &s).is_err());
    }

    #[test]
    fn last_step_returns_x0_estimate() {
        let s = NoiseSchedule::default();
        let x = rand_mat(3, 5, 5);
        let e = rand_mat(3, 5, 6);
        let a = ddim_step(x.view(), e.view(), 7, 0, &s).unwrap();
        let b = predict_x0(x.view(), e.view(), 7, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn steps_cover_range() {
        assert_eq!(timesteps(10, 3).unwrap(), vec![10, 7, 4, 1, 0]);
        assert_eq!(timesteps(10, 10).unwrap(), vec![10, 0]);
        assert_eq!(timesteps(0, 1).unwrap(), vec![0]);
        assert!(timesteps(5, 0).is_err());
    }

    #[test]
    fn oracle_reverse_recovers_clean() {
        let s = NoiseSchedule::default();
        let x0 = rand_mat(8, 16, 7);
        let art = rand_mat(8, 16, 8);
        let cond = Array2::zeros((8, 0));
        let oracle = OracleDenoiser { x0: x0.view(), schedule: &s };
        for stride in [1, 2, 5, 10, 7] {
            let y = restore(&oracle, art.view(), cond.view(), &s, 30, stride, 3).unwrap();
            let err = y.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "stride {stride}: {err}");
        }
    }

    #[test]
    fn zero_model_restore_is_pinned_rescale() {
        let s = NoiseSchedule::default();
        let art = rand_mat(4, 4, 9);
        let cond = Array2::zeros((4, 0));
        let y = restore(&Zero, art.view(), cond.view(), &s, 30, 10, 11).unwrap();
        let z = gaussian(4, 4, &mut ChaCha8Rng::seed_from_u64(11));
        let xt = shallow_init(art.view(), 30, z.view(), &s).unwrap();
        let expected = xt.mapv(|v| v / s.alpha_bar(30).sqrt());
        assert!(y.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(y, restore(&Zero, art.view(), cond.view(), &s, 30, 10, 11).unwrap());
    }

    #[test]
    fn zero_depth_returns_input() {
        let s = NoiseSchedule::default();
        let art = rand_mat(4, 4, 9);
        let y = restore(&Zero, art.view(), Array2::zeros((4, 0)).view(), &s, 0, 1, 0).unwrap();
        assert_eq!(y, art);
        assert!(restore(&Zero, art.view(), Array2::zeros((4, 0)).view(), &s, 101, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn inversion_is_exact(seed in any::<u64>(), t in 1usize..=100) {
            let s = NoiseSchedule::default();
            let x0 = rand_mat(5, 7, seed);
            let eps = rand_mat(5, 7, seed ^ 0xabc);
            let xt = forward_noise(x0.view(), t, eps.view(), &s).unwrap();
            let back = predict_x0(xt.view(), eps.view(), t, &s).unwrap();
            let err = back.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-9);
        }
    }
}
