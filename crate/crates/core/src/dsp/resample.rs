use std::f64::consts::PI;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::par;

/// Taps on each side of the interpolation point at unit cutoff.
const HALF_TAPS: usize = 32;
const KAISER_BETA: f64 = 12.0;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc (beta 12, 64 taps per phase
/// at unit cutoff; the kernel widens when decimating). Equal rates return a copy.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 || audio.sample_rate == 0 {
        return Err(Error::config("sample rates must be positive"));
    }
    if target_rate == audio.sample_rate {
        return Ok(audio.clone());
    }
    let ratio = target_rate as f64 / audio.sample_rate as f64;
    let cutoff = ratio.min(1.0) * ROLLOFF;
    let half = (HALF_TAPS as f64 / cutoff).ceil() as isize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let x = &audio.samples;
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let samples = par::map_range(out_len, |n| {
        let pos = n as f64 / ratio;
        let centre = pos.floor() as isize;
        let mut acc = 0.0;
        for k in (centre - half + 1)..=(centre + half) {
            if k < 0 || k as usize >= x.len() {
                continue;
            }
            let d = pos - k as f64;
            let r = d / half as f64;
            if r.abs() >= 1.0 {
                continue;
            }
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
            acc += x[k as usize] * cutoff * sinc(cutoff * d) * w;
        }
        acc
    });
    AudioBuffer::new(samples, target_rate)
}

/// Naive pitch shift by playback-rate change: the result is `2^(semitones/12)`
/// higher and correspondingly shorter, with formants moved along with the pitch.
pub fn resample_shift(audio: &AudioBuffer, semitones: f64) -> Result<AudioBuffer> {
    let ratio = 2f64.powf(semitones / 12.0);
    let virtual_rate = (audio.sample_rate as f64 / ratio).round() as u32;
    let mut out = resample(audio, virtual_rate)?;
    out.sample_rate = audio.sample_rate;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sr: u32, secs: f64) -> AudioBuffer {
        let n = (secs * sr as f64) as usize;
        AudioBuffer::new(
            (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect(),
            sr,
        )
        .unwrap()
    }

    #[test]
    fn bessel_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-12);
    }

    #[test]
    fn same_rate_is_bit_identical() {
        let a = sine(440.0, 44_100, 0.1);
        assert_eq!(resample(&a, 44_100).unwrap(), a);
    }

    #[test]
    fn rejects_zero_rate() {
        assert!(resample(&sine(440.0, 44_100, 0.01), 0).is_err());
    }

    #[test]
    fn length_scales_with_ratio() {
        for (from, to) in [(22_050, 44_100), (48_000, 44_100), (44_100, 16_000)] {
            let a = sine(300.0, from, 0.37);
            let b = resample(&a, to).unwrap();
            let expect = a.len() as f64 * to as f64 / from as f64;
            assert!((b.len() as f64 - expect).abs() <= 1.0);
            assert_eq!(b.sample_rate, to);
        }
    }

    #[test]
    fn upsampled_sine_matches_analytic_interior() {
        let a = sine(1000.0, 22_050, 0.5);
        let b = resample(&a, 44_100).unwrap();
        let expect: Vec<f64> = (0..b.len())
            .map(|i| 0.5 * (2.0 * PI * 1000.0 * i as f64 / 44_100.0).sin())
            .collect();
        let interior = 2000..b.len() - 2000;
        let err = interior
            .clone()
            .map(|i| (b.samples[i] - expect[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max err {err}");
    }
}
