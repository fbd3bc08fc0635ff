//! Synthetic test material: tones, band-limited sawtooths, formant-filtered
//! "vowels" and a seeded toy singing corpus.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::AudioBuffer;

fn samples_for(secs: f64, sr: u32) -> usize {
    (secs * sr as f64).round() as usize
}

pub fn sine(freq: f64, secs: f64, sr: u32, amp: f64) -> AudioBuffer {
    let n = samples_for(secs, sr);
    AudioBuffer {
        samples: (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect(),
        sample_rate: sr,
    }
}

/// Band-limited sawtooth following a per-sample F0 track (Hz). Harmonic
/// `k` has amplitude `amp / k` and is dropped above Nyquist.
pub fn sawtooth_track(track: &[f64], sr: u32, amp: f64) -> AudioBuffer {
    let nyq = sr as f64 / 2.0;
    let mut theta = 0.0f64;
    let mut out = Vec::with_capacity(track.len());
    for &f in track {
        let mut acc = 0.0;
        if f > 0.0 {
            // sin(k theta) by the Chebyshev recurrence
            let (s1, c1) = theta.sin_cos();
            let (mut prev, mut cur) = (0.0, s1);
            let mut k = 1.0;
            while k * f < nyq {
                acc += cur / k;
                let next = 2.0 * c1 * cur - prev;
                prev = cur;
                cur = next;
                k += 1.0;
            }
        }
        out.push(amp * acc * 2.0 / PI);
        theta = (theta + 2.0 * PI * f / sr as f64) % (2.0 * PI);
    }
    AudioBuffer {
        samples: out,
        sample_rate: sr,
    }
}

pub fn sawtooth(f0: f64, secs: f64, sr: u32, amp: f64) -> AudioBuffer {
    sawtooth_track(&vec![f0; samples_for(secs, sr)], sr, amp)
}

/// Per-sample F0 with sinusoidal vibrato of `depth_cents` at `rate_hz`.
pub fn vibrato_track(f0: f64, rate_hz: f64, depth_cents: f64, secs: f64, sr: u32) -> Vec<f64> {
    (0..samples_for(secs, sr))
        .map(|i| {
            let t = i as f64 / sr as f64;
            f0 * 2f64.powf(depth_cents / 1200.0 * (2.0 * PI * rate_hz * t).sin())
        })
        .collect()
}

pub fn white_noise(len: usize, amp: f64, sr: u32, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer {
        samples: (0..len)
            .map(|_| amp * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        sample_rate: sr,
    }
}

/// Cascade of unity-DC-gain two-pole resonators `(centre Hz, bandwidth Hz)`.
pub fn formant_filter(audio: &AudioBuffer, formants: &[(f64, f64)]) -> AudioBuffer {
    let sr = audio.sample_rate as f64;
    let mut x = audio.samples.clone();
    for &(f, bw) in formants {
        let c = -(-2.0 * PI * bw / sr).exp();
        let b = 2.0 * (-PI * bw / sr).exp() * (2.0 * PI * f / sr).cos();
        let a = 1.0 - b - c;
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = a * *v + b * y1 + c * y2;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
    AudioBuffer {
        samples: x,
        sample_rate: audio.sample_rate,
    }
}

/// Parameters of one synthetic sung note.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceSpec {
    pub f0: f64,
    pub vibrato_hz: f64,
    pub vibrato_cents: f64,
    pub formants: Vec<(f64, f64)>,
    pub secs: f64,
    /// Peak level after normalisation.
    pub level: f64,
    /// Breath noise relative to the harmonic RMS.
    pub breath: f64,
    /// Attack/release ramp in seconds.
    pub ramp: f64,
}

impl Default for VoiceSpec {
    fn default() -> Self {
        Self {
            f0: 220.0,
            vibrato_hz: 5.5,
            vibrato_cents: 30.0,
            formants: vec![(700.0, 110.0), (1220.0, 120.0), (2600.0, 160.0)],
            secs: 1.0,
            level: 0.5,
            breath: 0.0,
            ramp: 0.03,
        }
    }
}

/// Sawtooth source with vibrato, through formant resonators, with optional
/// breath noise and attack/release ramps.
pub fn vowel(spec: &VoiceSpec, sr: u32, seed: u64) -> AudioBuffer {
    let track = vibrato_track(spec.f0, spec.vibrato_hz, spec.vibrato_cents, spec.secs, sr);
    let mut a = formant_filter(&sawtooth_track(&track, sr, 1.0), &spec.formants);
    if spec.breath > 0.0 {
        let rms = a.rms();
        let noise = formant_filter(
            &white_noise(a.len(), spec.breath * rms, sr, seed ^ 0x9e37_79b9),
            &spec.formants[..1.min(spec.formants.len())],
        );
        a.samples.iter_mut().zip(&noise.samples).for_each(|(s, n)| *s += n);
    }
    let ramp = samples_for(spec.ramp, sr).max(1);
    let n = a.len();
    for (i, s) in a.samples.iter_mut().enumerate() {
        let g = (i.min(n - 1 - i) as f64 / ramp as f64).min(1.0);
        *s *= g;
    }
    let peak = a.peak();
    if peak > 0.0 {
        a.samples.iter_mut().for_each(|s| *s *= spec.level / peak);
    }
    a
}

const VOWELS: [[(f64, f64); 3]; 5] = [
    [(730.0, 90.0), (1090.0, 110.0), (2440.0, 160.0)],
    [(530.0, 60.0), (1840.0, 100.0), (2480.0, 150.0)],
    [(270.0, 60.0), (2290.0, 100.0), (3010.0, 170.0)],
    [(570.0, 70.0), (840.0, 80.0), (2410.0, 160.0)],
    [(300.0, 60.0), (870.0, 90.0), (2240.0, 150.0)],
];

/// A seeded voice spec drawn from a small singing-like distribution:
/// F0 150 to 400 Hz, vibrato 4.5 to 6.5 Hz, one of five vowels.
pub fn random_voice(rng: &mut impl Rng, secs: f64) -> VoiceSpec {
    let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
    let scale = rng.random_range(0.92..1.08);
    VoiceSpec {
        f0: 150.0 * (400.0f64 / 150.0).powf(rng.random_range(0.0..1.0)),
        vibrato_hz: rng.random_range(4.5..6.5),
        vibrato_cents: rng.random_range(10.0..40.0),
        formants: vowel.iter().map(|&(f, b)| (f * scale, b)).collect(),
        secs,
        level: rng.random_range(0.3..0.6),
        breath: rng.random_range(0.0..0.05),
        ramp: 0.03,
    }
}

/// `n` named clips of synthetic singing, reproducible from `seed`.
pub fn toy_corpus(n: usize, secs: f64, sr: u32, seed: u64) -> Vec<(String, AudioBuffer)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let spec = random_voice(&mut rng, secs);
            let clip_seed = rng.random::<u64>();
            (format!("clip{i:03}"), vowel(&spec, sr, clip_seed))
        })
        .collect()
}
