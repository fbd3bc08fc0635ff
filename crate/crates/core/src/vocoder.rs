//! A compact source-filter vocoder.
//!
//! Analysis splits audio into an F0 contour, a smooth spectral envelope
//! (F0-adaptive power smoothing followed by cepstral liftering) and per-band
//! aperiodicity. Synthesis sums phase-continuous harmonics of F0 weighted by
//! the envelope and `1 - aperiodicity`, plus seeded noise shaped by the
//! envelope and the aperiodicity. Pitch shifting rescales only the F0
//! contour, so formants stay where they were.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::dsp::{istft, power_spectrogram, stft, SpectralConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::pitch::{estimate_f0, shift_f0, F0Contour, PitchConfig};

/// Power floor for the envelope.
pub const ENVELOPE_FLOOR: f64 = 1e-12;
/// Output is scaled down only if its peak exceeds this.
pub const PEAK_LIMIT: f64 = 0.99;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Half-width, in analysis bins, of the comb mask around each harmonic.
const COMB_HALF_WIDTH: f64 = 2.0;
/// Lower edge of the first log-spaced aperiodicity band boundary.
const BAND_BASE_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocoderConfig {
    pub pitch: PitchConfig,
    /// Envelope FFT size; the hop comes from `pitch.hop`.
    pub n_fft: usize,
    /// Longer FFT used for the harmonic comb in aperiodicity analysis.
    pub ap_fft: usize,
    /// Cepstral coefficients kept by the lifter.
    pub lifter: usize,
    pub n_bands: usize,
    /// Seed of the aperiodic noise source.
    pub seed: u64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            pitch: PitchConfig::default(),
            n_fft: 1024,
            ap_fft: 4096,
            lifter: 60,
            n_bands: 8,
            seed: 0,
        }
    }
}

impl VocoderConfig {
    fn spectral(&self) -> SpectralConfig {
        SpectralConfig {
            n_fft: self.n_fft,
            hop: self.pitch.hop,
            win: self.n_fft,
            window: crate::dsp::Window::Hann,
        }
    }
}

/// A pitch shift in semitones, limited to one octave either way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    semitones: f64,
}

impl ShiftSpec {
    pub const MAX_SEMITONES: f64 = 12.0;

    pub fn new(semitones: f64) -> Result<Self> {
        if !semitones.is_finite() || semitones.abs() > Self::MAX_SEMITONES {
            return Err(Error::config(format!(
                "shift of {semitones} semitones outside [-12, 12]"
            )));
        }
        Ok(Self { semitones })
    }

    pub fn semitones(&self) -> f64 {
        self.semitones
    }

    pub fn ratio(&self) -> f64 {
        2f64.powf(self.semitones / 12.0)
    }

    pub fn inverse(&self) -> Self {
        Self {
            semitones: -self.semitones,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderParams {
    pub f0: F0Contour,
    /// `frames x (n_fft/2 + 1)` smoothed power envelope.
    pub envelope: Array2<f64>,
    /// `frames x n_bands`, each in `[0, 1]`.
    pub aperiodicity: Array2<f64>,
    /// `n_bands + 1` band edges in Hz, from 0 to Nyquist.
    pub band_edges: Vec<f64>,
    pub n_fft: usize,
    /// Length of the analysed audio, reproduced by synthesis.
    pub n_samples: usize,
}

impl VocoderParams {
    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    fn band_of(&self, hz: f64) -> usize {
        let n = self.band_edges.len() - 1;
        (1..n).take_while(|&b| hz >= self.band_edges[b]).count()
    }
}

/// Log-spaced band edges: `[0, b1, ..., nyquist]`.
pub fn band_edges(n_bands: usize, sample_rate: u32) -> Vec<f64> {
    let nyq = sample_rate as f64 / 2.0;
    let mut e = vec![0.0];
    for i in 1..n_bands {
        e.push(BAND_BASE_HZ * (nyq / BAND_BASE_HZ).powf(i as f64 / n_bands as f64));
    }
    e.push(nyq);
    e
}

fn mirror(k: isize, bins: usize) -> usize {
    crate::dsp::reflect_index(k, bins)
}

/// Add to every bin below f0 the power found at `f0 - f`, so the empty
/// region under the fundamental does not drag the liftered envelope down.
fn fill_below_f0(power: &[f64], f0_bins: f64) -> Vec<f64> {
    let mut out = power.to_vec();
    let last = power.len() - 1;
    for (k, v) in out.iter_mut().enumerate() {
        let mirror = f0_bins - k as f64;
        if mirror <= 0.0 {
            break;
        }
        let i = (mirror.floor() as usize).min(last);
        let frac = mirror - i as f64;
        *v += power[i] * (1.0 - frac) + power[(i + 1).min(last)] * frac;
    }
    out
}

/// F0-adaptive smoothing (voiced frames) then cepstral liftering of one power spectrum.
fn smooth_envelope(power: &[f64], f0: f64, cfg: &VocoderConfig, sr: u32, fft: &Lifter) -> Vec<f64> {
    let bins = power.len();
    let smoothed: Vec<f64> = if f0 > 0.0 {
        let width = f0 * cfg.n_fft as f64 / sr as f64;
        let h = ((width / 2.0).round() as isize).max(1);
        let power = fill_below_f0(power, width);
        (0..bins as isize)
            .map(|k| (-h..=h).map(|j| power[mirror(k + j, bins)]).sum::<f64>() / (2 * h + 1) as f64)
            .collect()
    } else {
        power.to_vec()
    };
    // log of a chi-square(2) periodogram is biased low by Euler's gamma
    let bias = if f0 > 0.0 { 0.0 } else { EULER_GAMMA };
    let log: Vec<f64> = smoothed
        .iter()
        .map(|&p| p.max(ENVELOPE_FLOOR).ln() + bias)
        .collect();
    fft.lifter(&log)
        .into_iter()
        .map(|v| v.exp().max(ENVELOPE_FLOOR))
        .collect()
}

struct Lifter {
    n: usize,
    keep: usize,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Lifter {
    fn new(n: usize, keep: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            n,
            keep,
            fwd: p.plan_fft_forward(n),
            inv: p.plan_fft_inverse(n),
        }
    }

    /// Low-quefrency part of a one-sided log spectrum.
    fn lifter(&self, half: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(if k <= n / 2 { half[k] } else { half[n - k] }, 0.0))
            .collect();
        self.inv.process(&mut buf);
        for (q, c) in buf.iter_mut().enumerate() {
            let keep = q < self.keep || n - q < self.keep;
            *c = if keep {
                Complex64::new(c.re / n as f64, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        self.fwd.process(&mut buf);
        buf[..half.len()].iter().map(|c| c.re).collect()
    }
}

/// Aperiodicity of one frame from the comb-masked energy fraction, corrected
/// for the share of bins the mask would catch on pure noise.
/// `drift` is the relative F0 excursion `(max - min) / f0` inside the
/// analysis window; harmonic `h` sweeps `h * drift * f0` Hz and its mask widens
/// to match, up to half the harmonic spacing.
fn frame_aperiodicity(power: &[f64], f0: f64, drift: f64, edges: &[f64], ap_fft: usize, sr: u32) -> Vec<f64> {
    let n_bands = edges.len() - 1;
    if f0 <= 0.0 {
        return vec![1.0; n_bands];
    }
    let bin_hz = sr as f64 / ap_fft as f64;
    let spacing = f0 / bin_hz;
    let frame_total: f64 = power.iter().sum();
    let mut ap: Vec<f64> = (0..n_bands)
        .map(|b| {
            let lo = (edges[b] / bin_hz).ceil() as usize;
            let hi = ((edges[b + 1] / bin_hz).floor() as usize + 1).min(power.len());
            if lo >= hi {
                return 1.0;
            }
            let (mut total, mut masked, mut mask_bins) = (0.0, 0.0, 0usize);
            for (k, &p) in power.iter().enumerate().take(hi).skip(lo) {
                let h = (k as f64 / spacing).round().max(1.0);
                let half = (COMB_HALF_WIDTH + 0.5 * h * drift * spacing).min(COMB_HALF_WIDTH.max(0.25 * spacing));
                total += p;
                if (k as f64 - h * spacing).abs() <= half {
                    masked += p;
                    mask_bins += 1;
                }
            }
            if total <= 1e-12 * frame_total || total <= 0.0 {
                return 1.0;
            }
            let rho = mask_bins as f64 / (hi - lo) as f64;
            if rho >= 1.0 {
                return 0.0;
            }
            let periodic = ((masked / total - rho) / (1.0 - rho)).clamp(0.0, 1.0);
            1.0 - periodic
        })
        .collect();
    // bands entirely below f0 hold no harmonics and, in a voiced frame, next
    // to no noise; the envelope there is only a support for the fundamental
    let home = (1..n_bands).take_while(|&b| f0 >= edges[b]).count();
    for v in &mut ap[..home] {
        *v = 0.0;
    }
    ap
}

pub fn analyze(audio: &AudioBuffer, cfg: &VocoderConfig) -> Result<VocoderParams> {
    let sr = audio.sample_rate;
    let mut f0 = estimate_f0(audio, &cfg.pitch)?;
    let (lo, hi) = covered(f0.len(), f0.hop, cfg.pitch.span(sr) / 2, audio.len());
    for t in (0..lo).chain(hi + 1..f0.len()) {
        let src = t.clamp(lo, hi);
        f0.f0[t] = f0.f0[src];
        f0.voiced[t] = f0.voiced[src];
    }
    let spec = cfg.spectral();
    spec.validate()?;
    if cfg.lifter == 0 || cfg.lifter > cfg.n_fft / 2 || cfg.n_bands == 0 {
        return Err(Error::config("lifter must be in 1..=n_fft/2 and n_bands positive"));
    }
    let power = power_spectrogram(audio, &spec)?;
    let ap_spec = SpectralConfig {
        n_fft: cfg.ap_fft,
        win: cfg.ap_fft,
        ..spec
    };
    ap_spec.validate()?;
    let ap_power = power_spectrogram(audio, &ap_spec)?;
    let frames = f0.len();
    debug_assert_eq!(power.nrows(), frames);
    let edges = band_edges(cfg.n_bands, sr);
    let lifter = Lifter::new(cfg.n_fft, cfg.lifter);
    let reach = cfg.ap_fft / 2 / spec.hop;
    let drift: Vec<f64> = (0..frames)
        .map(|t| {
            if !f0.voiced[t] {
                return 0.0;
            }
            let near = (t.saturating_sub(reach)..(t + reach + 1).min(frames)).filter(|&u| f0.voiced[u]);
            let (lo, hi) = near.fold((f64::INFINITY, 0.0f64), |(lo, hi), u| (lo.min(f0.f0[u]), hi.max(f0.f0[u])));
            (hi - lo) / f0.f0[t]
        })
        .collect();
    let rows = par::map_range(frames, |t| {
        let p = power.row(t).to_vec();
        let env = smooth_envelope(&p, f0.f0[t], cfg, sr, &lifter);
        let ap = frame_aperiodicity(ap_power.row(t).as_slice().unwrap(), f0.f0[t], drift[t], &edges, cfg.ap_fft, sr);
        (env, ap)
    });
    let bins = spec.bins();
    let mut envelope = Array2::zeros((frames, bins));
    let mut aperiodicity = Array2::zeros((frames, cfg.n_bands));
    for (t, (e, a)) in rows.into_iter().enumerate() {
        envelope.row_mut(t).assign(&ndarray::Array1::from(e));
        aperiodicity.row_mut(t).assign(&ndarray::Array1::from(a));
    }
    let (lo, hi) = covered(frames, spec.hop, cfg.ap_fft / 2, audio.len());
    for t in (0..lo).chain(hi + 1..frames) {
        let src = aperiodicity.row(t.clamp(lo, hi)).to_owned();
        aperiodicity.row_mut(t).assign(&src);
    }
    Ok(VocoderParams {
        f0,
        envelope,
        aperiodicity,
        band_edges: edges,
        n_fft: cfg.n_fft,
        n_samples: audio.len(),
    })
}

/// First and last frame whose analysis window of half-width `half` lies inside
/// the signal. Frames outside that range see the clip boundary as a step and
/// take their estimates from the nearest covered frame. Clips too short to
/// cover any frame keep everything as measured.
fn covered(frames: usize, hop: usize, half: usize, len: usize) -> (usize, usize) {
    let lo = half.div_ceil(hop);
    match len.checked_sub(half).map(|r| r / hop) {
        Some(hi) if lo <= hi && hi < frames => (lo, hi),
        _ => (0, frames.saturating_sub(1)),
    }
}

fn lerp_row(row: ndarray::ArrayView1<f64>, pos: f64) -> f64 {
    let last = row.len() - 1;
    if pos >= last as f64 {
        return row[last];
    }
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    row[i] * (1.0 - f) + row[i + 1] * f
}

/// Voiced F0 held across unvoiced gaps so harmonic phase never sweeps through 0 Hz.
fn held_f0(c: &F0Contour) -> Vec<f64> {
    let mut out = c.f0.clone();
    let first = c.voiced.iter().position(|&v| v);
    let Some(first) = first else {
        return out;
    };
    let mut last = c.f0[first];
    for (t, v) in out.iter_mut().enumerate() {
        if c.voiced[t] {
            last = *v;
        } else {
            *v = last;
        }
    }
    out
}

pub fn synthesize(params: &VocoderParams, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    let frames = params.frames();
    let n_fft = params.n_fft;
    if params.envelope.dim() != (frames, n_fft / 2 + 1) {
        return Err(Error::shape((frames, n_fft / 2 + 1), params.envelope.dim()));
    }
    if params.aperiodicity.dim() != (frames, params.band_edges.len() - 1) {
        return Err(Error::shape(
            (frames, params.band_edges.len() - 1),
            params.aperiodicity.dim(),
        ));
    }
    let len = params.n_samples;
    if frames == 0 || len == 0 {
        return Err(Error::EmptyInput);
    }
    let sr = sample_rate as f64;
    let nyq = sr / 2.0;
    let hop = params.f0.hop;
    let nf = n_fft as f64;

    // harmonic amplitudes at frame centres
    let amps: Vec<Vec<f64>> = par::map_range(frames, |t| {
        if !params.f0.voiced[t] {
            return Vec::new();
        }
        let f0 = params.f0.f0[t];
        let width = f0 * nf / sr;
        let count = ((nyq - 1.0) / f0).floor() as usize;
        let env = params.envelope.row(t);
        (1..=count)
            .map(|k| {
                let hz = k as f64 * f0;
                let e = lerp_row(env, hz * nf / sr);
                let ap = params.aperiodicity[[t, params.band_of(hz)]];
                // a Hann-windowed sinusoid of amplitude a carries 3 a^2 N^2 / 32
                // of power, spread over `width` bins by the envelope smoothing
                (32.0 * width * e / (3.0 * nf * nf)).sqrt() * (1.0 - ap).max(0.0).sqrt()
            })
            .collect()
    });
    let f0_held = held_f0(&params.f0);

    let position = |n: usize| -> (usize, usize, f64) {
        let u = n as f64 / hop as f64;
        let t0 = (u.floor() as usize).min(frames - 1);
        let t1 = (t0 + 1).min(frames - 1);
        let frac = (u - t0 as f64).clamp(0.0, 1.0);
        (t0, t1, 0.5 - 0.5 * (PI * frac).cos())
    };

    let mut theta = vec![0.0; len];
    let mut freq = vec![0.0; len];
    let mut acc = 0.0;
    for n in 0..len {
        let (t0, t1, w) = position(n);
        let f = f0_held[t0] * (1.0 - w) + f0_held[t1] * w;
        theta[n] = acc;
        freq[n] = f;
        acc = (acc + 2.0 * PI * f / sr) % (2.0 * PI);
    }

    let mut harmonic = vec![0.0; len];
    par::for_each_chunk_mut(&mut harmonic, 4096, |ci, chunk| {
        let base = ci * 4096;
        for (j, out) in chunk.iter_mut().enumerate() {
            let n = base + j;
            let (t0, t1, w) = position(n);
            let (a0, a1) = (&amps[t0], &amps[t1]);
            let kmax = a0.len().max(a1.len());
            if kmax == 0 || freq[n] <= 0.0 {
                continue;
            }
            let (s1, c1) = theta[n].sin_cos();
            let (mut prev, mut cur) = (0.0, s1);
            let mut sum = 0.0;
            for k in 0..kmax {
                if (k + 1) as f64 * freq[n] >= nyq {
                    break;
                }
                let a = a0.get(k).copied().unwrap_or(0.0) * (1.0 - w)
                    + a1.get(k).copied().unwrap_or(0.0) * w;
                sum += a * cur;
                let next = 2.0 * c1 * cur - prev;
                prev = cur;
                cur = next;
            }
            *out = sum;
        }
    });

    // aperiodic part: white noise shaped frame by frame in the STFT domain
    let spec = SpectralConfig {
        n_fft,
        hop,
        win: n_fft,
        window: crate::dsp::Window::Hann,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut noise_spec = stft(&AudioBuffer::new(noise, sample_rate)?, &spec)?;
    let white_power = 3.0 * nf / 8.0;
    let bin_band: Vec<usize> = (0..spec.bins())
        .map(|k| params.band_of(k as f64 * sr / nf))
        .collect();
    let noise_frames = noise_spec.nrows().min(frames);
    for t in 0..noise_frames {
        for k in 0..spec.bins() {
            let ap = params.aperiodicity[[t, bin_band[k]]];
            let g = (params.envelope[[t, k]] * ap / white_power).sqrt();
            noise_spec[[t, k]] *= g;
        }
    }
    for t in noise_frames..noise_spec.nrows() {
        noise_spec.row_mut(t).fill(Complex64::new(0.0, 0.0));
    }
    let shaped = istft(&noise_spec, &spec, sample_rate, Some(len))?;

    let samples: Vec<f64> = harmonic
        .iter()
        .zip(&shaped.samples)
        .map(|(h, n)| h + n)
        .collect();
    let mut out = AudioBuffer::new(samples, sample_rate)?;
    out.limit_peak(PEAK_LIMIT);
    Ok(out)
}

/// Analyse, scale F0 by the shift ratio, resynthesise with the original envelope.
pub fn pitch_shift(audio: &AudioBuffer, shift: ShiftSpec, cfg: &VocoderConfig) -> Result<AudioBuffer> {
    let mut params = analyze(audio, cfg)?;
    params.f0 = shift_f0(&params.f0, shift.semitones());
    synthesize(&params, audio.sample_rate, cfg.seed)
}

/// Shift up by `shift` and back down with the same configuration. Returns
/// `(artifact, clean)`: same pitch and length as the input, vocoder-degraded.
pub fn make_artifact_pair(
    audio: &AudioBuffer,
    shift: ShiftSpec,
    cfg: &VocoderConfig,
) -> Result<(AudioBuffer, AudioBuffer)> {
    let there = pitch_shift(audio, shift, cfg)?;
    let back = pitch_shift(&there, shift.inverse(), cfg)?;
    Ok((back, audio.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitch::cents_between;
    use crate::synth;

    fn median_f0(a: &AudioBuffer) -> f64 {
        estimate_f0(a, &PitchConfig::default())
            .unwrap()
            .median_voiced()
            .unwrap()
    }

    #[test]
    fn shift_spec_range() {
        assert!(ShiftSpec::new(12.0).is_ok());
        assert!(ShiftSpec::new(-12.0).is_ok());
        assert!(ShiftSpec::new(12.5).is_err());
        assert!(ShiftSpec::new(f64::NAN).is_err());
        assert!((ShiftSpec::new(12.0).unwrap().ratio() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bands_are_log_spaced() {
        let e = band_edges(8, 44_100);
        assert_eq!(e.len(), 9);
        assert_eq!(e[0], 0.0);
        assert_eq!(e[8], 22_050.0);
        let r1 = e[2] / e[1];
        let r2 = e[6] / e[5];
        assert!((r1 - r2).abs() < 1e-9);
    }

    #[test]
    fn sine_is_periodic_in_its_band() {
        let a = synth::sine(440.0, 0.5, 44_100, 0.5);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        let band = p.band_of(440.0);
        let voiced: Vec<usize> = (0..p.frames()).filter(|&t| p.f0.voiced[t]).collect();
        assert!(voiced.len() > p.frames() / 2);
        let mean: f64 = voiced.iter().map(|&t| p.aperiodicity[[t, band]]).sum::<f64>() / voiced.len() as f64;
        assert!(mean < 0.2, "aperiodicity {mean}");
    }

    #[test]
    fn coverage_range() {
        assert_eq!(covered(40, 256, 852, 10_000), (4, 35));
        assert_eq!(covered(5, 256, 852, 1_000), (0, 4));
    }

    #[test]
    fn hard_onset_is_not_noise() {
        let a = synth::sawtooth(290.0, 0.5, 44_100, 0.5);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        assert!(p.f0.voiced[0] && p.f0.voiced[p.frames() - 1]);
        let first_covered = VocoderConfig::default().ap_fft / 2 / 256;
        assert_eq!(p.aperiodicity.row(0), p.aperiodicity.row(first_covered));
        assert!(p.aperiodicity[[0, p.band_of(870.0)]] < 0.1);
    }

    #[test]
    fn vibrato_stays_periodic() {
        let track = synth::vibrato_track(374.0, 5.0, 40.0, 1.0, 44_100);
        let a = synth::sawtooth_track(&track, 44_100, 0.5);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        let band = p.band_of(3.0 * 374.0);
        let worst = (0..p.frames()).map(|t| p.aperiodicity[[t, band]]).fold(0.0, f64::max);
        assert!(worst < 0.05, "aperiodicity {worst}");
    }

    #[test]
    fn noise_is_aperiodic() {
        let a = synth::white_noise(22_050, 0.2, 44_100, 3);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        assert!(p.aperiodicity.mean().unwrap() > 0.8);
    }

    #[test]
    fn silence_analyses_to_floor() {
        let a = AudioBuffer::silence(8000, 44_100);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        assert!(p.f0.voiced.iter().all(|v| !v));
        assert!(p.envelope.iter().all(|&e| e <= ENVELOPE_FLOOR * 2.0));
        let y = synthesize(&p, 44_100, 0).unwrap();
        assert!(y.rms() < 1e-3);
        assert_eq!(y.len(), a.len());
    }

    #[test]
    fn params_invariants() {
        let a = synth::vowel(&synth::VoiceSpec::default(), 44_100, 1);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        assert_eq!(p.envelope.nrows(), p.frames());
        assert_eq!(p.aperiodicity.nrows(), p.frames());
        assert!(p.envelope.iter().all(|&e| e >= 0.0 && e.is_finite()));
        assert!(p.aperiodicity.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn resynthesis_keeps_pitch_and_level() {
        let a = synth::sawtooth(220.0, 0.8, 44_100, 0.3);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        let y = synthesize(&p, 44_100, 0).unwrap();
        assert_eq!(y.len(), a.len());
        assert!(cents_between(220.0, median_f0(&y)).unwrap().abs() < 10.0);
        let ratio = y.rms() / a.rms();
        assert!((0.6..1.6).contains(&ratio), "rms ratio {ratio}");
    }

    #[test]
    fn envelope_scaling_is_linear_in_amplitude() {
        let a = synth::sawtooth(200.0, 0.5, 44_100, 0.1);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        let y1 = synthesize(&p, 44_100, 0).unwrap();
        let mut p2 = p.clone();
        p2.envelope.mapv_inplace(|e| e * 2.0);
        let y2 = synthesize(&p2, 44_100, 0).unwrap();
        // the envelope is power, so doubling it scales amplitude by sqrt(2)
        let r = y2.rms() / y1.rms();
        assert!((r / 2f64.sqrt() - 1.0).abs() < 0.1, "ratio {r}");
        let mut p4 = p.clone();
        p4.envelope.mapv_inplace(|e| e * 4.0);
        let r4 = synthesize(&p4, 44_100, 0).unwrap().rms() / y1.rms();
        assert!((r4 / 2.0 - 1.0).abs() < 0.1, "ratio {r4}");
    }

    #[test]
    fn identity_and_octave_shift() {
        let a = synth::sawtooth(220.0, 0.8, 44_100, 0.3);
        let cfg = VocoderConfig::default();
        let same = pitch_shift(&a, ShiftSpec::new(0.0).unwrap(), &cfg).unwrap();
        assert!(cents_between(median_f0(&a), median_f0(&same)).unwrap().abs() < 5.0);
        let up = pitch_shift(&a, ShiftSpec::new(12.0).unwrap(), &cfg).unwrap();
        assert!(cents_between(440.0, median_f0(&up)).unwrap().abs() < 10.0);
        assert!((up.len() as isize - a.len() as isize).abs() <= 256);
    }

    #[test]
    fn shift_round_trip_restores_pitch() {
        let a = synth::sawtooth(220.0, 0.8, 44_100, 0.3);
        let cfg = VocoderConfig::default();
        let up = pitch_shift(&a, ShiftSpec::new(3.0).unwrap(), &cfg).unwrap();
        let back = pitch_shift(&up, ShiftSpec::new(-3.0).unwrap(), &cfg).unwrap();
        assert!(cents_between(220.0, median_f0(&back)).unwrap().abs() < 10.0);
    }

    #[test]
    fn synthesis_is_seeded() {
        let a = synth::vowel(&synth::VoiceSpec { breath: 0.05, ..Default::default() }, 44_100, 2);
        let p = analyze(&a, &VocoderConfig::default()).unwrap();
        assert_eq!(synthesize(&p, 44_100, 5).unwrap(), synthesize(&p, 44_100, 5).unwrap());
        assert_ne!(synthesize(&p, 44_100, 5).unwrap(), synthesize(&p, 44_100, 6).unwrap());
    }

    #[test]
    fn zero_shift_pair_is_degraded_but_in_tune() {
        let a = synth::vowel(&synth::VoiceSpec::default(), 44_100, 9);
        let (art, clean) = make_artifact_pair(&a, ShiftSpec::new(0.0).unwrap(), &VocoderConfig::default()).unwrap();
        assert_eq!(clean, a);
        assert_ne!(art, a);
        assert_eq!(art.len(), a.len());
        assert!(cents_between(median_f0(&a), median_f0(&art)).unwrap().abs() < 20.0);
    }
}
