//! Time-domain pitch-synchronous overlap-add (TD-PSOLA).
//!
//! Pitch marks are placed one per period on voiced spans. Shifting by `r`
//! re-spaces the synthesis marks by `1/r`, copying the nearest analysis grain
//! to each. Duration is preserved; unvoiced regions pass through untouched.

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::pitch::{estimate_f0, F0Contour, PitchConfig};
use crate::vocoder::ShiftSpec;

/// Analysis epochs, in samples, strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PitchMarks {
    pub positions: Vec<usize>,
}

impl PitchMarks {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Fraction of a period searched either side of a predicted mark.
const SEARCH_FRACTION: f64 = 0.25;

fn argmax(x: &[f64], lo: usize, hi: usize) -> usize {
    let mut best = lo;
    for i in lo..hi.min(x.len()) {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}

/// Period in samples at `n`, interpolated from the contour frame grid.
fn period_at(contour: &F0Contour, n: usize) -> Option<f64> {
    let t = ((n as f64 / contour.hop as f64).round() as usize).min(contour.len() - 1);
    contour.voiced[t].then(|| contour.sample_rate as f64 / contour.f0[t])
}

/// Place one mark per period on every voiced run of the contour.
pub fn detect_pitch_marks(audio: &AudioBuffer, contour: &F0Contour, cfg: &PitchConfig) -> Result<PitchMarks> {
    if contour.sample_rate != audio.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: audio.sample_rate,
            got: contour.sample_rate,
        });
    }
    if contour.is_empty() {
        return Ok(PitchMarks::default());
    }
    let x = &audio.samples;
    let sr = audio.sample_rate as f64;
    let (p_min, p_max) = (sr / cfg.f_max, sr / cfg.f_min);
    let mut marks = Vec::new();
    let hop = contour.hop;
    let mut t = 0;
    while t < contour.len() {
        if !contour.voiced[t] {
            t += 1;
            continue;
        }
        let start_t = t;
        while t < contour.len() && contour.voiced[t] {
            t += 1;
        }
        let lo = (start_t * hop).saturating_sub(hop / 2);
        let hi = ((t - 1) * hop + hop / 2).min(x.len());
        if hi <= lo {
            continue;
        }
        let p0 = period_at(contour, start_t * hop).unwrap_or(p_max).clamp(p_min, p_max);
        let first = argmax(x, lo, (lo + p0.round() as usize).min(hi));
        if let Some(&last) = marks.last() {
            if first <= last {
                continue;
            }
        }
        marks.push(first);
        let mut m = first;
        loop {
            let p = period_at(contour, m)
                .unwrap_or(p0)
                .clamp(p_min, p_max);
            let predicted = m as f64 + p;
            if predicted >= hi as f64 {
                break;
            }
            let r = SEARCH_FRACTION * p;
            let a = ((predicted - r).ceil() as usize).max(m + p_min.floor().max(1.0) as usize);
            let b = ((predicted + r).floor() as usize + 1).min(m + p_max.ceil() as usize + 1).min(hi);
            if a >= b {
                break;
            }
            let next = argmax(x, a, b);
            marks.push(next);
            m = next;
        }
    }
    Ok(PitchMarks { positions: marks })
}

/// Asymmetric Hann grain centred on `centre` with left/right half-lengths.
fn grain_weight(i: isize, left: usize, right: usize) -> f64 {
    use std::f64::consts::PI;
    let half = if i < 0 { left } else { right } as f64;
    if half <= 0.0 {
        return if i == 0 { 1.0 } else { 0.0 };
    }
    let d = (i as f64).abs() / half;
    if d >= 1.0 {
        0.0
    } else {
        0.5 + 0.5 * (PI * d).cos()
    }
}

/// Overlap-add shift using precomputed marks.
pub fn psola_with_marks(audio: &AudioBuffer, marks: &PitchMarks, shift: ShiftSpec) -> Result<AudioBuffer> {
    audio.require_non_empty()?;
    let x = &audio.samples;
    let len = x.len();
    let a = &marks.positions;
    if a.len() < 2 || shift.semitones() == 0.0 {
        return Ok(audio.clone());
    }
    if a.windows(2).any(|w| w[1] <= w[0]) || *a.last().unwrap() >= len {
        return Err(Error::config("pitch marks must be increasing and inside the audio"));
    }
    let r = shift.ratio();
    let (first, last) = (a[0], *a.last().unwrap());
    let spacing = |i: usize| -> (usize, usize) {
        let left = if i > 0 { a[i] - a[i - 1] } else { a[1] - a[0] };
        let right = if i + 1 < a.len() { a[i + 1] - a[i] } else { left };
        (left, right)
    };
    let mut y = vec![0.0; len];
    let mut w = vec![0.0; len];
    let mut s = first as f64;
    let mut k = 0usize;
    while s <= last as f64 {
        while k + 1 < a.len() && (a[k + 1] as f64 - s).abs() < (a[k] as f64 - s).abs() {
            k += 1;
        }
        let (left, right) = spacing(k);
        let centre = s.round() as isize;
        for i in -(left as isize)..=(right as isize) {
            let src = a[k] as isize + i;
            let dst = centre + i;
            if src < 0 || dst < 0 || src >= len as isize || dst >= len as isize {
                continue;
            }
            let g = grain_weight(i, left, right);
            y[dst as usize] += g * x[src as usize];
            w[dst as usize] += g;
        }
        let local = right.max(1) as f64;
        s += local / r;
    }
    let out: Vec<f64> = (0..len)
        .map(|n| {
            if n < first || n > last {
                x[n]
            } else {
                y[n] / w[n].max(1.0)
            }
        })
        .collect();
    AudioBuffer::new(out, audio.sample_rate)
}

/// Estimate F0, place marks and shift.
pub fn psola_shift(audio: &AudioBuffer, shift: ShiftSpec, cfg: &PitchConfig) -> Result<AudioBuffer> {
    let contour = estimate_f0(audio, cfg)?;
    let marks = detect_pitch_marks(audio, &contour, cfg)?;
    psola_with_marks(audio, &marks, shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitch::cents_between;
    use crate::synth;

    fn median_f0(a: &AudioBuffer) -> f64 {
        estimate_f0(a, &PitchConfig::default()).unwrap().median_voiced().unwrap()
    }

    #[test]
    fn marks_follow_period() {
        let a = synth::sawtooth(200.0, 0.5, 44_100, 0.5);
        let cfg = PitchConfig::default();
        let c = estimate_f0(&a, &cfg).unwrap();
        let m = detect_pitch_marks(&a, &c, &cfg).unwrap();
        assert!(m.len() > 80, "{} marks", m.len());
        let gaps: Vec<f64> = m.positions.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 220.5).abs() < 2.0, "mean gap {mean}");
        assert!(gaps.iter().all(|&g| (g - 220.5).abs() < 3.0));
    }

    #[test]
    fn no_marks_in_silence() {
        let a = AudioBuffer::silence(10_000, 44_100);
        let cfg = PitchConfig::default();
        let c = estimate_f0(&a, &cfg).unwrap();
        assert!(detect_pitch_marks(&a, &c, &cfg).unwrap().is_empty());
        assert_eq!(psola_shift(&a, ShiftSpec::new(5.0).unwrap(), &cfg).unwrap(), a);
    }

    #[test]
    fn zero_shift_is_identity() {
        let a = synth::vowel(&synth::VoiceSpec::default(), 44_100, 4);
        let y = psola_shift(&a, ShiftSpec::new(0.0).unwrap(), &PitchConfig::default()).unwrap();
        assert_eq!(y, a);
    }

    #[test]
    fn shifts_pitch_and_keeps_length() {
        let a = synth::sawtooth(220.0, 0.8, 44_100, 0.4);
        let cfg = PitchConfig::default();
        for (semi, target) in [(5.0, 220.0 * 2f64.powf(5.0 / 12.0)), (-5.0, 220.0 * 2f64.powf(-5.0 / 12.0))] {
            let y = psola_shift(&a, ShiftSpec::new(semi).unwrap(), &cfg).unwrap();
            assert_eq!(y.len(), a.len());
            let c = cents_between(target, median_f0(&y)).unwrap();
            assert!(c.abs() < 20.0, "shift {semi}: {c} cents");
        }
    }

    #[test]
    fn sine_mark_spacing() {
        let a = synth::sine(220.0, 0.5, 44_100, 0.5);
        let cfg = PitchConfig::default();
        let c = estimate_f0(&a, &cfg).unwrap();
        let m = detect_pitch_marks(&a, &c, &cfg).unwrap();
        let expected = 44_100.0 / 220.0;
        for w in m.positions.windows(2) {
            assert!(((w[1] - w[0]) as f64 - expected).abs() <= 2.0);
        }
    }

    #[test]
    fn rising_f0_shortens_spacing() {
        let secs = 1.0;
        let n = (secs * 44_100.0) as usize;
        let track: Vec<f64> = (0..n).map(|i| 150.0 + 150.0 * i as f64 / n as f64).collect();
        let a = synth::sawtooth_track(&track, 44_100, 0.4);
        let cfg = PitchConfig::default();
        let c = estimate_f0(&a, &cfg).unwrap();
        let m = detect_pitch_marks(&a, &c, &cfg).unwrap();
        let gaps: Vec<i64> = m.positions.windows(2).map(|w| (w[1] - w[0]) as i64).collect();
        assert!(gaps.len() > 150);
        // integer marks jitter by a sample; compare gaps a few periods apart
        for i in 0..gaps.len() - 8 {
            assert!(gaps[i + 8] <= gaps[i] + 1, "gap {i}: {} then {}", gaps[i], gaps[i + 8]);
        }
        assert!(gaps[0] > *gaps.last().unwrap() + 100);
    }

    #[test]
    fn octave_up_and_down() {
        let cfg = PitchConfig::default();
        let a = synth::sawtooth(220.0, 1.0, 44_100, 0.4);
        let up = psola_shift(&a, ShiftSpec::new(12.0).unwrap(), &cfg).unwrap();
        assert!(cents_between(440.0, median_f0(&up)).unwrap().abs() < 15.0);
        let b = synth::sawtooth(130.0, 1.0, 44_100, 0.4);
        let down = psola_shift(&b, ShiftSpec::new(-12.0).unwrap(), &cfg).unwrap();
        assert!(cents_between(65.0, median_f0(&down)).unwrap().abs() < 20.0);
        assert_eq!(down.len(), b.len());
    }

    #[test]
    fn rejects_bad_marks() {
        let a = synth::sine(200.0, 0.1, 44_100, 0.5);
        let bad = PitchMarks { positions: vec![10, 5] };
        assert!(psola_with_marks(&a, &bad, ShiftSpec::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn sample_rate_must_match() {
        let a = synth::sine(200.0, 0.1, 44_100, 0.5);
        let c = F0Contour::unvoiced(10, 256, 22_050);
        assert!(detect_pitch_marks(&a, &c, &PitchConfig::default()).is_err());
    }
}
