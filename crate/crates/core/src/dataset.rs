//! Corpus ingestion and training-pair manufacture.
//!
//! Every source clip is shifted away and back with the vocoder to obtain an
//! artifact version at the original pitch; clean and artifact log-mels plus
//! conditioning are cached as PSRT tensors next to a JSON manifest.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, AudioBuffer};
use crate::diffusion::Conditioning;
use crate::dsp::{log_mel, resample, rms_envelope, MelConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::pitch::{estimate_f0, PitchConfig};
use crate::psrt::{self, DType};
use crate::vocoder::{make_artifact_pair, ShiftSpec, VocoderConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Content sidecars sit next to the audio as `<stem>.content.psrt`.
pub const CONTENT_SUFFIX: &str = ".content.psrt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub mel: MelConfig,
    pub pitch: PitchConfig,
    /// Frame grid of externally computed content embeddings.
    pub content_rate: u32,
    pub content_hop: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            pitch: PitchConfig::default(),
            content_rate: 16_000,
            content_hop: 320,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.pitch.validate(self.mel.sample_rate)?;
        if self.pitch.hop != self.mel.spectral.hop {
            return Err(Error::config(format!(
                "pitch hop {} must equal mel hop {}",
                self.pitch.hop, self.mel.spectral.hop
            )));
        }
        if self.content_rate == 0 || self.content_hop == 0 {
            return Err(Error::config("content frame grid must be positive"));
        }
        Ok(())
    }
}

/// Non-overlapping blocks of exactly `block_frames * hop` samples; the tail is dropped.
pub fn segment(audio: &AudioBuffer, block_frames: usize, hop: usize) -> Result<Vec<AudioBuffer>> {
    if block_frames == 0 || hop == 0 {
        return Err(Error::config("block_frames and hop must be positive"));
    }
    let len = block_frames * hop;
    Ok(audio
        .samples
        .chunks_exact(len)
        .map(|c| AudioBuffer {
            samples: c.to_vec(),
            sample_rate: audio.sample_rate,
        })
        .collect())
}

/// Sidecar path for an audio file.
pub fn content_sidecar(audio_path: &Path) -> PathBuf {
    let stem = audio_path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    audio_path.with_file_name(format!("{stem}{CONTENT_SUFFIX}"))
}

/// Linear interpolation of content rows from their own grid onto the mel grid.
fn align_content(content: &Array2<f64>, audio: &AudioBuffer, cfg: &FeatureConfig, mel_frames: usize, path: &Path) -> Result<Array2<f64>> {
    let secs = audio.duration_secs();
    let expected = (secs * cfg.content_rate as f64 / cfg.content_hop as f64).floor() as usize + 1;
    if content.nrows().abs_diff(expected) > 1 {
        return Err(Error::MisalignedSidecar {
            path: path.to_path_buf(),
            expected,
            got: content.nrows(),
        });
    }
    let last = content.nrows() - 1;
    let src_period = cfg.content_hop as f64 / cfg.content_rate as f64;
    let dst_period = cfg.mel.spectral.hop as f64 / audio.sample_rate as f64;
    Ok(Array2::from_shape_fn((mel_frames, content.ncols()), |(t, c)| {
        let pos = (t as f64 * dst_period / src_period).min(last as f64);
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        let j = (i + 1).min(last);
        content[[i, c]] * (1.0 - f) + content[[j, c]] * f
    }))
}

/// F0, RMS volume and, when `sidecar` is given, content features, all on the mel frame grid.
pub fn extract_conditioning(audio: &AudioBuffer, cfg: &FeatureConfig, sidecar: Option<&Path>) -> Result<Conditioning> {
    cfg.validate()?;
    if audio.sample_rate != cfg.mel.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: cfg.mel.sample_rate,
            got: audio.sample_rate,
        });
    }
    let frames = cfg.mel.spectral.n_frames(audio.len());
    let f0 = estimate_f0(audio, &cfg.pitch)?;
    let volume = rms_envelope(audio, &cfg.mel.spectral)?;
    debug_assert_eq!(f0.len(), frames);
    debug_assert_eq!(volume.values.len(), frames);
    let content = match sidecar {
        Some(p) => {
            let raw = psrt::read_2d(p)?;
            if raw.nrows() == 0 {
                return Err(Error::MisalignedSidecar {
                    path: p.to_path_buf(),
                    expected: 1,
                    got: 0,
                });
            }
            Some(align_content(&raw, audio, cfg, frames, p)?)
        }
        None => None,
    };
    Conditioning::new(f0.f0, volume.values, content)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsConfig {
    pub features: FeatureConfig,
    pub vocoder: VocoderConfig,
    pub per_file_shifts: usize,
    /// Shifts are uniform on `[-max, -min] ∪ [min, max]` semitones.
    pub min_abs_shift: f64,
    pub max_abs_shift: f64,
    pub validation_ratio: f64,
    /// Cut files into blocks of this many frames first; `None` keeps whole files.
    pub segment_frames: Option<usize>,
    pub seed: u64,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            vocoder: VocoderConfig::default(),
            per_file_shifts: 2,
            min_abs_shift: 0.5,
            max_abs_shift: 12.0,
            validation_ratio: 0.05,
            segment_frames: None,
            seed: 0,
        }
    }
}

impl PairsConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.vocoder.pitch.hop != self.features.mel.spectral.hop {
            return Err(Error::config("vocoder hop must equal the mel hop"));
        }
        if self.per_file_shifts == 0 {
            return Err(Error::config("per_file_shifts must be at least 1"));
        }
        if !(0.0 <= self.min_abs_shift && self.min_abs_shift < self.max_abs_shift && self.max_abs_shift <= ShiftSpec::MAX_SEMITONES) {
            return Err(Error::config("need 0 <= min_abs_shift < max_abs_shift <= 12"));
        }
        if !(0.0..1.0).contains(&self.validation_ratio) {
            return Err(Error::config("validation_ratio must be in [0, 1)"));
        }
        if self.segment_frames == Some(0) {
            return Err(Error::config("segment_frames must be positive"));
        }
        Ok(())
    }

    /// One shift draw, uniform over the two allowed intervals.
    pub fn draw_shift(&self, rng: &mut impl Rng) -> f64 {
        let width = self.max_abs_shift - self.min_abs_shift;
        let u = rng.random_range(0.0..2.0 * width);
        if u < width {
            -(self.max_abs_shift - u)
        } else {
            self.min_abs_shift + (u - width)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// One cached pair; paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub id: String,
    pub source: String,
    pub clean_mel: PathBuf,
    pub artifact_mel: PathBuf,
    pub f0: PathBuf,
    pub volume: PathBuf,
    pub content: Option<PathBuf>,
    pub shift_semitones: f64,
    pub seed: u64,
    pub frames: usize,
    pub split: Split,
}

/// Tensors of one record loaded back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPair {
    pub clean: Array2<f64>,
    pub artifact: Array2<f64>,
    pub cond: Conditioning,
}

impl PairRecord {
    pub fn load(&self, root: &Path) -> Result<LoadedPair> {
        let clean = psrt::read_2d(root.join(&self.clean_mel))?;
        let artifact = psrt::read_2d(root.join(&self.artifact_mel))?;
        let f0 = psrt::read_1d(root.join(&self.f0))?;
        let volume = psrt::read_1d(root.join(&self.volume))?;
        let content = self.content.as_ref().map(|p| psrt::read_2d(root.join(p))).transpose()?;
        for n in [artifact.nrows(), f0.len(), volume.len()] {
            if n != clean.nrows() {
                return Err(Error::shape(clean.nrows(), n));
            }
        }
        Ok(LoadedPair {
            clean,
            artifact,
            cond: Conditioning::new(f0, volume, content)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub config: PairsConfig,
    pub records: Vec<PairRecord>,
    /// Source files that could not be read.
    pub skipped: Vec<String>,
}

impl CorpusManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("manifest version {} unsupported", m.version)));
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Number of validation records for `n` records.
pub fn validation_count(n: usize, ratio: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((ratio * n as f64).round() as usize).max(1).min(n)
}

struct Job {
    source: String,
    id: String,
    audio: AudioBuffer,
    content: Option<Array2<f64>>,
    shift: f64,
    seed: u64,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Shift every corpus file back and forth, cache clean/artifact mels and
/// conditioning under `out_dir`, and write the manifest. Deterministic in
/// `(corpus, config)`.
pub fn build_pairs(corpus_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>, cfg: &PairsConfig) -> Result<CorpusManifest> {
    cfg.validate()?;
    let corpus_dir = corpus_dir.as_ref();
    let out = out_dir.as_ref();
    let sr = cfg.features.mel.sample_rate;
    let files = wav_files(corpus_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for path in &files {
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let audio = match read_wav(path).and_then(|a| if a.sample_rate == sr { Ok(a) } else { resample(&a, sr) }) {
            Ok(a) if a.len() >= cfg.features.pitch.window => a,
            Ok(_) => {
                log::warn!("skipping {}: shorter than one analysis window", path.display());
                skipped.push(name);
                continue;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push(name);
                continue;
            }
        };
        let sidecar = content_sidecar(path);
        let content = if sidecar.exists() {
            let frames = cfg.features.mel.spectral.n_frames(audio.len());
            let raw = psrt::read_2d(&sidecar)?;
            Some(align_content(&raw, &audio, &cfg.features, frames, &sidecar)?)
        } else {
            None
        };
        let pieces: Vec<(String, AudioBuffer, Option<Array2<f64>>)> = match cfg.segment_frames {
            None => vec![(stem.clone(), audio, content)],
            Some(b) => {
                let hop = cfg.features.mel.spectral.hop;
                segment(&audio, b, hop)?
                    .into_iter()
                    .enumerate()
                    .map(|(k, seg)| {
                        let frames = cfg.features.mel.spectral.n_frames(seg.len());
                        let c = content.as_ref().map(|c| {
                            Array2::from_shape_fn((frames, c.ncols()), |(t, j)| c[[(k * b + t).min(c.nrows() - 1), j]])
                        });
                        (format!("{stem}_s{k:03}"), seg, c)
                    })
                    .collect()
            }
        };
        for (base, piece, content) in pieces {
            for j in 0..cfg.per_file_shifts {
                jobs.push(Job {
                    source: name.clone(),
                    id: format!("{base}_{j:02}"),
                    audio: piece.clone(),
                    content: content.clone(),
                    shift: cfg.draw_shift(&mut rng),
                    seed: rng.random(),
                });
            }
        }
    }
    if jobs.is_empty() {
        return Err(Error::EmptyCorpus(corpus_dir.to_path_buf()));
    }

    let results = par::map(&jobs, |job| process_job(job, cfg, out));
    let mut records: Vec<PairRecord> = results.into_iter().collect::<Result<_>>()?;

    let n_val = validation_count(records.len(), cfg.validation_ratio);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);
    for &i in &order[..n_val] {
        records[i].split = Split::Validation;
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        config: *cfg,
        records,
        skipped,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    psrt::write_atomic(&out.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

fn process_job(job: &Job, cfg: &PairsConfig, out: &Path) -> Result<PairRecord> {
    let shift = ShiftSpec::new(job.shift)?;
    let vocoder = VocoderConfig {
        seed: job.seed,
        ..cfg.vocoder
    };
    let (artifact, clean) = make_artifact_pair(&job.audio, shift, &vocoder)?;
    let mel_cfg = &cfg.features.mel;
    let clean_mel = log_mel(&clean, mel_cfg)?;
    let art_mel = log_mel(&artifact, mel_cfg)?;
    let mut cond = extract_conditioning(&artifact, &cfg.features, None)?;
    cond.content = job.content.clone();
    let frames = clean_mel.frames();
    if art_mel.frames() != frames || cond.frames() != frames {
        return Err(Error::shape(frames, (art_mel.frames(), cond.frames())));
    }
    let rel = |dir: &str| PathBuf::from(dir).join(format!("{}.psrt", job.id));
    let record = PairRecord {
        id: job.id.clone(),
        source: job.source.clone(),
        clean_mel: rel("mels"),
        artifact_mel: rel("artifacts"),
        f0: rel("f0"),
        volume: rel("vol"),
        content: cond.content.as_ref().map(|_| rel("content")),
        shift_semitones: job.shift,
        seed: job.seed,
        frames,
        split: Split::Train,
    };
    psrt::write_2d(out.join(&record.clean_mel), &clean_mel.data, DType::F32)?;
    psrt::write_2d(out.join(&record.artifact_mel), &art_mel.data, DType::F32)?;
    psrt::write_1d(out.join(&record.f0), &cond.f0, DType::F32)?;
    psrt::write_1d(out.join(&record.volume), &cond.volume, DType::F32)?;
    if let (Some(p), Some(c)) = (&record.content, &cond.content) {
        psrt::write_2d(out.join(p), c, DType::F32)?;
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_wav;
    use crate::pitch::cents_between;
    use crate::synth;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn segment_counts_and_prefix() {
        let a = synth::white_noise(2 * 64 * 256 + 1000, 0.1, 44_100, 1);
        let segs = segment(&a, 64, 256).unwrap();
        assert_eq!(segs.len(), 2);
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.samples.clone()).collect();
        assert_eq!(&joined[..], &a.samples[..joined.len()]);
        assert!(segment(&synth::white_noise(100, 0.1, 44_100, 1), 64, 256).unwrap().is_empty());
        assert!(segment(&a, 0, 256).is_err());
    }

    #[test]
    fn conditioning_of_sawtooth() {
        let cfg = FeatureConfig::default();
        let (f0, amp) = (220.0, 0.3);
        let a = synth::sawtooth(f0, 1.0, 44_100, amp);
        let c = extract_conditioning(&a, &cfg, None).unwrap();
        assert_eq!(c.frames(), cfg.mel.spectral.n_frames(a.len()));
        assert!(c.content.is_none());
        // band-limited sawtooth: amplitudes amp * 2/pi / k
        let k_max = ((22_050.0 - 1.0) / f0) as usize;
        let power: f64 = (1..=k_max).map(|k| (amp * 2.0 / std::f64::consts::PI / k as f64).powi(2) / 2.0).sum();
        let rms = power.sqrt();
        let mid = c.frames() / 2;
        for t in mid - 20..mid + 20 {
            assert!(cents_between(f0, c.f0[t]).unwrap().abs() < 5.0);
            assert!((c.volume[t] / rms - 1.0).abs() < 0.05, "{} vs {rms}", c.volume[t]);
        }
    }

    #[test]
    fn conditioning_of_silence() {
        let a = AudioBuffer::silence(20_000, 44_100);
        let c = extract_conditioning(&a, &FeatureConfig::default(), None).unwrap();
        assert!(c.f0.iter().all(|&f| f == 0.0));
        assert!(c.volume.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn content_sidecar_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = FeatureConfig::default();
        let a = synth::sawtooth(200.0, 1.0, 44_100, 0.3);
        let rows = 51;
        // a ramp in time, so interpolation is exact
        let content = Array2::from_shape_fn((rows, 2), |(j, c)| j as f64 * 0.02 + c as f64);
        let p = dir.path().join("x.content.psrt");
        psrt::write_2d(&p, &content, DType::F64).unwrap();
        let c = extract_conditioning(&a, &cfg, Some(&p)).unwrap();
        let m = c.content.unwrap();
        assert_eq!(m.dim(), (c.f0.len(), 2));
        for t in [0, 10, 100] {
            let secs = t as f64 * 256.0 / 44_100.0;
            assert!((m[[t, 0]] - secs).abs() < 1e-9, "{t}");
        }
        psrt::write_2d(&p, &Array2::zeros((30, 2)), DType::F64).unwrap();
        match extract_conditioning(&a, &cfg, Some(&p)) {
            Err(Error::MisalignedSidecar { expected, got, .. }) => assert_eq!((expected, got), (51, 30)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_rounding() {
        assert_eq!(validation_count(20, 0.05), 1);
        assert_eq!(validation_count(10, 0.05), 1);
        assert_eq!(validation_count(100, 0.05), 5);
        assert_eq!(validation_count(0, 0.05), 0);
    }

    #[test]
    fn shift_draws_are_uniform() {
        let cfg = PairsConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..4600).map(|_| cfg.draw_shift(&mut rng)).collect();
        assert!(draws.iter().all(|d| (0.5..=12.0).contains(&d.abs())));
        // 23 equal-width bins over the allowed set
        let mut counts = [0f64; 23];
        for d in &draws {
            let u = if *d < 0.0 { d + 12.0 } else { d - 0.5 + 11.5 };
            counts[((u / 1.0) as usize).min(22)] += 1.0;
        }
        let e = draws.len() as f64 / 23.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(22.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "p = {p}");
    }

    fn write_corpus(dir: &Path, n: usize) {
        for (name, a) in synth::toy_corpus(n, 0.4, 44_100, 5) {
            write_wav(dir.join(format!("{name}.wav")), &a).unwrap();
        }
    }

    #[test]
    fn build_pairs_end_to_end() {
        let corpus = tempfile::tempdir().unwrap();
        write_corpus(corpus.path(), 10);
        std::fs::write(corpus.path().join("broken.wav"), b"nope").unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = PairsConfig::default();
        let m = build_pairs(corpus.path(), out.path(), &cfg).unwrap();
        assert_eq!(m.records.len(), 20);
        assert_eq!(m.split(Split::Validation).count(), 1);
        assert_eq!(m.split(Split::Train).count(), 19);
        assert_eq!(m.skipped, vec!["broken.wav"]);
        let mut ids: Vec<&str> = m.records.iter().map(|r| r.id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        for r in &m.records {
            let p = r.load(out.path()).unwrap();
            assert_eq!(p.clean.dim(), p.artifact.dim());
            assert_eq!(p.cond.frames(), r.frames);
            assert!((0.5..=12.0).contains(&r.shift_semitones.abs()));
        }
        assert_eq!(CorpusManifest::load(out.path()).unwrap(), m);

        let again = tempfile::tempdir().unwrap();
        build_pairs(corpus.path(), again.path(), &cfg).unwrap();
        let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
        assert_eq!(read(out.path(), MANIFEST_FILE), read(again.path(), MANIFEST_FILE));
        let f = m.records[3].artifact_mel.to_str().unwrap().to_string();
        assert_eq!(read(out.path(), &f), read(again.path(), &f));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_pairs(corpus.path(), out.path(), &PairsConfig::default()),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn segmented_pairs() {
        let corpus = tempfile::tempdir().unwrap();
        let a = synth::sawtooth(200.0, 1.0, 44_100, 0.3);
        write_wav(corpus.path().join("long.wav"), &a).unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = PairsConfig {
            segment_frames: Some(64),
            per_file_shifts: 1,
            ..PairsConfig::default()
        };
        let m = build_pairs(corpus.path(), out.path(), &cfg).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].id, "long_s000_00");
        assert_eq!(m.records[0].frames, 65);
    }
}
