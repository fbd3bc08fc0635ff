use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use ndarray::{concatenate, Array2, Axis};
use serde_json::{json, Value};

use reshift_core::audio::{read_wav, write_wav, AudioBuffer};
use reshift_core::dataset::{build_pairs, content_sidecar, extract_conditioning, CorpusManifest, FeatureConfig, Split};
use reshift_core::diffusion::{Checkpoint, Conditioning, LossParts, MelNorm, TrainExample, Trainer};
use reshift_core::dsp::{griffin_lim, log_mel, resample, MelSpectrogram};
use reshift_core::metrics::{evaluate_dirs, kid_poly, mmd_rbf};
use reshift_core::pitch::estimate_f0;
use reshift_core::psola::psola_shift;
use reshift_core::psrt::{self, DType};
use reshift_core::vocoder::{pitch_shift, ShiftSpec};
use reshift_core::{Error, SAMPLE_RATE};

use crate::config::RunConfig;
use crate::{explicit, CliError, EvalArgs, FeaturesArgs, Method, PairsArgs, RestoreArgs, ShiftArgs, TrainArgs};

type Outcome = Result<Value, CliError>;

const LOSS_CSV: &str = "loss.csv";
const LOSS_HEADER: &str = "step,split,diffusion,mel,f0,total";

pub fn emit(report: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report).map_err(Error::from)?;
    text.push('\n');
    match out {
        Some(p) => psrt::write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_audio(path: &Path) -> Result<AudioBuffer, CliError> {
    let audio = read_wav(path)?;
    if audio.sample_rate == SAMPLE_RATE {
        return Ok(audio);
    }
    log::info!("resampling {} from {} Hz", path.display(), audio.sample_rate);
    Ok(resample(&audio, SAMPLE_RATE)?)
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

pub fn shift(a: &ShiftArgs, cfg: &RunConfig) -> Outcome {
    let spec = ShiftSpec::new(a.semitones)?;
    cfg.validate_shift()?;
    let audio = load_audio(&a.input)?;
    let mut out = match a.method {
        Method::World => pitch_shift(&audio, spec, &cfg.shift.vocoder)?,
        Method::Psola => psola_shift(&audio, spec, &cfg.shift.psola)?,
    };
    out.limit_peak(1.0);
    write_wav(&a.output, &out)?;
    let f_in = estimate_f0(&audio, &cfg.shift.measure)?;
    let f_out = estimate_f0(&out, &cfg.shift.measure)?;
    Ok(json!({
        "input": a.input,
        "output": a.output,
        "method": match a.method { Method::World => "world", Method::Psola => "psola" },
        "semitones": a.semitones,
        "seed": cfg.seed,
        "input_median_f0_hz": f_in.median_voiced(),
        "output_median_f0_hz": f_out.median_voiced(),
        "output_voiced_fraction": f_out.voiced_fraction(),
        "duration_secs": out.duration_secs(),
    }))
}

pub fn pairs(a: &PairsArgs, m: &ArgMatches, cfg: &mut RunConfig) -> Outcome {
    let p = &mut cfg.pairs;
    if explicit(m, "shifts_per_file") {
        p.per_file_shifts = a.shifts_per_file;
    }
    if explicit(m, "min_shift") {
        p.min_abs_shift = a.min_shift;
    }
    if explicit(m, "max_shift") {
        p.max_abs_shift = a.max_shift;
    }
    if explicit(m, "validation_ratio") {
        p.validation_ratio = a.validation_ratio;
    }
    if a.segment_frames.is_some() {
        p.segment_frames = a.segment_frames;
    }
    p.validate()?;
    let manifest = build_pairs(&a.corpus, &a.out_dir, p)?;
    Ok(json!({
        "manifest": a.out_dir.join(reshift_core::dataset::MANIFEST_FILE),
        "records": manifest.records.len(),
        "train": manifest.split(Split::Train).count(),
        "validation": manifest.split(Split::Validation).count(),
        "skipped": manifest.skipped,
        "seed": cfg.seed,
    }))
}

fn examples(
    manifest: &CorpusManifest,
    root: &Path,
    split: Split,
    norm: &MelNorm,
) -> Result<Vec<TrainExample>, CliError> {
    let mut out = Vec::new();
    for r in manifest.split(split) {
        let p = r.load(root)?;
        out.push(TrainExample::new(&p.clean, &p.artifact, &p.cond, norm)?);
    }
    Ok(out)
}

fn loss_row(buf: &mut String, step: u64, split: &str, l: &LossParts) {
    let _ = writeln!(buf, "{step},{split},{},{},{},{}", l.diffusion, l.mel, l.f0, l.total);
}

/// Rows of an earlier loss curve up to and including `upto`.
fn previous_rows(dir: &Path, upto: u64) -> String {
    let Ok(text) = std::fs::read_to_string(dir.join(LOSS_CSV)) else {
        return String::new();
    };
    let mut out = String::new();
    for line in text.lines().skip(1) {
        let step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        if step.is_some_and(|s| s <= upto) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn train(a: &TrainArgs, m: &ArgMatches, cfg: &mut RunConfig) -> Outcome {
    let t = &mut cfg.train;
    macro_rules! take {
        ($($flag:literal => $field:ident = $val:expr),* $(,)?) => {
            $(if explicit(m, $flag) { t.$field = $val; })*
        };
    }
    take!(
        "steps" => steps = a.steps,
        "lr" => lr = a.lr,
        "batch_size" => batch_size = a.batch_size,
        "block_frames" => block_frames = a.block_frames,
        "depth" => depth = a.depth,
        "max_step" => max_step = a.max_step,
        "lambda_mel" => lambda_mel = a.lambda_mel,
        "lambda_f0" => lambda_f0 = a.lambda_f0,
        "channels" => channels = a.channels,
        "layers" => layers = a.layers,
        "validate_every" => validate_every = a.validate_every,
    );
    t.validate()?;
    let manifest = CorpusManifest::load(&a.data)?;
    let mel_cfg = manifest.config.features.mel;

    let mut rows = String::new();
    let (mut trainer, norm) = match &a.resume {
        Some(dir) => {
            let ckpt = Checkpoint::load(dir)?;
            if ckpt.manifest.mel != mel_cfg {
                return Err(usage("checkpoint mel configuration differs from the training data"));
            }
            let mut trainer = Trainer::from_checkpoint(ckpt)?;
            for flag in ["lr", "batch_size", "block_frames", "depth", "max_step", "lambda_mel", "lambda_f0", "channels", "layers"] {
                if explicit(m, flag) {
                    log::warn!("--{} is ignored when resuming", flag.replace('_', "-"));
                }
            }
            trainer.config.steps = t.steps;
            trainer.config.validate_every = t.validate_every;
            rows = previous_rows(dir, trainer.step);
            let norm = trainer.norm;
            (Some(trainer), norm)
        }
        None => {
            let mut mels = Vec::new();
            for r in manifest.split(Split::Train) {
                let p = r.load(&a.data)?;
                mels.push(p.clean);
                mels.push(p.artifact);
            }
            (None, MelNorm::fit(mels.iter())?)
        }
    };
    let data = examples(&manifest, &a.data, Split::Train, &norm)?;
    let val = examples(&manifest, &a.data, Split::Validation, &norm)?;
    if data.is_empty() {
        return Err(usage("manifest has no training records"));
    }
    let mut trainer = match trainer.take() {
        Some(tr) => {
            if tr.params.config.cond_dim != data[0].cond.ncols() {
                return Err(usage("checkpoint conditioning width differs from the training data"));
            }
            tr
        }
        None => Trainer::for_data(*t, mel_cfg, norm, &data)?,
    };

    let steps = trainer.config.steps;
    let every = trainer.config.validate_every;
    let mut last_train = None;
    let mut last_val = None;
    while trainer.step < steps {
        let l = trainer.train_step(&data)?;
        loss_row(&mut rows, trainer.step, "train", &l);
        last_train = Some(l);
        let due = every > 0 && trainer.step % every == 0;
        if !val.is_empty() && (due || trainer.step == steps) {
            let v = trainer.validation_loss(&val)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { step: trainer.step }.into());
            }
            log::info!("step {}: validation loss {:.5}", trainer.step, v.total);
            loss_row(&mut rows, trainer.step, "validation", &v);
            last_val = Some(v);
        }
    }
    let ckpt = trainer.checkpoint();
    ckpt.save(&a.checkpoint)?;
    let csv = format!("{LOSS_HEADER}\n{rows}");
    psrt::write_atomic(&a.checkpoint.join(LOSS_CSV), csv.as_bytes())?;
    Ok(json!({
        "checkpoint": a.checkpoint,
        "resumed_from": a.resume,
        "step": trainer.step,
        "train_records": data.len(),
        "validation_records": val.len(),
        "parameters": trainer.params.parameter_count(),
        "last_train_loss": last_train,
        "last_validation_loss": last_val,
        "seed": cfg.seed,
    }))
}

fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let t = psrt::read(path)?;
    match t.ndim() {
        1 => Ok(t.iter().copied().collect()),
        2 if t.shape()[1] == 1 => Ok(t.iter().copied().collect()),
        _ => Err(usage(format!("{}: expected a vector, got shape {:?}", path.display(), t.shape()))),
    }
}

fn is_psrt(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("psrt"))
}

pub fn restore(a: &RestoreArgs, m: &ArgMatches, cfg: &mut RunConfig) -> Outcome {
    if a.depth.is_some() {
        cfg.restore.depth = a.depth;
    }
    if a.stride.is_some() {
        cfg.restore.stride = a.stride;
    }
    if explicit(m, "gl_iters") {
        cfg.restore.griffin_lim_iters = a.gl_iters;
    }
    cfg.validate_restore()?;
    let from_mel = is_psrt(&a.input);
    if from_mel && (a.f0.is_none() || a.volume.is_none()) {
        return Err(usage("a log-mel input needs --f0 and --volume"));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mel_cfg = ckpt.manifest.mel;
    let depth = cfg.restore.depth.unwrap_or(ckpt.manifest.train.depth);
    let stride = cfg.restore.stride.unwrap_or(ckpt.manifest.train.stride);
    let wants_content = ckpt.params.config.cond_dim > 2;
    let content_path = a
        .content
        .clone()
        .or_else(|| wants_content.then(|| existing(content_sidecar(&a.input))).flatten());

    let (mel, cond) = if from_mel {
        let data = psrt::read_2d(&a.input)?;
        if data.ncols() != mel_cfg.n_mels {
            return Err(usage(format!(
                "log-mel has {} bands, checkpoint expects {}",
                data.ncols(),
                mel_cfg.n_mels
            )));
        }
        let content = content_path.as_deref().map(psrt::read_2d).transpose()?;
        let f0 = read_vector(a.f0.as_deref().unwrap_or(Path::new("")))?;
        let volume = read_vector(a.volume.as_deref().unwrap_or(Path::new("")))?;
        let cond = Conditioning::new(f0, volume, content)?;
        (MelSpectrogram { data, config: mel_cfg }, cond)
    } else {
        let audio = load_audio(&a.input)?;
        let mel = log_mel(&audio, &mel_cfg)?;
        let features = FeatureConfig {
            mel: mel_cfg,
            pitch: reshift_core::pitch::PitchConfig {
                hop: mel_cfg.spectral.hop,
                ..cfg.restore.pitch
            },
            ..cfg.features
        };
        let mut cond = extract_conditioning(&audio, &features, content_path.as_deref())?;
        if let Some(p) = &a.f0 {
            cond.f0 = read_vector(p)?;
        }
        if let Some(p) = &a.volume {
            cond.volume = read_vector(p)?;
        }
        let cond = Conditioning::new(cond.f0, cond.volume, cond.content)?;
        (mel, cond)
    };
    if cond.frames() != mel.frames() {
        return Err(usage(format!(
            "conditioning has {} frames, log-mel has {}",
            cond.frames(),
            mel.frames()
        )));
    }
    let restored = ckpt.restore_mel(&mel, &cond, depth, stride, cfg.seed)?;
    let mel_path = a.output.with_extension("psrt");
    psrt::write_2d(&mel_path, &restored.data, DType::F32)?;
    let mut audio = griffin_lim(&restored, cfg.restore.griffin_lim_iters, cfg.seed)?;
    audio.limit_peak(1.0);
    write_wav(&a.output, &audio)?;
    Ok(json!({
        "input": a.input,
        "checkpoint": a.checkpoint,
        "output": a.output,
        "mel": mel_path,
        "frames": restored.frames(),
        "depth": depth,
        "stride": stride,
        "griffin_lim_iters": cfg.restore.griffin_lim_iters,
        "content": content_path,
        "seed": cfg.seed,
    }))
}

/// Median of all pairwise Euclidean distances in the pooled set; 1 when degenerate.
fn median_distance(x: &Array2<f64>) -> f64 {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let diff = &x.row(i) - &x.row(j);
            d.push(diff.dot(&diff).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

pub fn eval(a: &EvalArgs, m: &ArgMatches, cfg: &mut RunConfig) -> Outcome {
    let e = &mut cfg.eval;
    if a.mmd_sigma.is_some() {
        e.mmd_sigma = a.mmd_sigma;
    }
    if explicit(m, "kid_subset_size") {
        e.kid_subset_size = a.kid_subset_size;
    }
    if explicit(m, "kid_subsets") {
        e.kid_subsets = a.kid_subsets;
    }
    cfg.validate_eval()?;
    let e = cfg.eval;
    let report = evaluate_dirs(&a.ref_dir, &a.est_dir, &e.metrics)?;
    let mut out = serde_json::to_value(&report).map_err(Error::from)?;
    out["seed"] = json!(cfg.seed);
    if let (Some(ra), Some(rb)) = (&a.ref_embeddings, &a.est_embeddings) {
        let x = psrt::read_2d(ra)?;
        let y = psrt::read_2d(rb)?;
        if x.ncols() != y.ncols() {
            return Err(usage(format!("embedding widths differ: {} vs {}", x.ncols(), y.ncols())));
        }
        let sigma = match e.mmd_sigma {
            Some(s) => s,
            None => median_distance(&concatenate(Axis(0), &[x.view(), y.view()]).map_err(|err| usage(err.to_string()))?),
        };
        let subset = e.kid_subset_size.min(x.nrows()).min(y.nrows());
        out["distribution"] = json!({
            "clips_ref": x.nrows(),
            "clips_est": y.nrows(),
            "mmd_sigma": sigma,
            "mmd": mmd_rbf(x.view(), y.view(), sigma)?,
            "kid_subset_size": subset,
            "kid_subsets": e.kid_subsets,
            "kid": kid_poly(x.view(), y.view(), subset, e.kid_subsets, cfg.seed)?,
        });
    }
    Ok(out)
}

pub fn features(a: &FeaturesArgs, cfg: &RunConfig) -> Outcome {
    let f = &cfg.features;
    f.validate()?;
    let audio = load_audio(&a.input)?;
    let mel = log_mel(&audio, &f.mel)?;
    let sidecar = existing(content_sidecar(&a.input));
    let cond = extract_conditioning(&audio, f, sidecar.as_deref())?;
    let stem = a
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| usage(format!("{}: no file stem", a.input.display())))?;
    let path = |kind: &str| a.out_dir.join(format!("{stem}.{kind}.psrt"));
    let (mel_p, f0_p, vol_p) = (path("mel"), path("f0"), path("vol"));
    psrt::write_2d(&mel_p, &mel.data, DType::F32)?;
    psrt::write_1d(&f0_p, &cond.f0, DType::F32)?;
    psrt::write_1d(&vol_p, &cond.volume, DType::F32)?;
    let content_p = match &cond.content {
        Some(c) => {
            let p = path("content");
            psrt::write_2d(&p, c, DType::F32)?;
            Some(p)
        }
        None => None,
    };
    let voiced: Vec<f64> = cond.f0.iter().copied().filter(|&v| v > 0.0).collect();
    let contour = reshift_core::pitch::F0Contour::from_hz(cond.f0.clone(), f.pitch.hop, SAMPLE_RATE);
    Ok(json!({
        "input": a.input,
        "frames": mel.frames(),
        "n_mels": f.mel.n_mels,
        "voiced_frames": voiced.len(),
        "median_f0_hz": contour.median_voiced(),
        "mel": mel_p,
        "f0": f0_p,
        "volume": vol_p,
        "content": content_p,
        "seed": cfg.seed,
    }))
}
