use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reshift_core::audio::{read_wav, write_wav};
use reshift_core::dataset::CorpusManifest;
use reshift_core::diffusion::{Checkpoint, MelNorm, TrainConfig, TrainExample, Trainer};
use reshift_core::synth;
use serde_json::Value;

const SR: u32 = 44_100;

fn reshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reshift"))
        .args(args)
        .env_remove("RESHIFT_LOG")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON report on stdout")
}

fn corpus(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for (name, a) in synth::toy_corpus(n, 0.5, SR, 11) {
        write_wav(dir.join(format!("{name}.wav")), &a).unwrap();
    }
}

const TINY: [&str; 10] = [
    "--batch-size",
    "2",
    "--block-frames",
    "32",
    "--channels",
    "8",
    "--layers",
    "2",
    "--validate-every",
    "2",
];

fn train(data: &Path, ckpt: &Path, steps: &str, extra: &[&str]) -> Value {
    let mut args = vec!["train", s(data), s(ckpt), "--steps", steps, "--seed", "5"];
    args.extend(TINY);
    args.extend(extra);
    ok_json(reshift(&args))
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Flags that are optional paths, required values or clap built-ins.
const NO_DEFAULT: [&str; 10] = [
    "--config",
    "--out",
    "--help",
    "--version",
    "--semitones",
    "--resume",
    "--f0",
    "--volume",
    "--ref-embeddings",
    "--est-embeddings",
];

/// Each option's long name with the help text that follows it.
fn flag_blocks(help: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in help.lines() {
        let t = line.trim_start();
        if t.starts_with('-') {
            let long = t
                .split(|c: char| c.is_whitespace() || c == ',')
                .find(|w| w.starts_with("--"))
                .unwrap_or("")
                .to_string();
            out.push((long, t.to_string()));
        } else if let Some(last) = out.last_mut().filter(|_| line.starts_with("     ")) {
            last.1.push_str(t);
        }
    }
    out
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for sub in ["", "shift", "pairs", "train", "restore", "eval", "features"] {
        let mut args: Vec<&str> = sub.split_whitespace().collect();
        args.push("--help");
        let out = reshift(&args);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let name = if sub.is_empty() { "reshift" } else { sub };
        let path = golden.join(format!("{name}.txt"));
        if update {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(text, want, "help for `{name}` changed; rerun with UPDATE_GOLDEN=1");
        for (flag, block) in flag_blocks(&text) {
            assert!(
                block.contains("[default:") || NO_DEFAULT.contains(&flag.as_str()),
                "{flag} lists no default in `{name}`"
            );
        }
    }
}

#[test]
fn shift_out_of_range_is_a_usage_error() {
    let out = reshift(&["shift", "/nonexistent/in.wav", "/nonexistent/out.wav", "--semitones", "13"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside"));
}

#[test]
fn shift_octave_up_doubles_reported_f0() {
    let dir = tempfile::tempdir().unwrap();
    let (inp, outp) = (dir.path().join("saw.wav"), dir.path().join("up.wav"));
    write_wav(&inp, &synth::sawtooth(220.0, 1.0, SR, 0.5)).unwrap();
    for method in ["world", "psola"] {
        let r = ok_json(reshift(&["shift", s(&inp), s(&outp), "--semitones", "12", "--method", method]));
        let f = r["output_median_f0_hz"].as_f64().unwrap();
        let cents = 1200.0 * (f / 440.0).log2();
        assert!(cents.abs() < 20.0, "{method}: {f} Hz");
        assert!((r["input_median_f0_hz"].as_f64().unwrap() - 220.0).abs() < 2.0);
        assert_eq!(r["seed"], 0);
    }
}

#[test]
fn psola_zero_shift_is_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let (inp, outp) = (dir.path().join("v.wav"), dir.path().join("o.wav"));
    let voice = synth::vowel(
        &synth::VoiceSpec {
            f0: 196.0,
            vibrato_hz: 5.0,
            vibrato_cents: 30.0,
            formants: vec![(700.0, 110.0), (1200.0, 120.0), (2600.0, 160.0)],
            secs: 1.0,
            level: 0.5,
            breath: 0.0,
            ramp: 0.05,
        },
        SR,
        3,
    );
    write_wav(&inp, &voice).unwrap();
    ok_json(reshift(&["shift", s(&inp), s(&outp), "--semitones", "0", "--method", "psola"]));
    let (a, b) = (read_wav(&inp).unwrap(), read_wav(&outp).unwrap());
    assert_eq!(a.len(), b.len());
    // Steady part of the note, away from the onset and release ramps.
    let span = 4_410..a.len() - 4_410;
    let num: f64 = span.clone().map(|i| (a.samples[i] - b.samples[i]).powi(2)).sum();
    let den: f64 = span.map(|i| a.samples[i].powi(2)).sum();
    assert!((num / den).sqrt() < 1e-3, "relative L2 {}", (num / den).sqrt());
}

#[test]
fn pairs_on_empty_or_missing_folder_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = reshift(&["pairs", s(&empty), s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = reshift(&["pairs", s(&dir.path().join("missing")), s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pairs_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("wavs");
    corpus(&wavs, 4);
    let run = |out: &str, seed: &str, jobs: &str| {
        let o = dir.path().join(out);
        let r = ok_json(reshift(&[
            "pairs", s(&wavs), s(&o), "--shifts-per-file", "3", "--seed", seed, "--jobs", jobs,
        ]));
        (r, tree_bytes(&o))
    };
    let (r, a) = run("a", "4", "1");
    assert_eq!(r["records"], 12);
    assert_eq!(r["train"].as_u64().unwrap() + r["validation"].as_u64().unwrap(), 12);
    assert_eq!(r["seed"], 4);
    let (_, b) = run("b", "4", "2");
    assert_eq!(a, b);
    let (_, c) = run("c", "5", "1");
    assert_ne!(a, c);
}

#[test]
fn config_file_is_validated_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("wavs");
    corpus(&wavs, 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"pairs": {"per_file_shift": 1}}"#).unwrap();
    let out = reshift(&["pairs", s(&wavs), s(&dir.path().join("x")), "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x").exists());

    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"seed": 8, "pairs": {"per_file_shifts": 1}}"#).unwrap();
    let r = ok_json(reshift(&["pairs", s(&wavs), s(&dir.path().join("y")), "--config", s(&good)]));
    assert_eq!((r["records"].as_u64(), r["seed"].as_u64()), (Some(2), Some(8)));
    let r = ok_json(reshift(&[
        "pairs", s(&wavs), s(&dir.path().join("z")), "--config", s(&good), "--shifts-per-file", "2", "--seed", "1",
    ]));
    assert_eq!((r["records"].as_u64(), r["seed"].as_u64()), (Some(4), Some(1)));
}

#[test]
fn train_zero_steps_resume_and_restore() {
    let dir = tempfile::tempdir().unwrap();
    let (wavs, data) = (dir.path().join("wavs"), dir.path().join("data"));
    corpus(&wavs, 3);
    ok_json(reshift(&["pairs", s(&wavs), s(&data), "--validation-ratio", "0.2"]));

    // Zero steps: the checkpoint is the initialisation.
    let ck0 = dir.path().join("ck0");
    let r = train(&data, &ck0, "0", &[]);
    assert_eq!(r["step"], 0);
    let manifest = CorpusManifest::load(&data).unwrap();
    let loaded: Vec<_> = manifest.records.iter().filter(|r| r.split == reshift_core::dataset::Split::Train).map(|r| r.load(&data).unwrap()).collect();
    let norm = MelNorm::fit(loaded.iter().flat_map(|p| [&p.clean, &p.artifact])).unwrap();
    let ex: Vec<_> = loaded.iter().map(|p| TrainExample::new(&p.clean, &p.artifact, &p.cond, &norm).unwrap()).collect();
    let cfg = TrainConfig {
        steps: 0,
        batch_size: 2,
        block_frames: 32,
        channels: 8,
        layers: 2,
        validate_every: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let init = Trainer::for_data(cfg, manifest.config.features.mel, norm, &ex).unwrap();
    assert_eq!(Checkpoint::load(&ck0).unwrap().params, init.params);

    // Four steps straight equal two steps plus a resumed two.
    let (full, half, resumed) = (dir.path().join("full"), dir.path().join("half"), dir.path().join("res"));
    train(&data, &full, "4", &[]);
    train(&data, &half, "2", &[]);
    train(&data, &resumed, "4", &["--resume", s(&half)]);
    let a = Checkpoint::load(&full).unwrap();
    let b = Checkpoint::load(&resumed).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.adam, b.adam);
    let csv_a = std::fs::read_to_string(full.join("loss.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read_to_string(resumed.join("loss.csv")).unwrap());
    assert!(csv_a.starts_with("step,split,diffusion,mel,f0,total\n"));
    assert!(csv_a.lines().any(|l| l.contains(",validation,")));
    let again = dir.path().join("again");
    train(&data, &again, "4", &[]);
    assert_eq!(tree_bytes(&full), tree_bytes(&again));

    // Restore from WAV twice, then from the written tensors.
    let src = std::fs::read_dir(&wavs).unwrap().next().unwrap().unwrap().path();
    let restore = |out: &Path, extra: &[&str]| {
        let mut args = vec!["restore", s(&src), s(&full), s(out), "--depth", "5", "--gl-iters", "4", "--seed", "2"];
        args.extend(extra);
        ok_json(reshift(&args))
    };
    let (o1, o2) = (dir.path().join("r1.wav"), dir.path().join("r2.wav"));
    let r = restore(&o1, &[]);
    assert_eq!(r["depth"], 5);
    restore(&o2, &[]);
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    assert_eq!(
        std::fs::read(o1.with_extension("psrt")).unwrap(),
        std::fs::read(o2.with_extension("psrt")).unwrap()
    );

    let feats = dir.path().join("feats");
    let f = ok_json(reshift(&["features", s(&src), s(&feats)]));
    let (mel, f0, vol) = (f["mel"].as_str().unwrap(), f["f0"].as_str().unwrap(), f["volume"].as_str().unwrap());
    let out = reshift(&["restore", mel, s(&full), s(&dir.path().join("m.wav"))]);
    assert_eq!(out.status.code(), Some(2), "log-mel input without conditioning");
    let o3 = dir.path().join("r3.wav");
    ok_json(reshift(&[
        "restore", mel, s(&full), s(&o3), "--f0", f0, "--volume", vol, "--depth", "5", "--gl-iters", "4",
    ]));
    assert!(!read_wav(&o3).unwrap().is_empty());

    let out = reshift(&["restore", s(&src), s(&dir.path().join("nope")), s(&o3)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_1_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let (wavs, data) = (dir.path().join("wavs"), dir.path().join("data"));
    corpus(&wavs, 2);
    ok_json(reshift(&["pairs", s(&wavs), s(&data)]));
    let ck = dir.path().join("ck");
    let mut args = vec!["train", s(&data), s(&ck), "--steps", "20", "--lr", "1e200"];
    args.extend(TINY);
    let out = reshift(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at step"));
}

#[test]
fn eval_self_unmatched_and_means() {
    let dir = tempfile::tempdir().unwrap();
    let (refs, ests) = (dir.path().join("ref"), dir.path().join("est"));
    corpus(&refs, 3);
    std::fs::create_dir_all(&ests).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(&refs).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for (i, p) in names.iter().enumerate().take(2) {
        let mut a = read_wav(p).unwrap();
        if i == 1 {
            a.samples.iter_mut().enumerate().for_each(|(k, v)| *v += 0.01 * ((k as f64) * 0.37).sin());
        }
        write_wav(ests.join(p.file_name().unwrap()), &a).unwrap();
    }
    write_wav(ests.join("stray.wav"), &synth::sine(300.0, 0.5, SR, 0.3)).unwrap();

    let report_path = dir.path().join("r.json");
    let out = reshift(&["eval", s(&refs), s(&ests), "--out", s(&report_path), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(r["seed"], 3);
    assert_eq!(r["unmatched_ref"].as_array().unwrap().len(), 1);
    assert_eq!(r["unmatched_est"], serde_json::json!(["stray"]));
    let pairs = r["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    let same = &pairs[0]["metrics"];
    assert_eq!(same["sc"].as_f64(), Some(0.0));
    assert_eq!(same["lsd"].as_f64(), Some(0.0));
    assert_eq!(same["si_sdr_db"].as_f64(), Some(100.0));
    for key in ["sc", "lsd", "si_sdr_db", "mfcc_l2"] {
        let vals: Vec<f64> = pairs.iter().filter_map(|p| p["metrics"][key].as_f64()).collect();
        let hand = vals.iter().sum::<f64>() / vals.len() as f64;
        let got = r["summary"]["mean"][key].as_f64().unwrap();
        assert!((got - hand).abs() <= 1e-12 * hand.abs().max(1.0), "{key}: {got} vs {hand}");
    }

    let first = std::fs::read(&report_path).unwrap();
    let again = reshift(&["--jobs", "1", "eval", s(&refs), s(&ests), "--out", s(&report_path), "--seed", "3"]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(&report_path).unwrap(), first);
}

#[test]
fn eval_with_embeddings_reports_mmd_and_kid() {
    use ndarray::Array2;
    let dir = tempfile::tempdir().unwrap();
    let (refs, ests) = (dir.path().join("ref"), dir.path().join("est"));
    corpus(&refs, 1);
    corpus(&ests, 1);
    let x = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
    let y = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64 * 0.2 + 0.05);
    let (ex, ey) = (dir.path().join("x.psrt"), dir.path().join("y.psrt"));
    reshift_core::psrt::write_2d(&ex, &x, reshift_core::psrt::DType::F64).unwrap();
    reshift_core::psrt::write_2d(&ey, &y, reshift_core::psrt::DType::F64).unwrap();
    let r = ok_json(reshift(&[
        "eval", s(&refs), s(&ests), "--ref-embeddings", s(&ex), "--est-embeddings", s(&ey), "--mmd-sigma", "0.7",
    ]));
    let d = &r["distribution"];
    let want = reshift_core::metrics::mmd_rbf(x.view(), y.view(), 0.7).unwrap();
    assert_eq!(d["mmd"].as_f64(), Some(want));
    assert_eq!(d["kid_subset_size"], 5);
    assert!(d["kid"].as_f64().unwrap().is_finite());
}
