use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::{evaluate_pair, EvalConfig, MetricsReport};
use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub stem: String,
    #[serde(rename = "ref")]
    pub reference: PathBuf,
    pub est: PathBuf,
    pub metrics: MetricsReport,
}

/// Per-metric mean and median over the pairs where the metric is defined.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: BTreeMap<String, usize>,
    pub mean: BTreeMap<String, Option<f64>>,
    pub median: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub config: EvalConfig,
    pub pairs: Vec<PairReport>,
    pub unmatched_ref: Vec<String>,
    pub unmatched_est: Vec<String>,
    pub summary: Summary,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn aggregate(reports: &[MetricsReport]) -> Summary {
    let mut s = Summary::default();
    for (i, name) in MetricsReport::NAMES.iter().enumerate() {
        let mut vals: Vec<f64> = reports.iter().filter_map(|r| r.values()[i]).collect();
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        s.count.insert(name.to_string(), vals.len());
        s.mean.insert(name.to_string(), mean);
        s.median.insert(name.to_string(), median(&mut vals));
    }
    s
}

fn wav_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Pair WAV files by stem across two directories and evaluate each pair.
/// Output order follows the sorted stems, independent of thread count.
pub fn evaluate_dirs(ref_dir: impl AsRef<Path>, est_dir: impl AsRef<Path>, cfg: &EvalConfig) -> Result<CorpusReport> {
    let refs = wav_stems(ref_dir.as_ref())?;
    let ests = wav_stems(est_dir.as_ref())?;
    let matched: Vec<(String, PathBuf, PathBuf)> = refs
        .iter()
        .filter_map(|(s, r)| ests.get(s).map(|e| (s.clone(), r.clone(), e.clone())))
        .collect();
    let unmatched_ref = refs.keys().filter(|s| !ests.contains_key(*s)).cloned().collect();
    let unmatched_est = ests.keys().filter(|s| !refs.contains_key(*s)).cloned().collect();
    let results = par::map(&matched, |(stem, r, e)| -> Result<PairReport> {
        let a = read_wav(r)?;
        let b = read_wav(e)?;
        Ok(PairReport {
            stem: stem.clone(),
            reference: r.clone(),
            est: e.clone(),
            metrics: evaluate_pair(&a, &b, cfg)?,
        })
    });
    let pairs: Vec<PairReport> = results.into_iter().collect::<Result<_>>()?;
    let summary = aggregate(&pairs.iter().map(|p| p.metrics).collect::<Vec<_>>());
    Ok(CorpusReport {
        config: *cfg,
        pairs,
        unmatched_ref,
        unmatched_est,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_wav;
    use crate::synth;

    #[test]
    fn aggregate_means_and_medians() {
        let a = MetricsReport {
            sc: Some(1.0),
            lsd: Some(2.0),
            ..Default::default()
        };
        let b = MetricsReport {
            sc: Some(3.0),
            ..Default::default()
        };
        let c = MetricsReport {
            sc: Some(8.0),
            ..Default::default()
        };
        let s = aggregate(&[a, b, c]);
        assert_eq!(s.mean["sc"], Some(4.0));
        assert_eq!(s.median["sc"], Some(3.0));
        assert_eq!(s.mean["lsd"], Some(2.0));
        assert_eq!(s.count["lsd"], 1);
        assert_eq!(s.mean["kid"], None);
    }

    #[test]
    fn pairs_by_stem() {
        let r = tempfile::tempdir().unwrap();
        let e = tempfile::tempdir().unwrap();
        let x = synth::sawtooth(220.0, 0.3, 44_100, 0.3);
        for s in ["a", "b"] {
            write_wav(r.path().join(format!("{s}.wav")), &x).unwrap();
        }
        write_wav(e.path().join("b.wav"), &x).unwrap();
        write_wav(e.path().join("c.wav"), &x).unwrap();
        let rep = evaluate_dirs(r.path(), e.path(), &EvalConfig::default()).unwrap();
        assert_eq!(rep.pairs.len(), 1);
        assert_eq!(rep.pairs[0].stem, "b");
        assert_eq!(rep.unmatched_ref, vec!["a"]);
        assert_eq!(rep.unmatched_est, vec!["c"]);
        assert_eq!(rep.pairs[0].metrics.sc, Some(0.0));
    }
}
