use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.06,
        }
    }
}

/// Linear-β noise schedule. Index 0 of `alpha_bar` is the clean endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        } = config;
        if steps == 0 {
            return Err(Error::config("schedule needs at least one step"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for b in &beta {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(Self {
            config,
            beta,
            alpha_bar,
        })
    }

    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::new(ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    /// Number of noise steps `K`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `β_t` for `t` in `1..=K`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// `ᾱ_t` for `t` in `0..=K`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::config(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(ScheduleConfig::default()).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.alpha_bar(1), 0.5);
    }

    #[test]
    fn default_matches_product() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 100);
        let mut prod = 1.0;
        for i in 0..100 {
            prod *= 1.0 - (1e-4 + (0.06 - 1e-4) * i as f64 / 99.0);
        }
        assert!((s.alpha_bar(100) - prod).abs() < 1e-15);
        assert!((s.beta(1) - 1e-4).abs() < 1e-18);
        assert!((s.beta(100) - 0.06).abs() < 1e-15);
        // pinned: ᾱ_100 for the default schedule
        assert!((s.alpha_bar(100) - 0.046_547_03).abs() < 1e-8, "{}", s.alpha_bar(100));
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn alpha_bar_strictly_decreasing(k in 1usize..300, a in 1e-5f64..0.5, span in 0.0f64..0.49) {
            let s = NoiseSchedule::linear(k, a, a + span).unwrap();
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            for t in 1..=k {
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                prop_assert!(s.alpha_bar(t) > 0.0);
            }
        }
    }
}
