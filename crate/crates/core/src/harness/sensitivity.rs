//! One-hyperparameter sensitivity curves around a base configuration.
//!
//! Decay-rate targets are scaled in half-life space: multiplier `m` turns
//! half-life `t` into `m * t` before converting back to a decay rate, so
//! every scaled value is a valid rate or the point is reported absent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halflife::{beta_to_halflife, halflife_to_beta, DecayRate};

use super::config::RunConfig;
use super::sweep::{sweep, RunCache, SweepTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Lr,
    T1,
    T2,
    Beta1,
    Beta2,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Lr => "lr",
            Target::T1 => "t1",
            Target::T2 => "t2",
            Target::Beta1 => "beta1",
            Target::Beta2 => "beta2",
        })
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(Target::Lr),
            "t1" => Ok(Target::T1),
            "t2" => Ok(Target::T2),
            "beta1" => Ok(Target::Beta1),
            "beta2" => Ok(Target::Beta2),
            other => Err(Error::config(
                "target",
                format!("unknown target `{other}` (expected lr, t1, t2, beta1 or beta2)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySpec {
    pub base: RunConfig,
    pub target: Target,
    /// Must include 1.
    #[serde(default = "default_multipliers")]
    pub multipliers: Vec<f64>,
}

/// Powers of two from 1/16 to 16.
pub fn default_multipliers() -> Vec<f64> {
    (-4..=4).map(|k| 2f64.powi(k)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityPoint {
    pub multiplier: f64,
    pub config_id: Option<String>,
    /// `None` when the scaled value is not a valid hyperparameter or the run failed.
    pub loss: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SensitivityCurve {
    pub target: Target,
    pub points: Vec<SensitivityPoint>,
    /// Loss of the untrained model, used as the ceiling in `score`.
    pub ceiling: f64,
    pub score: f64,
    pub table: SweepTable,
}

/// `max - min` of the present losses. Losses are capped at `ceiling` (a
/// diverged or non-finite run counts as no better than not training).
pub fn robustness_score(losses: &[f64], ceiling: f64) -> f64 {
    let capped: Vec<f64> = losses
        .iter()
        .map(|&l| if l.is_finite() { l.min(ceiling) } else { ceiling })
        .collect();
    if capped.is_empty() {
        return 0.0;
    }
    let max = capped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = capped.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// The base config with `target` scaled by `m`.
pub fn scaled_config(base: &RunConfig, target: Target, m: f64) -> Result<RunConfig> {
    let mut c = base.clone();
    let tps = base.tokens_per_step()?;
    let resolved = base.resolve_optimizer()?;
    let scale_decay = |beta: f64, key: &str| -> Result<f64> {
        let half = beta_to_halflife(
            DecayRate::new(beta).map_err(|e| Error::config(key, e.to_string()))?,
            tps,
        );
        let scaled = half.scaled(m).map_err(|e| Error::config(key, e.to_string()))?;
        Ok(halflife_to_beta(scaled, tps)
            .map_err(|e| Error::config(key, e.to_string()))?
            .get())
    };
    match target {
        Target::Lr => c.optimizer.lr *= m,
        Target::T1 | Target::Beta1 => {
            let b = scale_decay(resolved.beta1, "beta1")?;
            c.optimizer.t1_tokens = None;
            c.optimizer.beta1 = Some(b);
        }
        Target::T2 | Target::Beta2 => {
            let b = scale_decay(resolved.beta2, "beta2")?;
            c.optimizer.t2_tokens = None;
            c.optimizer.beta2 = Some(b);
        }
    }
    if m == 1.0 {
        return Ok(base.clone());
    }
    c.validate()?;
    Ok(c)
}

pub fn sensitivity(spec: &SensitivitySpec, jobs: usize, cache: &RunCache) -> Result<SensitivityCurve> {
    let ms = &spec.multipliers;
    if !ms.contains(&1.0) {
        return Err(Error::config("multipliers", "must include 1"));
    }
    if let Some(bad) = ms.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(Error::config("multipliers", format!("{bad} is not a positive multiplier")));
    }
    spec.base.validate()?;

    let planned: Vec<(f64, std::result::Result<RunConfig, String>)> = ms
        .iter()
        .map(|&m| (m, scaled_config(&spec.base, spec.target, m).map_err(|e| e.to_string())))
        .collect();
    let grid: Vec<RunConfig> = planned.iter().filter_map(|(_, c)| c.as_ref().ok().cloned()).collect();
    let table = sweep(&grid, jobs, cache)?;
    let base_run = cache.run(&spec.base)?;

    let points: Vec<SensitivityPoint> = planned
        .into_iter()
        .map(|(multiplier, cfg)| match cfg {
            Err(reason) => SensitivityPoint {
                multiplier,
                config_id: None,
                loss: None,
                reason: Some(reason),
            },
            Ok(cfg) => {
                let id = cfg.config_id();
                let row = table.rows.iter().find(|r| r.config_id == id).expect("swept config");
                SensitivityPoint {
                    multiplier,
                    config_id: Some(id),
                    loss: row.final_eval_loss(),
                    reason: row.outcome.as_ref().err().cloned(),
                }
            }
        })
        .collect();
    let losses: Vec<f64> = points.iter().filter_map(|p| p.loss).collect();
    let ceiling = base_run.initial_eval_loss;
    Ok(SensitivityCurve {
        target: spec.target,
        score: robustness_score(&losses, ceiling),
        points,
        ceiling,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::OptimizerSpec;
    use crate::optim::Variant;
    use crate::units::{TokenAmount, TokenCount};
    use proptest::prelude::*;

    fn small() -> RunConfig {
        let mut o = OptimizerSpec::new(Variant::Adam, 0.01);
        o.t2_tokens = Some(TokenAmount(2000.0));
        let mut c = RunConfig::new(o, 4, 16, 64 * 30);
        c.task.n_states = 12;
        c.model.dim = 8;
        c.model.hidden = 16;
        c.eval_tokens = TokenCount(2048);
        c
    }

    #[test]
    fn unit_multiplier_alone_scores_zero() {
        let spec = SensitivitySpec {
            base: small(),
            target: Target::Lr,
            multipliers: vec![1.0],
        };
        let curve = sensitivity(&spec, 1, &RunCache::new()).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.score, 0.0);
    }

    #[test]
    fn lr_curve_has_positive_score() {
        let spec = SensitivitySpec {
            base: small(),
            target: Target::Lr,
            multipliers: vec![0.25, 1.0, 4.0],
        };
        let curve = sensitivity(&spec, 2, &RunCache::new()).unwrap();
        assert!(curve.points.iter().all(|p| p.loss.is_some()));
        assert!(curve.score > 0.0);
    }

    #[test]
    fn multipliers_must_include_one() {
        let spec = SensitivitySpec {
            base: small(),
            target: Target::T2,
            multipliers: vec![0.5, 2.0],
        };
        assert!(sensitivity(&spec, 1, &RunCache::new()).is_err());
    }

    #[test]
    fn halflife_scaling_is_exact() {
        let base = small();
        let tps = base.tokens_per_step().unwrap();
        let c = scaled_config(&base, Target::T2, 4.0).unwrap();
        let b2 = DecayRate::new(c.optimizer.beta2.unwrap()).unwrap();
        assert!((beta_to_halflife(b2, tps).tokens() - 8000.0).abs() < 1e-6);
        // beta1 = 0 has no half-life to scale
        let mut b = base.clone();
        b.optimizer.beta1 = Some(0.0);
        assert!(scaled_config(&b, Target::Beta1, 2.0).is_err());
    }

    #[test]
    fn score_caps_diverged_runs() {
        assert_eq!(robustness_score(&[2.0, f64::NAN], 3.0), 1.0);
        assert_eq!(robustness_score(&[2.0, 50.0], 3.0), 1.0);
        assert_eq!(robustness_score(&[], 3.0), 0.0);
    }

    proptest! {
        #[test]
        fn scaled_decays_stay_valid(beta in 0.01f64..0.999_999, k in -20i32..20) {
            let mut base = small();
            base.optimizer.t2_tokens = None;
            base.optimizer.beta2 = Some(beta);
            let m = 2f64.powi(k);
            if let Ok(c) = scaled_config(&base, Target::Beta2, m) {
                let b = c.optimizer.beta2.unwrap();
                prop_assert!(b > 0.0 && b < 1.0);
            }
        }

        #[test]
        fn score_is_nonnegative_and_zero_iff_flat(losses in prop::collection::vec(0.0f64..5.0, 1..10)) {
            let s = robustness_score(&losses, 10.0);
            prop_assert!(s >= 0.0);
            let flat = losses.iter().all(|l| *l == losses[0]);
            prop_assert_eq!(s == 0.0, flat);
        }
    }
}
