//! SGD with and without momentum on the noisy quadratic `x + 10 y^2`.
//!
//! Seed `i` draws its noise from child `i` of one noise stream, so every
//! (lr, momentum) cell sees the same noise sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{NoiseMode, Prng, Stream, ToyProblem};
use crate::optim::sgd::sgd_update;

pub const DEFAULT_START: (f64, f64) = (0.0, 1.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub sigma: f64,
    pub n_steps: u64,
    pub lrs: Vec<f64>,
    pub momenta: Vec<f64>,
    pub n_seeds: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: (f64, f64),
    #[serde(default)]
    pub noise_mode: NoiseMode,
}

fn default_start() -> (f64, f64) {
    DEFAULT_START
}

impl ToySpec {
    pub fn new(sigma: f64, n_steps: u64, lrs: Vec<f64>, momenta: Vec<f64>, n_seeds: u64) -> Self {
        ToySpec {
            sigma,
            n_steps,
            lrs,
            momenta,
            n_seeds,
            seed: 0,
            start: DEFAULT_START,
            noise_mode: NoiseMode::Scalar,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::config("sigma", "must be finite and >= 0"));
        }
        if self.n_seeds < 8 {
            return Err(Error::config("n_seeds", "need at least 8 seeds for quartiles"));
        }
        if self.lrs.is_empty() || self.lrs.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::config("lrs", "need at least one finite lr >= 0"));
        }
        if self.momenta.is_empty() || self.momenta.iter().any(|m| !(0.0..1.0).contains(m)) {
            return Err(Error::config("momenta", "need at least one momentum in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quartiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl Quartiles {
    /// Linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Quartiles {
            q25: q(0.25),
            q50: q(0.5),
            q75: q(0.75),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyCell {
    pub lr: f64,
    pub momentum: f64,
    pub final_loss: Quartiles,
    pub sign_flips: Quartiles,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyBest {
    pub momentum: f64,
    pub lr: f64,
    pub median_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyResult {
    pub cells: Vec<ToyCell>,
    /// Lowest median final loss per momentum value.
    pub best: Vec<ToyBest>,
}

impl ToyResult {
    pub fn best_for(&self, momentum: f64) -> Option<&ToyBest> {
        self.best.iter().find(|b| b.momentum == momentum)
    }
}

/// Final loss and number of sign changes of `y` for one trajectory.
pub fn run_trajectory(
    start: (f64, f64),
    sigma: f64,
    mode: NoiseMode,
    lr: f64,
    momentum: f64,
    n_steps: u64,
    rng: &mut Prng,
) -> (f64, u64) {
    let mut theta = vec![start.0, start.1];
    let mut buf = (momentum > 0.0).then(|| vec![0.0; 2]);
    let mut flips = 0;
    for _ in 0..n_steps {
        let p = ToyProblem {
            x: theta[0],
            y: theta[1],
            noise_sigma: sigma,
            noise_mode: mode,
        };
        let g = p.noisy_grad(rng);
        let before = theta[1];
        sgd_update(&mut theta, &g, buf.as_mut(), lr, momentum);
        if before != 0.0 && theta[1] != 0.0 && before.signum() != theta[1].signum() {
            flips += 1;
        }
    }
    (ToyProblem::loss_at(theta[0], theta[1]), flips)
}

pub fn toy_experiment(spec: &ToySpec) -> Result<ToyResult> {
    spec.validate()?;
    let noise = Prng::new(spec.seed, Stream::Noise);
    let mut cells = Vec::new();
    for &momentum in &spec.momenta {
        for &lr in &spec.lrs {
            let (losses, flips): (Vec<f64>, Vec<f64>) = (0..spec.n_seeds)
                .map(|i| {
                    let mut rng = noise.fork(i);
                    let (l, f) = run_trajectory(spec.start, spec.sigma, spec.noise_mode, lr, momentum, spec.n_steps, &mut rng);
                    (l, f as f64)
                })
                .unzip();
            cells.push(ToyCell {
                lr,
                momentum,
                final_loss: Quartiles::of(&losses),
                sign_flips: Quartiles::of(&flips),
            });
        }
    }
    let best = spec
        .momenta
        .iter()
        .map(|&momentum| {
            let cell = cells
                .iter()
                .filter(|c| c.momentum == momentum)
                .min_by(|a, b| rank(a.final_loss.q50).total_cmp(&rank(b.final_loss.q50)))
                .expect("at least one lr");
            ToyBest {
                momentum,
                lr: cell.lr,
                median_loss: cell.final_loss.q50,
            }
        })
        .collect();
    Ok(ToyResult { cells, best })
}

fn rank(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

/// `|a - b| / max(|a|, |b|)`; zero when both are zero.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_loss_decreases_with_steps() {
        let mut last = f64::INFINITY;
        for steps in [10, 20, 40, 80, 160] {
            let (l, _) = run_trajectory(DEFAULT_START, 0.0, NoiseMode::Scalar, 0.01, 0.0, steps, &mut Prng::new(0, Stream::Noise));
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn large_lr_oscillates_in_y() {
        // y <- y (1 - 20 lr): lr = 0.09 flips sign every step
        let (_, flips) = run_trajectory(DEFAULT_START, 0.0, NoiseMode::Scalar, 0.09, 0.0, 10, &mut Prng::new(0, Stream::Noise));
        assert_eq!(flips, 10);
    }

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((q.q25, q.q50, q.q75), (2.0, 3.0, 4.0));
        let q = Quartiles::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((q.q25, q.q50, q.q75), (1.75, 2.5, 3.25));
    }

    #[test]
    fn needs_eight_seeds() {
        assert!(toy_experiment(&ToySpec::new(0.2, 10, vec![0.01], vec![0.0], 7)).is_err());
    }

    #[test]
    fn deterministic_and_best_per_momentum() {
        let spec = ToySpec::new(0.2, 10, vec![0.005, 0.01, 0.02], vec![0.0, 0.9], 16);
        let a = toy_experiment(&spec).unwrap();
        assert_eq!(a, toy_experiment(&spec).unwrap());
        assert_eq!(a.cells.len(), 6);
        for b in &a.best {
            let min = a.cells.iter().filter(|c| c.momentum == b.momentum).map(|c| c.final_loss.q50).fold(f64::INFINITY, f64::min);
            assert_eq!(b.median_loss, min);
        }
    }

    #[test]
    fn gap_definition() {
        assert_eq!(relative_gap(-2.0, -1.0), 0.5);
        assert_eq!(relative_gap(0.0, 0.0), 0.0);
    }
}
