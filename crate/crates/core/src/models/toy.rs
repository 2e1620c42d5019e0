//! The noisy quadratic toy: loss `x + 10 y^2`, whose exact gradient
//! `(1, 20 y)` is multiplied by noise drawn from `N(1, sigma^2)`.
//!
//! A signal-to-noise ratio `snr` corresponds to `sigma = 1 / snr`.

use serde::{Deserialize, Serialize};

use super::prng::Prng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One multiplier per gradient evaluation.
    #[default]
    Scalar,
    /// Independent multipliers for the x and y components.
    PerComponent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyProblem {
    pub x: f64,
    pub y: f64,
    pub noise_sigma: f64,
    pub noise_mode: NoiseMode,
}

impl ToyProblem {
    pub fn new(x: f64, y: f64, noise_sigma: f64) -> Self {
        ToyProblem {
            x,
            y,
            noise_sigma,
            noise_mode: NoiseMode::Scalar,
        }
    }

    pub fn sigma_for_snr(snr: f64) -> f64 {
        1.0 / snr
    }

    pub fn loss_at(x: f64, y: f64) -> f64 {
        x + 10.0 * y * y
    }

    pub fn loss(&self) -> f64 {
        Self::loss_at(self.x, self.y)
    }

    pub fn exact_grad(&self) -> [f64; 2] {
        [1.0, 20.0 * self.y]
    }

    pub fn noisy_grad(&self, rng: &mut Prng) -> [f64; 2] {
        let [gx, gy] = self.exact_grad();
        if self.noise_sigma == 0.0 {
            return [gx, gy];
        }
        match self.noise_mode {
            NoiseMode::Scalar => {
                let n = rng.normal(1.0, self.noise_sigma);
                [gx * n, gy * n]
            }
            NoiseMode::PerComponent => {
                let nx = rng.normal(1.0, self.noise_sigma);
                let ny = rng.normal(1.0, self.noise_sigma);
                [gx * nx, gy * ny]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::prng::Stream;

    #[test]
    fn noiseless_is_exact() {
        let p = ToyProblem::new(0.3, -0.7, 0.0);
        let mut rng = Prng::new(0, Stream::Noise);
        assert_eq!(p.noisy_grad(&mut rng), [1.0, -14.0]);
        assert!((p.loss() - (0.3 + 4.9)).abs() < 1e-15);
    }

    #[test]
    fn flat_direction_stays_flat() {
        let p = ToyProblem::new(0.0, 0.0, 3.0);
        let mut rng = Prng::new(1, Stream::Noise);
        for _ in 0..100 {
            assert_eq!(p.noisy_grad(&mut rng)[1], 0.0);
        }
    }

    #[test]
    fn monte_carlo_mean_is_unbiased() {
        for mode in [NoiseMode::Scalar, NoiseMode::PerComponent] {
            let sigma = 2.0;
            let p = ToyProblem { noise_mode: mode, ..ToyProblem::new(0.0, 1.0, sigma) };
            let mut rng = Prng::new(5, Stream::Noise);
            let n = 100_000;
            let mut sum = [0.0; 2];
            for _ in 0..n {
                let g = p.noisy_grad(&mut rng);
                sum[0] += g[0];
                sum[1] += g[1];
            }
            let tol = 3.0 * sigma / (n as f64).sqrt();
            assert!((sum[0] / n as f64 - 1.0).abs() < tol);
            assert!((sum[1] / n as f64 - 20.0).abs() < 20.0 * tol);
        }
    }

    #[test]
    fn snr_mapping() {
        assert!((ToyProblem::sigma_for_snr(5.0) - 0.2).abs() < 1e-15);
        assert!((ToyProblem::sigma_for_snr(0.3) - 3.3333333333).abs() < 1e-9);
    }
}
