//! Adafactor without a first moment: the second moment of a matrix is kept
//! as per-row and per-column sums (d1 + d2 values) and rebuilt as the rank-1
//! estimate `V[i][j] = R[i] * C[j] / sum(C)`. Vectors keep a full `v`.
//!
//! No relative step size and no update clipping, so `lr` is the plain step.

use super::OptimizerConfig;

#[derive(Clone, Copy, Debug)]
pub struct AdafactorParams {
    pub lr: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub step: u64,
    pub bias_correction: bool,
}

impl AdafactorParams {
    pub fn from_config(cfg: &OptimizerConfig, lr: f64, step: u64) -> Self {
        AdafactorParams {
            lr,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            delta: cfg.adafactor_delta,
            step,
            bias_correction: cfg.bias_correction,
        }
    }

    fn correction(&self) -> f64 {
        if self.bias_correction {
            1.0 - self.beta2.powi(self.step.min(i32::MAX as u64) as i32)
        } else {
            1.0
        }
    }
}

/// Rank-1 second-moment estimate from row and column accumulators, row-major.
pub fn reconstruct(row: &[f64], col: &[f64]) -> Vec<f64> {
    let total: f64 = col.iter().sum();
    let mut out = Vec::with_capacity(row.len() * col.len());
    for r in row {
        for c in col {
            out.push(if total > 0.0 { r * c / total } else { 0.0 });
        }
    }
    out
}

/// Updates the accumulators with `g` (row-major `d1 x d2`) and applies the step.
pub fn factored_update(
    theta: &mut [f64],
    g: &[f64],
    (d1, d2): (usize, usize),
    row: &mut [f64],
    col: &mut [f64],
    p: &AdafactorParams,
) {
    debug_assert_eq!(g.len(), d1 * d2);
    let mut row_sum = vec![0.0; d1];
    let mut col_sum = vec![0.0; d2];
    for i in 0..d1 {
        for j in 0..d2 {
            let s = g[i * d2 + j] * g[i * d2 + j] + p.delta;
            row_sum[i] += s;
            col_sum[j] += s;
        }
    }
    for (r, s) in row.iter_mut().zip(&row_sum) {
        *r = p.beta2 * *r + (1.0 - p.beta2) * s;
    }
    for (c, s) in col.iter_mut().zip(&col_sum) {
        *c = p.beta2 * *c + (1.0 - p.beta2) * s;
    }
    let total: f64 = col.iter().sum();
    if total <= 0.0 {
        return;
    }
    let scale = 1.0 / (total * p.correction());
    for i in 0..d1 {
        for j in 0..d2 {
            let v_hat = row[i] * col[j] * scale;
            let denom = v_hat.sqrt() + p.epsilon;
            if denom > 0.0 {
                theta[i * d2 + j] -= p.lr * g[i * d2 + j] / denom;
            }
        }
    }
}

/// Unfactored second moment for rank-1 tensors (Adam with `beta1 = 0`).
pub fn unfactored_update(theta: &mut [f64], g: &[f64], v: &mut [f64], p: &AdafactorParams) {
    let corr = p.correction();
    for i in 0..theta.len() {
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * (g[i] * g[i] + p.delta);
        let denom = (v[i] / corr).sqrt() + p.epsilon;
        if denom > 0.0 {
            theta[i] -= p.lr * g[i] / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact_params() -> AdafactorParams {
        AdafactorParams {
            lr: 0.1,
            beta2: 0.0,
            epsilon: 0.0,
            delta: 0.0,
            step: 1,
            bias_correction: true,
        }
    }

    #[test]
    fn outer_product_factorization_is_exact() {
        let g = [1.0, 2.0, 3.0, 6.0];
        let (mut row, mut col) = (vec![0.0; 2], vec![0.0; 2]);
        let mut theta = vec![0.0; 4];
        factored_update(&mut theta, &g, (2, 2), &mut row, &mut col, &exact_params());
        assert_eq!(row, vec![5.0, 45.0]);
        assert_eq!(col, vec![10.0, 40.0]);
        let v = reconstruct(&row, &col);
        for (a, b) in v.iter().zip([1.0, 4.0, 9.0, 36.0]) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
        for (x, gi) in theta.iter().zip(&g) {
            assert!((x + 0.1 * gi.signum()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_with_zero_delta_does_not_divide_by_zero() {
        let (mut row, mut col) = (vec![0.0; 3], vec![0.0; 2]);
        let mut theta = vec![1.0; 6];
        factored_update(&mut theta, &[0.0; 6], (3, 2), &mut row, &mut col, &exact_params());
        assert!(theta.iter().all(|x| *x == 1.0));
    }

    #[test]
    fn default_delta_keeps_column_total_positive() {
        let p = AdafactorParams {
            delta: crate::optim::DEFAULT_ADAFACTOR_DELTA,
            epsilon: crate::optim::DEFAULT_EPSILON,
            beta2: 0.95,
            ..exact_params()
        };
        let (mut row, mut col) = (vec![0.0; 2], vec![0.0; 2]);
        let mut theta = vec![1.0; 4];
        factored_update(&mut theta, &[0.0; 4], (2, 2), &mut row, &mut col, &p);
        assert!(col.iter().sum::<f64>() > 0.0);
        assert!(theta.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn vectors_use_full_second_moment() {
        let mut theta = vec![0.0, 0.0];
        let mut v = vec![0.0; 2];
        unfactored_update(&mut theta, &[2.0, -0.5], &mut v, &exact_params());
        assert_eq!(v, vec![4.0, 0.25]);
        assert!((theta[0] + 0.1).abs() < 1e-15 && (theta[1] - 0.1).abs() < 1e-15);
    }

    proptest! {
        // |g| = a_i * b_j makes g^2 a nonnegative rank-1 matrix
        #[test]
        fn rank1_squares_reconstruct_exactly(
            a in prop::collection::vec(0.01f64..10.0, 1..9),
            b in prop::collection::vec(0.01f64..10.0, 1..9),
            signs in prop::collection::vec(any::<bool>(), 81),
        ) {
            let (d1, d2) = (a.len(), b.len());
            let g: Vec<f64> = (0..d1 * d2).map(|k| {
                let s = if signs[k] { 1.0 } else { -1.0 };
                s * a[k / d2] * b[k % d2]
            }).collect();
            let (mut row, mut col) = (vec![0.0; d1], vec![0.0; d2]);
            let mut theta = vec![0.0; d1 * d2];
            factored_update(&mut theta, &g, (d1, d2), &mut row, &mut col, &exact_params());
            let v = reconstruct(&row, &col);
            for (vh, gi) in v.iter().zip(&g) {
                prop_assert!(((vh - gi * gi) / (gi * gi)).abs() <= 1e-12);
            }
            for (x, gi) in theta.iter().zip(&g) {
                prop_assert!((x + 0.1 * gi.signum()).abs() <= 1e-12);
            }
        }
    }
}
