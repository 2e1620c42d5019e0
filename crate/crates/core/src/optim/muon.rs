//! Muon: momentum on hidden matrices, orthogonalized by Newton-Schulz before
//! the step. Non-hidden tensors are handled by the auxiliary optimizer.

use super::{newton_schulz, MomentumStyle, OptimizerConfig};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `sqrt(max(1, rows / cols))`.
pub fn shape_scale(rows: usize, cols: usize) -> f64 {
    (rows as f64 / cols as f64).max(1.0).sqrt()
}

pub fn muon_update(
    theta: &mut Tensor,
    g: &Tensor,
    buf: &mut [f64],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    let Shape::Matrix(rows, cols) = theta.shape() else {
        return Err(Error::config("role", "muon only updates matrices"));
    };
    let mu = cfg.momentum;
    let gain = match cfg.muon_momentum {
        MomentumStyle::Accumulate => 1.0,
        MomentumStyle::Ema => 1.0 - mu,
    };
    for (b, gi) in buf.iter_mut().zip(g.data()) {
        *b = mu * *b + gain * gi;
    }
    if cfg.weight_decay > 0.0 {
        let keep = 1.0 - lr * cfg.weight_decay;
        theta.data_mut().iter_mut().for_each(|x| *x *= keep);
    }
    if buf.iter().all(|b| *b == 0.0) {
        return Ok(());
    }
    let ortho = newton_schulz(&Tensor::matrix(rows, cols, buf.to_vec())?, cfg.ns_iters)?;
    let step = lr * shape_scale(rows, cols);
    for (x, o) in theta.data_mut().iter_mut().zip(ortho.data()) {
        *x -= step * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::newton_schulz::{ns_scalar, tests::gaussian};
    use crate::optim::{Optimizer, OptimizerConfig};
    use crate::tensor::{GradSet, ParamSet, Role};

    #[test]
    fn orthogonal_gradient_gives_scaled_orthogonal_step() {
        // a permutation-like orthogonal matrix with equal singular values
        let n = 4;
        let g = Tensor::matrix(
            n,
            n,
            vec![
                0.0, 1.0, 0.0, 0.0, //
                -1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        let cfg = OptimizerConfig::muon(0.1).with_momentum(0.0);
        let mut theta = Tensor::zeros(Shape::Matrix(n, n));
        let mut buf = vec![0.0; n * n];
        muon_update(&mut theta, &g, &mut buf, 0.1, &cfg).unwrap();
        let c = (0..5).fold(0.5, |x, _| ns_scalar(x));
        for (x, gi) in theta.data().iter().zip(g.data()) {
            assert!((x + 0.1 * c * gi).abs() < 1e-6);
        }
    }

    #[test]
    fn tall_matrices_step_larger() {
        assert_eq!(shape_scale(128, 32), 2.0);
        assert_eq!(shape_scale(32, 128), 1.0);
        assert_eq!(shape_scale(5, 5), 1.0);
    }

    #[test]
    fn routes_hidden_to_muon_and_rest_to_aux() {
        let p = ParamSet::new()
            .with("w", Role::Hidden, Tensor::zeros(Shape::Matrix(8, 4)))
            .unwrap()
            .with("gain", Role::Other, Tensor::vector(vec![1.0; 4]))
            .unwrap();
        let mut params = p.clone();
        let gw = gaussian(8, 4, 1);
        let grads = GradSet::from_parts(vec![
            ("w".into(), gw.clone()),
            ("gain".into(), Tensor::vector(vec![1.0, -1.0, 2.0, 0.5])),
        ]);
        let cfg = OptimizerConfig::muon(0.02).with_momentum(0.0);
        let mut opt = Optimizer::new(cfg, &p).unwrap();
        opt.step(&mut params, &grads).unwrap();

        let expected = newton_schulz(&gw, 5).unwrap();
        for (x, o) in params.get("w").unwrap().data().iter().zip(expected.data()) {
            assert!((x + 0.02 * 2f64.sqrt() * o).abs() < 1e-12);
        }
        // aux Adam, first bias-corrected step: sign descent (eps is tiny)
        for (x, g) in params.get("gain").unwrap().data().iter().zip([1.0, -1.0, 2.0, 0.5]) {
            assert!((x - (1.0 - 0.02 * f64::signum(g))).abs() < 1e-8);
        }
        assert_eq!(opt.state().aux().unwrap().step_count(), 1);
    }

    #[test]
    fn ema_style_buffer() {
        let mut cfg = OptimizerConfig::muon(0.1).with_momentum(0.5);
        cfg.muon_momentum = MomentumStyle::Ema;
        let g = gaussian(3, 3, 2);
        let mut theta = Tensor::zeros(Shape::Matrix(3, 3));
        let mut buf = vec![0.0; 9];
        muon_update(&mut theta, &g, &mut buf, 0.1, &cfg).unwrap();
        for (b, gi) in buf.iter().zip(g.data()) {
            assert!((b - 0.5 * gi).abs() < 1e-15);
        }
    }
}
