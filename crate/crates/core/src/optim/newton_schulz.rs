//! Quintic Newton-Schulz iteration that pushes the singular values of a
//! matrix towards one (approximate orthogonalization).
//!
//! With these coefficients the iteration does not converge to exactly one:
//! each singular value follows `x -> a x + b x^3 + c x^5` and settles into a
//! band of roughly [0.7, 1.2] once it is no longer tiny.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// (a, b, c) from the Muon reference implementation.
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Scalar map applied to every singular value by one iteration.
pub fn ns_scalar(x: f64) -> f64 {
    let (a, b, c) = NS_COEFFS;
    let x2 = x * x;
    x * (a + x2 * (b + c * x2))
}

pub fn newton_schulz(m: &Tensor, iters: usize) -> Result<Tensor> {
    let Shape::Matrix(rows, cols) = m.shape() else {
        return Err(Error::Structure(format!(
            "newton-schulz needs a matrix, got shape {}",
            m.shape()
        )));
    };
    let norm = m.frobenius_norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroMatrix);
    }
    let (a, b, c) = NS_COEFFS;
    let tall = rows > cols;
    let mut x: Array2<f64> = m.view2().mapv(|v| v / norm);
    if tall {
        x = x.t().to_owned();
    }
    // x is wide or square here, so the Gram matrix x x^T is the small one
    for _ in 0..iters {
        let gram = x.dot(&x.t());
        let poly = &gram * b + gram.dot(&gram) * c;
        x = &x * a + poly.dot(&x);
    }
    if tall {
        x = x.t().to_owned();
    }
    let x = x.as_standard_layout().into_owned();
    Tensor::matrix(rows, cols, x.into_raw_vec_and_offset().0)
}
