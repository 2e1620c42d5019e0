//! Plain and heavy-ball SGD.

/// `theta -= lr * g`, or with a buffer: `b = mu * b + g; theta -= lr * b`.
pub fn sgd_update(theta: &mut [f64], g: &[f64], buf: Option<&mut Vec<f64>>, lr: f64, momentum: f64) {
    match buf {
        Some(b) => {
            for ((x, gi), bi) in theta.iter_mut().zip(g).zip(b.iter_mut()) {
                *bi = momentum * *bi + gi;
                *x -= lr * *bi;
            }
        }
        None => {
            for (x, gi) in theta.iter_mut().zip(g) {
                *x -= lr * gi;
            }
        }
    }
}
