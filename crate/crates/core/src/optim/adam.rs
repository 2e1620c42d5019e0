//! Adam with optional bias correction. Weight decay is applied by the caller
//! (decoupled, AdamW style).

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// 1-based step index used for bias correction.
    pub step: u64,
    pub bias_correction: bool,
}

/// One elementwise Adam update of `theta`, `m` and `v`.
pub fn adam_update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], p: &AdamParams) {
    let (c1, c2) = if p.bias_correction {
        let t = p.step.min(i32::MAX as u64) as i32;
        (1.0 - p.beta1.powi(t), 1.0 - p.beta2.powi(t))
    } else {
        (1.0, 1.0)
    };
    for i in 0..theta.len() {
        let gi = g[i];
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * gi;
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * gi * gi;
        let denom = (v[i] / c2).sqrt() + p.epsilon;
        // 0/0 only when the whole history is zero; no update then
        if denom > 0.0 {
            theta[i] -= p.lr * (m[i] / c1) / denom;
        }
    }
}
