//! Transformer parameter counting and the minimum training-memory floor.
//!
//! The floor assumes gradient checkpointing after every block (one
//! `model_dim`-wide activation per layer per token persists) and a backward
//! pass fused with the optimizer step, so no full gradient is materialized
//! unless gradients are accumulated across micro-batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{state_elements_for, OptimizerConfig, Variant};
use crate::tensor::{Role, Shape};

/// Bytes per gigabyte in every report.
pub const GB: f64 = 1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub vocab_size: u64,
    pub model_dim: u64,
    pub hidden_dim: u64,
    pub head_dim: u64,
    pub n_layers: u64,
    pub seq_len: u64,
    #[serde(default)]
    pub tied_embeddings: bool,
    #[serde(default)]
    pub param_count_override: Option<u64>,
}

impl ModelDims {
    pub fn new(
        vocab_size: u64,
        model_dim: u64,
        hidden_dim: u64,
        head_dim: u64,
        n_layers: u64,
        seq_len: u64,
    ) -> Self {
        ModelDims {
            vocab_size,
            model_dim,
            hidden_dim,
            head_dim,
            n_layers,
            seq_len,
            tied_embeddings: false,
            param_count_override: None,
        }
    }

    /// The 30M-active model used for the dense grid searches.
    pub fn small_30m() -> Self {
        Self::new(50257, 384, 1536, 128, 6, 512)
    }

    /// 19M non-embedding model with a T5 vocabulary.
    pub fn t5_19m() -> Self {
        Self::new(32101, 512, 2048, 128, 6, 512)
    }

    pub fn gpt2_124m() -> Self {
        Self::new(50257, 768, 3072, 128, 12, 1024)
    }

    pub fn gpt3_1_3b() -> Self {
        Self::new(50257, 2048, 8192, 128, 24, 2048)
    }

    /// GPT-3 13B layer shape (40 layers of width 5120); parameter totals are
    /// normally pinned with `param_count_override`.
    pub fn gpt3_13b() -> Self {
        Self::new(50257, 5120, 20480, 128, 40, 2048)
    }

    pub fn with_override(mut self, params: u64) -> Self {
        self.param_count_override = Some(params);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("model_dim", self.model_dim),
            ("hidden_dim", self.hidden_dim),
            ("head_dim", self.head_dim),
            ("seq_len", self.seq_len),
        ];
        for (key, v) in fields {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !self.model_dim.is_multiple_of(self.head_dim) {
            return Err(Error::config("head_dim", "must divide model_dim"));
        }
        if self.param_count_override == Some(0) {
            return Err(Error::config("param_count_override", "must be positive"));
        }
        Ok(())
    }

    /// Every trainable tensor of the transformer, with its Muon routing tag.
    /// Attention and MLP projections are hidden matrices; embeddings, the
    /// output head and RMSNorm gains are not.
    pub fn tensor_shapes(&self) -> Vec<(String, Shape, Role)> {
        let (v, d, h) = (
            self.vocab_size as usize,
            self.model_dim as usize,
            self.hidden_dim as usize,
        );
        let mut out = vec![("embed".to_string(), Shape::Matrix(v, d), Role::Other)];
        for l in 0..self.n_layers {
            for proj in ["q", "k", "v", "o"] {
                out.push((format!("layer{l}.attn.{proj}"), Shape::Matrix(d, d), Role::Hidden));
            }
            out.push((format!("layer{l}.mlp.w_in"), Shape::Matrix(d, h), Role::Hidden));
            out.push((format!("layer{l}.mlp.w_out"), Shape::Matrix(h, d), Role::Hidden));
            out.push((format!("layer{l}.norm1"), Shape::Vector(d), Role::Other));
            out.push((format!("layer{l}.norm2"), Shape::Vector(d), Role::Other));
        }
        out.push(("final_norm".to_string(), Shape::Vector(d), Role::Other));
        if !self.tied_embeddings {
            out.push(("head".to_string(), Shape::Matrix(d, v), Role::Other));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub embedding: u64,
    pub non_embedding: u64,
    pub active: u64,
    pub total_trainable: u64,
}

/// Parameter counts; biases are excluded (RMSNorm has only a gain).
///
/// `active` counts one vocabulary-sized matrix: with untied weights the
/// input table is a lookup that adds trainable parameters but no compute.
pub fn count_params(dims: &ModelDims) -> ParamCounts {
    let (v, d, h, l) = (dims.vocab_size, dims.model_dim, dims.hidden_dim, dims.n_layers);
    let table = v * d;
    let embedding = if dims.tied_embeddings { table } else { 2 * table };
    let non_embedding = l * (4 * d * d + 2 * d * h + 2 * d) + d;
    ParamCounts {
        embedding,
        non_embedding,
        active: non_embedding + table,
        total_trainable: embedding + non_embedding,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MemoryEstimate {
    pub params_bytes: u64,
    pub optimizer_state_bytes: u64,
    pub activation_bytes: u64,
    pub grad_buffer_bytes: u64,
    pub total_bytes: u64,
}

impl MemoryEstimate {
    pub fn components(&self) -> [(&'static str, u64); 5] {
        [
            ("params", self.params_bytes),
            ("optimizer_state", self.optimizer_state_bytes),
            ("activations", self.activation_bytes),
            ("grad_buffer", self.grad_buffer_bytes),
            ("total", self.total_bytes),
        ]
    }
}

/// Number of optimizer state values for `dims` under `optimizer`.
///
/// With a parameter-count override only the shape-free rules (SGD, Adam)
/// can be evaluated.
pub fn optimizer_state_elements(dims: &ModelDims, optimizer: &OptimizerConfig) -> Result<u64> {
    match dims.param_count_override {
        Some(n) => match optimizer.variant {
            Variant::Sgd if optimizer.momentum > 0.0 => Ok(n),
            Variant::Sgd => Ok(0),
            Variant::Adam => Ok(2 * n),
            Variant::Adafactor | Variant::Muon => Err(Error::config(
                "param_count_override",
                format!(
                    "{} state depends on tensor shapes; give model dims instead of a parameter count",
                    optimizer.variant
                ),
            )),
        },
        None => {
            let shapes: Vec<(Shape, Role)> = dims
                .tensor_shapes()
                .into_iter()
                .map(|(_, s, r)| (s, r))
                .collect();
            state_elements_for(optimizer, &shapes)
        }
    }
}

pub fn estimate_memory(
    dims: &ModelDims,
    optimizer: &OptimizerConfig,
    batch_tokens: u64,
    bytes_per_value: u64,
    use_accumulation: bool,
) -> Result<MemoryEstimate> {
    dims.validate()?;
    if !matches!(bytes_per_value, 2 | 4 | 8) {
        return Err(Error::config("bytes", "bytes per value must be 2, 4 or 8"));
    }
    if batch_tokens == 0 {
        return Err(Error::config("batch_tokens", "must be positive"));
    }
    let params = dims
        .param_count_override
        .unwrap_or_else(|| count_params(dims).total_trainable);
    let state = optimizer_state_elements(dims, optimizer)?;
    let params_bytes = params * bytes_per_value;
    let optimizer_state_bytes = state * bytes_per_value;
    let activation_bytes = batch_tokens * dims.n_layers * dims.model_dim * bytes_per_value;
    let grad_buffer_bytes = if use_accumulation { params_bytes } else { 0 };
    Ok(MemoryEstimate {
        params_bytes,
        optimizer_state_bytes,
        activation_bytes,
        grad_buffer_bytes,
        total_bytes: params_bytes + optimizer_state_bytes + activation_bytes + grad_buffer_bytes,
    })
}

/// Inclusive: an estimate exactly equal to the device size fits.
pub fn fits(estimate: &MemoryEstimate, device_bytes: u64) -> bool {
    estimate.total_bytes <= device_bytes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn within(actual: u64, expected: f64, tol: f64) -> bool {
        ((actual as f64 - expected) / expected).abs() <= tol
    }

    #[test]
    fn reference_model_counts() {
        // (dims, embedding, non-embedding, active) reference counts
        let rows = [
            (ModelDims::small_30m(), 2.0 * 19e6, 11e6, 30e6),
            (ModelDims::t5_19m(), 2.0 * 16e6, 19e6, 35e6),
            (ModelDims::gpt2_124m(), 2.0 * 39e6, 85e6, 124e6),
            (ModelDims::gpt3_1_3b(), 2.0 * 103e6, 1.2e9, 1.3e9),
        ];
        for (dims, emb, non_emb, active) in rows {
            let c = count_params(&dims);
            assert!(within(c.embedding, emb, 0.05), "{dims:?} {c:?}");
            assert!(within(c.non_embedding, non_emb, 0.05), "{dims:?} {c:?}");
            assert!(within(c.active, active, 0.05), "{dims:?} {c:?}");
        }
    }

    #[test]
    fn degenerate_floor() {
        let dims = ModelDims::new(1, 1, 1, 1, 0, 1);
        let c = count_params(&dims);
        assert_eq!((c.embedding, c.non_embedding, c.total_trainable), (2, 1, 3));
    }

    #[test]
    fn shapes_agree_with_counts() {
        for dims in [ModelDims::small_30m(), ModelDims::gpt2_124m(), {
            let mut d = ModelDims::t5_19m();
            d.tied_embeddings = true;
            d
        }] {
            let n: u64 = dims.tensor_shapes().iter().map(|(_, s, _)| s.numel() as u64).sum();
            assert_eq!(n, count_params(&dims).total_trainable);
        }
    }

    fn thirteen_b() -> ModelDims {
        ModelDims::gpt3_13b().with_override(13_000_000_000)
    }

    #[test]
    fn thirteen_billion_sgd_fits_a100() {
        let est = estimate_memory(&thirteen_b(), &OptimizerConfig::sgd(0.1), 2048, 2, false).unwrap();
        assert_eq!(est.params_bytes, 26_000_000_000);
        assert_eq!(est.optimizer_state_bytes, 0);
        assert!(est.total_bytes < 40_000_000_000);
        assert!(fits(&est, 40_000_000_000));
    }

    #[test]
    fn thirteen_billion_adam_does_not_fit() {
        let est = estimate_memory(&thirteen_b(), &OptimizerConfig::adam(0.1), 2048, 2, false).unwrap();
        assert_eq!(est.optimizer_state_bytes, 52_000_000_000);
        assert!(est.total_bytes >= 78_000_000_000);
        assert!(!fits(&est, 40_000_000_000));
    }

    #[test]
    fn accumulation_adds_one_parameter_sized_buffer() {
        let a = estimate_memory(&thirteen_b(), &OptimizerConfig::sgd(0.1), 2048, 2, false).unwrap();
        let b = estimate_memory(&thirteen_b(), &OptimizerConfig::sgd(0.1), 2048, 2, true).unwrap();
        assert_eq!(b.grad_buffer_bytes, 26_000_000_000);
        assert_eq!(b.total_bytes - a.total_bytes, 26_000_000_000);
    }

    #[test]
    fn fits_is_inclusive() {
        let est = MemoryEstimate {
            params_bytes: 10,
            optimizer_state_bytes: 0,
            activation_bytes: 0,
            grad_buffer_bytes: 0,
            total_bytes: 10,
        };
        assert!(fits(&est, 10));
        assert!(!fits(&est, 9));
    }

    #[test]
    fn rejects_bad_precision_and_shape_free_adafactor() {
        let d = ModelDims::small_30m();
        assert!(estimate_memory(&d, &OptimizerConfig::adam(0.1), 512, 3, false).is_err());
        assert!(estimate_memory(&thirteen_b(), &OptimizerConfig::adafactor(0.1), 512, 2, false).is_err());
        let mut bad = ModelDims::small_30m();
        bad.head_dim = 100;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adafactor_state_is_tiny_for_wide_matrices() {
        let d = ModelDims::gpt2_124m();
        let adam = estimate_memory(&d, &OptimizerConfig::adam(0.1), 1024, 2, false).unwrap();
        let af = estimate_memory(&d, &OptimizerConfig::adafactor(0.1), 1024, 2, false).unwrap();
        assert_eq!(adam.optimizer_state_bytes, 2 * adam.params_bytes);
        assert!((af.optimizer_state_bytes as f64) < 0.01 * adam.optimizer_state_bytes as f64);
    }

    proptest! {
        #[test]
        fn linear_in_batch_tokens(bt in 1u64..100_000, extra in 1u64..100_000) {
            let d = ModelDims::small_30m();
            let cfg = OptimizerConfig::adam(0.1);
            let a = estimate_memory(&d, &cfg, bt, 2, false).unwrap();
            let b = estimate_memory(&d, &cfg, bt + extra, 2, false).unwrap();
            prop_assert_eq!(b.total_bytes - a.total_bytes, extra * d.n_layers * d.model_dim * 2);
        }

        #[test]
        fn adam_state_is_twice_params(v in 1u64..500, dm in 1u64..64, h in 1u64..128, l in 0u64..4) {
            let d = ModelDims::new(v, dm, h, 1, l, 8);
            let e = estimate_memory(&d, &OptimizerConfig::adam(0.1), 8, 4, false).unwrap();
            prop_assert_eq!(e.optimizer_state_bytes, 2 * e.params_bytes);
        }

        #[test]
        fn adafactor_under_one_percent(v in 200u64..2000, dm in 200u64..600, h in 200u64..1200, l in 1u64..3) {
            // only rank-1 gains are unfactored; matrices all have min side >= 200
            let d = ModelDims::new(v, dm, h, 1, l, 8);
            let adam = estimate_memory(&d, &OptimizerConfig::adam(0.1), 8, 2, false).unwrap();
            let af = estimate_memory(&d, &OptimizerConfig::adafactor(0.1), 8, 2, false).unwrap();
            prop_assert!((af.optimizer_state_bytes as f64) < 0.01 * adam.optimizer_state_bytes as f64);
        }
    }
}
