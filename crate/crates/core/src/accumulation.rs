//! Gradient accumulation over micro-batches.
//!
//! Each micro-batch contributes its mean gradient weighted by its sample
//! count, so finalizing yields the mean gradient of the concatenated batch
//! even when micro-batch sizes differ.

use crate::error::{Error, Result};
use crate::tensor::{GradSet, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MicroBatchPlan {
    pub micro_batch_size: u64,
    pub accum_steps: u64,
}

impl MicroBatchPlan {
    pub fn new(micro_batch_size: u64, accum_steps: u64) -> Result<Self> {
        if micro_batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if accum_steps == 0 {
            return Err(Error::config("accum_steps", "must be positive"));
        }
        Ok(MicroBatchPlan {
            micro_batch_size,
            accum_steps,
        })
    }

    pub fn effective_batch(&self) -> u64 {
        self.micro_batch_size * self.accum_steps
    }
}

#[derive(Clone, Debug)]
pub struct GradAccumulator {
    sum: GradSet,
    weight: u64,
}

impl GradAccumulator {
    pub fn new(params: &ParamSet) -> Self {
        GradAccumulator {
            sum: GradSet::zeros_like(params),
            weight: 0,
        }
    }

    pub fn like(template: &GradSet) -> Self {
        let mut sum = template.clone();
        sum.scale(0.0);
        GradAccumulator { sum, weight: 0 }
    }

    pub fn total_weight(&self) -> u64 {
        self.weight
    }

    /// Adds the mean gradient of `n_samples` samples.
    pub fn add_microbatch(&mut self, grads: &GradSet, n_samples: u64) -> Result<()> {
        if n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        self.sum.check_same_layout(grads)?;
        self.sum.add_scaled(grads, n_samples as f64);
        self.weight += n_samples;
        Ok(())
    }

    /// Returns the weighted mean and resets the accumulator.
    pub fn finalize(&mut self) -> Result<GradSet> {
        if self.weight == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let mut out = self.sum.clone();
        out.scale(1.0 / self.weight as f64);
        self.sum.scale(0.0);
        self.weight = 0;
        Ok(out)
    }
}
