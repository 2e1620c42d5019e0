//! Fixed-token-budget training of the MLP on the Markov task.

use crate::accumulation::GradAccumulator;
use crate::error::Result;
use crate::models::{EvalSet, MlpLm, Prng, Stream};
use crate::optim::{Optimizer, OptimizerConfig};

use super::config::RunConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    /// Optimizer steps taken so far.
    pub step: u64,
    pub tokens_seen: u64,
    /// Mean training loss over the steps since the previous record.
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config_id: String,
    pub optimizer: OptimizerConfig,
    pub records: Vec<RunRecord>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    /// True when the training loss became non-finite and the run stopped early.
    pub diverged: bool,
    pub model: MlpLm,
}

impl RunOutput {
    pub fn tokens_seen(&self) -> u64 {
        self.records.last().map_or(0, |r| r.tokens_seen)
    }
}

/// Runs `floor(budget / (B * T * accum))` optimizer steps. Micro-batch `m`
/// of step `s` holds the sequences with global indices starting at
/// `(s * accum + m) * B`, so the data stream is independent of how a batch
/// is split into micro-batches.
pub fn train(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let n_steps = cfg.n_steps()?;
    let opt_cfg = cfg.resolve_optimizer()?;
    let task = cfg.task.build()?;
    let dims = cfg.model.dims(task.n_states());
    let mut model = MlpLm::init(dims, &mut Prng::new(cfg.seed, Stream::Init), cfg.model.zero_head)?;
    let mut opt = Optimizer::new(opt_cfg.clone(), model.params())?;
    let data = Prng::new(cfg.seed, Stream::Data);
    let eval = EvalSet::sample(&task, &Prng::new(cfg.seed, Stream::Eval), cfg.eval_tokens.get() as usize);

    let b = cfg.batch_size as usize;
    let t = cfg.seq_len as usize;
    let step_tokens = cfg.effective_batch() * cfg.seq_len;
    let eval_every = cfg
        .eval_every_tokens
        .map(|e| e.get())
        .unwrap_or_else(|| (cfg.token_budget.get() / 10).max(1));

    let initial_eval_loss = eval.loss(&model)?;
    let mut records = Vec::new();
    let mut acc = GradAccumulator::new(model.params());
    let mut loss_sum = 0.0;
    let mut loss_steps = 0u64;
    let mut diverged = false;

    for step in 1..=n_steps {
        let mut step_loss = 0.0;
        for m in 0..cfg.accum_steps {
            let first = ((step - 1) * cfg.accum_steps + m) * cfg.batch_size;
            let batch = task.sample_batch(&data, first, b, t);
            let (loss, grads) = model.loss_and_grad(&batch)?;
            step_loss += loss / cfg.accum_steps as f64;
            acc.add_microbatch(&grads, cfg.batch_size)?;
        }
        let grads = acc.finalize()?;
        loss_sum += step_loss;
        loss_steps += 1;
        if !step_loss.is_finite() {
            diverged = true;
        } else {
            opt.step(model.params_mut(), &grads)?;
            diverged = model.params().iter().any(|p| p.value.data().iter().any(|x| !x.is_finite()));
        }

        let tokens = step * step_tokens;
        let crossed = tokens / eval_every > (tokens - step_tokens) / eval_every;
        if crossed || step == n_steps || diverged {
            let eval_loss = if diverged { f64::NAN } else { eval.loss(&model)? };
            records.push(RunRecord {
                step,
                tokens_seen: tokens,
                train_loss: loss_sum / loss_steps as f64,
                eval_loss: Some(eval_loss),
            });
            loss_sum = 0.0;
            loss_steps = 0;
        }
        if diverged {
            break;
        }
    }

    let final_eval_loss = records.last().and_then(|r| r.eval_loss).unwrap_or(initial_eval_loss);
    Ok(RunOutput {
        config_id: cfg.config_id(),
        optimizer: opt_cfg,
        records,
        initial_eval_loss,
        final_eval_loss,
        diverged,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::OptimizerSpec;
    use crate::optim::Variant;
    use crate::units::TokenCount;

    fn small(variant: Variant, lr: f64, b: u64, budget: u64) -> RunConfig {
        let mut c = RunConfig::new(OptimizerSpec::new(variant, lr), b, 16, budget);
        c.task.n_states = 16;
        c.model.dim = 8;
        c.model.hidden = 16;
        c.eval_tokens = TokenCount(4096);
        c
    }

    #[test]
    fn records_are_monotone_and_final() {
        let out = train(&small(Variant::Adam, 0.01, 4, 64 * 100)).unwrap();
        assert_eq!(out.records.len(), 10);
        let last = out.records.last().unwrap();
        assert_eq!(last.step, 100);
        assert_eq!(last.tokens_seen, 6400);
        assert!(out.records.windows(2).all(|w| w[0].tokens_seen < w[1].tokens_seen));
        assert!(out.records.iter().all(|r| r.tokens_seen == r.step * 64));
        assert_eq!(Some(out.final_eval_loss), last.eval_loss);
        assert!(out.final_eval_loss < out.initial_eval_loss);
    }

    #[test]
    fn partial_steps_are_dropped() {
        let out = train(&small(Variant::Sgd, 0.1, 2, 32 * 7 + 31)).unwrap();
        assert_eq!(out.records.last().unwrap().step, 7);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let cfg = small(Variant::Adam, 0.0, 2, 32 * 20);
        let out = train(&cfg).unwrap();
        let init = MlpLm::init(
            cfg.model.dims(16),
            &mut Prng::new(cfg.seed, Stream::Init),
            true,
        )
        .unwrap();
        assert_eq!(out.model.params(), init.params());
        assert_eq!(out.final_eval_loss, out.initial_eval_loss);
        let losses: Vec<f64> = out.records.iter().map(|r| r.train_loss).collect();
        assert!(losses.iter().all(|l| (l - 16f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn accumulation_matches_direct_batch() {
        let direct = small(Variant::Adam, 0.01, 8, 128 * 30);
        let mut accum = direct.clone();
        accum.batch_size = 2;
        accum.accum_steps = 4;
        let a = train(&direct).unwrap();
        let b = train(&accum).unwrap();
        for (x, y) in a.model.params().flatten().iter().zip(b.model.params().flatten()) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
        assert!((a.final_eval_loss - b.final_eval_loss).abs() < 1e-9);
    }

    #[test]
    fn deterministic_in_seed() {
        let c = small(Variant::Muon, 0.02, 2, 32 * 10);
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(a.records, b.records);
        let mut c2 = c.clone();
        c2.seed = 1;
        assert_ne!(train(&c2).unwrap().records, a.records);
    }

    #[test]
    fn divergence_stops_the_run() {
        let out = train(&small(Variant::Sgd, 1e300, 2, 32 * 50)).unwrap();
        assert!(out.diverged);
        assert!(out.final_eval_loss.is_nan());
        assert!(out.records.last().unwrap().step < 50);
    }
}
