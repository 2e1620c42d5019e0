//! One-block residual MLP language model with one token of context:
//!
//! ```text
//! e = embed[token]
//! u = rmsnorm(e) * norm1.gain
//! r = e + gelu(u W_in) W_out
//! logits = (rmsnorm(r) * norm2.gain) head
//! ```
//!
//! `mlp.w_in` and `mlp.w_out` are tagged hidden (Muon-eligible); the
//! embedding, head and gains are not. Gradients are derived by hand and the
//! loss is the mean cross-entropy over every position of the batch.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::markov::{BigramCounts, MarkovTask, TokenBatch};
use super::prng::Prng;
use crate::error::{Error, Result};
use crate::tensor::{GradSet, ParamSet, Role, Shape, Tensor};

const RMS_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

pub const EMBED: &str = "embed";
pub const NORM1: &str = "norm1.gain";
pub const W_IN: &str = "mlp.w_in";
pub const W_OUT: &str = "mlp.w_out";
pub const NORM2: &str = "norm2.gain";
pub const HEAD: &str = "head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDims {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl Default for MlpDims {
    fn default() -> Self {
        MlpDims {
            vocab: 64,
            dim: 32,
            hidden: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpLm {
    dims: MlpDims,
    params: ParamSet,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Row-wise `x / sqrt(mean(x^2) + eps)`, returning the normalized rows and scales.
fn rms_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let scale = x.map_axis(Axis(1), |row| (row.dot(&row) / d + RMS_EPS).sqrt());
    let normed = x / &scale.view().insert_axis(Axis(1));
    (normed, scale)
}

/// Backprop through `rms_rows`: given dL/d(normed), returns dL/dx.
fn rms_rows_back(d_normed: &Array2<f64>, normed: &Array2<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let d = normed.ncols() as f64;
    let proj = (d_normed * normed).sum_axis(Axis(1)) / d;
    let mut out = d_normed - &(normed * &proj.view().insert_axis(Axis(1)));
    out /= &scale.view().insert_axis(Axis(1));
    out
}

impl MlpLm {
    /// Gaussian init with std `1/sqrt(fan_in)` for matrices (std 1 for the
    /// embedding table), unit gains. A zero head gives uniform predictions.
    pub fn init(dims: MlpDims, rng: &mut Prng, zero_head: bool) -> Result<Self> {
        if dims.vocab == 0 || dims.dim == 0 || dims.hidden == 0 {
            return Err(Error::config("model", "vocab, dim and hidden must be positive"));
        }
        let MlpDims { vocab, dim, hidden } = dims;
        let mut gaussian = |rows: usize, cols: usize, std: f64| {
            let data = (0..rows * cols).map(|_| std * rng.standard_normal()).collect();
            Tensor::matrix(rows, cols, data)
        };
        let embed = gaussian(vocab, dim, 1.0)?;
        let w_in = gaussian(dim, hidden, 1.0 / (dim as f64).sqrt())?;
        let w_out = gaussian(hidden, dim, 1.0 / (hidden as f64).sqrt())?;
        let head = if zero_head {
            Tensor::zeros(Shape::Matrix(dim, vocab))
        } else {
            gaussian(dim, vocab, 1.0 / (dim as f64).sqrt())?
        };
        let params = ParamSet::new()
            .with(EMBED, Role::Other, embed)?
            .with(NORM1, Role::Other, Tensor::vector(vec![1.0; dim]))?
            .with(W_IN, Role::Hidden, w_in)?
            .with(W_OUT, Role::Hidden, w_out)?
            .with(NORM2, Role::Other, Tensor::vector(vec![1.0; dim]))?
            .with(HEAD, Role::Other, head)?;
        Ok(MlpLm { dims, params })
    }

    pub fn dims(&self) -> MlpDims {
        self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn matrix(&self, name: &str) -> ArrayView2<'_, f64> {
        self.params.get(name).expect("model tensor").view2()
    }

    fn vector(&self, name: &str) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.params.get(name).expect("model tensor").data())
    }

    fn check_tokens(&self, counts: &BigramCounts) -> Result<()> {
        if counts.n_states() != self.dims.vocab {
            return Err(Error::Structure(format!(
                "counts over {} states for a vocabulary of {}",
                counts.n_states(),
                self.dims.vocab
            )));
        }
        Ok(())
    }

    pub fn loss_and_grad(&self, batch: &TokenBatch) -> Result<(f64, GradSet)> {
        self.check_batch(batch)?;
        self.loss_and_grad_counts(&batch.bigram_counts(self.dims.vocab))
    }

    pub fn loss(&self, batch: &TokenBatch) -> Result<f64> {
        self.check_batch(batch)?;
        self.loss_counts(&batch.bigram_counts(self.dims.vocab))
    }

    fn check_batch(&self, batch: &TokenBatch) -> Result<()> {
        if let Some(&t) = batch.tokens.iter().find(|&&t| t as usize >= self.dims.vocab) {
            return Err(Error::Structure(format!(
                "token {t} outside a vocabulary of {}",
                self.dims.vocab
            )));
        }
        Ok(())
    }

    pub fn loss_counts(&self, counts: &BigramCounts) -> Result<f64> {
        self.check_tokens(counts)?;
        Ok(self.run(counts, false).0)
    }

    /// Mean cross-entropy and exact gradients from next-token counts.
    pub fn loss_and_grad_counts(&self, counts: &BigramCounts) -> Result<(f64, GradSet)> {
        self.check_tokens(counts)?;
        let (loss, grads) = self.run(counts, true);
        Ok((loss, grads.expect("gradients requested")))
    }

    fn run(&self, counts: &BigramCounts, want_grad: bool) -> (f64, Option<GradSet>) {
        let k = self.dims.vocab;
        let total = counts.total();
        let rows: Vec<usize> = (0..k).filter(|&i| counts.row_total(i) > 0.0).collect();
        if rows.is_empty() || total == 0.0 {
            return (0.0, want_grad.then(|| GradSet::zeros_like(&self.params)));
        }
        let embed = self.matrix(EMBED);
        let w_in = self.matrix(W_IN);
        let w_out = self.matrix(W_OUT);
        let head = self.matrix(HEAD);
        let g1 = self.vector(NORM1);
        let g2 = self.vector(NORM2);

        let e = embed.select(Axis(0), &rows);
        let (e_hat, s1) = rms_rows(&e);
        let u = &e_hat * &g1;
        let a = u.dot(&w_in);
        let z = a.mapv(gelu);
        let r = &e + &z.dot(&w_out);
        let (r_hat, s2) = rms_rows(&r);
        let o = &r_hat * &g2;
        let logits = o.dot(&head);

        let mut loss = 0.0;
        let mut delta = Array2::<f64>::zeros((rows.len(), k));
        for (ri, &tok) in rows.iter().enumerate() {
            let l = logits.row(ri);
            let max = l.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + l.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let c = counts.row(tok);
            let n = counts.row_total(tok);
            for j in 0..k {
                if c[j] > 0.0 {
                    loss += c[j] * (lse - l[j]);
                }
                if want_grad {
                    delta[[ri, j]] = (n * (l[j] - lse).exp() - c[j]) / total;
                }
            }
        }
        loss /= total;
        if !want_grad {
            return (loss, None);
        }

        let d_head = o.t().dot(&delta);
        let d_o = delta.dot(&head.t());
        let d_g2 = (&d_o * &r_hat).sum_axis(Axis(0));
        let d_r = rms_rows_back(&(&d_o * &g2), &r_hat, &s2);
        let d_w_out = z.t().dot(&d_r);
        let mut d_a = d_r.dot(&w_out.t());
        Zip::from(&mut d_a).and(&a).for_each(|d, &x| *d *= gelu_grad(x));
        let d_w_in = u.t().dot(&d_a);
        let d_u = d_a.dot(&w_in.t());
        let d_g1 = (&d_u * &e_hat).sum_axis(Axis(0));
        let d_e = &d_r + &rms_rows_back(&(&d_u * &g1), &e_hat, &s1);

        let mut grads = GradSet::zeros_like(&self.params);
        {
            let ge = grads.get_mut(EMBED).expect("embed grad").data_mut();
            let dim = self.dims.dim;
            for (ri, &tok) in rows.iter().enumerate() {
                ge[tok * dim..(tok + 1) * dim]
                    .iter_mut()
                    .zip(d_e.row(ri))
                    .for_each(|(g, d)| *g = *d);
            }
        }
        let fill = |grads: &mut GradSet, name: &str, vals: Vec<f64>| {
            grads
                .get_mut(name)
                .expect("grad tensor")
                .data_mut()
                .copy_from_slice(&vals);
        };
        let flat = |m: Array2<f64>| m.as_standard_layout().into_owned().into_raw_vec_and_offset().0;
        fill(&mut grads, NORM1, d_g1.to_vec());
        fill(&mut grads, W_IN, flat(d_w_in));
        fill(&mut grads, W_OUT, flat(d_w_out));
        fill(&mut grads, NORM2, d_g2.to_vec());
        fill(&mut grads, HEAD, flat(d_head));
        (loss, Some(grads))
    }
}

/// Held-out next-token counts sampled once from a dedicated stream.
#[derive(Clone, Debug)]
pub struct EvalSet {
    counts: BigramCounts,
}

pub const EVAL_SEQ_LEN: usize = 256;

impl EvalSet {
    pub fn sample(task: &MarkovTask, rng: &Prng, n_tokens: usize) -> Self {
        let n_seqs = n_tokens.div_ceil(EVAL_SEQ_LEN).max(1);
        let batch = task.sample_batch(rng, 0, n_seqs, EVAL_SEQ_LEN);
        EvalSet {
            counts: batch.bigram_counts(task.n_states()),
        }
    }

    pub fn counts(&self) -> &BigramCounts {
        &self.counts
    }

    pub fn loss(&self, model: &MlpLm) -> Result<f64> {
        model.loss_counts(&self.counts)
    }
}

/// Mean cross-entropy on fresh sequences from `rng`'s stream.
pub fn perplexity_eval(model: &MlpLm, task: &MarkovTask, rng: &Prng, n_tokens: usize) -> Result<f64> {
    EvalSet::sample(task, rng, n_tokens).loss(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::prng::Stream;
    use crate::optim::{Optimizer, OptimizerConfig};

    fn small() -> MlpDims {
        MlpDims {
            vocab: 10,
            dim: 6,
            hidden: 12,
        }
    }

    fn random_model(dims: MlpDims, seed: u64) -> MlpLm {
        MlpLm::init(dims, &mut Prng::new(seed, Stream::Init), false).unwrap()
    }

    #[test]
    fn zero_head_predicts_uniformly() {
        let task = MarkovTask::random(16, 2.0, 0).unwrap();
        let dims = MlpDims { vocab: 16, ..MlpDims::default() };
        let model = MlpLm::init(dims, &mut Prng::new(0, Stream::Init), true).unwrap();
        let batch = task.sample_batch(&Prng::new(0, Stream::Data), 0, 4, 32);
        assert!((model.loss(&batch).unwrap() - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_on_all_tensors() {
        let dims = small();
        let task = MarkovTask::random(dims.vocab, 1.0, 4).unwrap();
        let batch = task.sample_batch(&Prng::new(2, Stream::Data), 0, 6, 20);
        let model = random_model(dims, 3);
        let (_, grads) = model.loss_and_grad(&batch).unwrap();
        let h = 1e-5;
        let mut rng = Prng::new(8, Stream::Custom(1));
        for (ti, p) in model.params().iter().enumerate() {
            for _ in 0..30 {
                let idx = (rng.next_u64() % p.value.numel() as u64) as usize;
                let mut plus = model.clone();
                plus.params_mut().params_mut()[ti].value.data_mut()[idx] += h;
                let mut minus = model.clone();
                minus.params_mut().params_mut()[ti].value.data_mut()[idx] -= h;
                let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * h);
                let an = grads.tensor(ti).data()[idx];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err <= 1e-4, "{} [{idx}]: fd {fd} analytic {an}", p.name);
            }
        }
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let dims = small();
        let task = MarkovTask::random(dims.vocab, 1.0, 1).unwrap();
        let batch = task.sample_batch(&Prng::new(1, Stream::Data), 0, 3, 15);
        let doubled = TokenBatch::concat(&[batch.clone(), batch.clone()]).unwrap();
        let model = random_model(dims, 5);
        let (l1, g1) = model.loss_and_grad(&batch).unwrap();
        let (l2, g2) = model.loss_and_grad(&doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-13);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let dims = small();
        let task = MarkovTask::random(dims.vocab, 1.0, 6).unwrap();
        let batch = task.sample_batch(&Prng::new(6, Stream::Data), 0, 5, 12);
        let model = random_model(dims, 6);
        let (_, full) = model.loss_and_grad(&batch).unwrap();
        let mut mean = vec![0.0; full.flatten().len()];
        for seq in batch.sequences() {
            let one = TokenBatch::new(batch.seq_len, seq.to_vec()).unwrap();
            let (_, g) = model.loss_and_grad(&one).unwrap();
            for (m, x) in mean.iter_mut().zip(g.flatten()) {
                *m += x / batch.batch_size() as f64;
            }
        }
        for (a, b) in full.flatten().iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        let model = random_model(small(), 0);
        let batch = TokenBatch::new(2, vec![0, 1, 99]).unwrap();
        assert!(model.loss_and_grad(&batch).is_err());
    }

    #[test]
    fn eval_matches_uniform_chain_entropy_at_init() {
        let task = MarkovTask::uniform(64).unwrap();
        let model = MlpLm::init(MlpDims::default(), &mut Prng::new(1, Stream::Init), true).unwrap();
        let loss = perplexity_eval(&model, &task, &Prng::new(1, Stream::Eval), 1 << 16).unwrap();
        assert!((loss - 64f64.ln()).abs() < 0.02);
        let single = MarkovTask::uniform(1).unwrap();
        let m1 = MlpLm::init(MlpDims { vocab: 1, ..small() }, &mut Prng::new(0, Stream::Init), false).unwrap();
        assert_eq!(perplexity_eval(&m1, &single, &Prng::new(0, Stream::Eval), 1000).unwrap(), 0.0);
    }

    #[test]
    fn learns_a_deterministic_chain() {
        let perm = [3usize, 5, 0, 7, 1, 2, 6, 4];
        let task = MarkovTask::permutation(&perm).unwrap();
        let dims = MlpDims { vocab: 8, dim: 16, hidden: 32 };
        let mut model = MlpLm::init(dims, &mut Prng::new(0, Stream::Init), true).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.02), model.params()).unwrap();
        let data = Prng::new(0, Stream::Data);
        for s in 0..300 {
            let batch = task.sample_batch(&data, s * 4, 4, 16);
            let (_, g) = model.loss_and_grad(&batch).unwrap();
            opt.step(model.params_mut(), &g).unwrap();
        }
        let eval = perplexity_eval(&model, &task, &Prng::new(0, Stream::Eval), 4096).unwrap();
        assert!(eval < 0.05, "eval loss {eval}");
    }

    #[test]
    fn eval_never_beats_entropy_rate() {
        let task = MarkovTask::random(8, 1.5, 3).unwrap();
        let dims = MlpDims { vocab: 8, dim: 8, hidden: 16 };
        let mut model = MlpLm::init(dims, &mut Prng::new(0, Stream::Init), true).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01), model.params()).unwrap();
        let data = Prng::new(0, Stream::Data);
        let h = task.entropy_rate();
        for s in 0..200 {
            let batch = task.sample_batch(&data, s * 8, 8, 32);
            let (_, g) = model.loss_and_grad(&batch).unwrap();
            opt.step(model.params_mut(), &g).unwrap();
            if s % 50 == 0 {
                let eval = perplexity_eval(&model, &task, &Prng::new(0, Stream::Eval), 1 << 17).unwrap();
                assert!(eval >= h - 1e-3, "{eval} < {h}");
            }
        }
    }
}
