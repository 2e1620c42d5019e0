//! Synthetic next-token task: sequences from a first-order Markov chain.

use super::prng::{Prng, Stream};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovTask {
    n_states: usize,
    transition: Vec<f64>,
    cumulative: Vec<f64>,
    stationary: Vec<f64>,
    stationary_cum: Vec<f64>,
    seed: u64,
}

fn cumsum(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

impl MarkovTask {
    /// Rows are `softmax(concentration * z)` with `z` standard normal, drawn
    /// from the task stream of `seed`. Larger concentration, lower entropy.
    pub fn random(n_states: usize, concentration: f64, seed: u64) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::config("task.n_states", "must be positive"));
        }
        if !(concentration.is_finite() && concentration >= 0.0) {
            return Err(Error::config("task.concentration", "must be finite and >= 0"));
        }
        let mut rng = Prng::new(seed, Stream::Task);
        let mut rows = Vec::with_capacity(n_states * n_states);
        for _ in 0..n_states {
            let logits: Vec<f64> = (0..n_states)
                .map(|_| concentration * rng.standard_normal())
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            rows.extend(exps.iter().map(|e| e / total));
        }
        let mut task = Self::from_matrix(n_states, rows)?;
        task.seed = seed;
        Ok(task)
    }

    pub fn uniform(n_states: usize) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::config("task.n_states", "must be positive"));
        }
        Self::from_matrix(n_states, vec![1.0 / n_states as f64; n_states * n_states])
    }

    /// Deterministic chain `i -> perm[i]`.
    pub fn permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::config("task.permutation", "not a permutation"));
            }
            seen[p] = true;
        }
        let mut rows = vec![0.0; n * n];
        for (i, &p) in perm.iter().enumerate() {
            rows[i * n + p] = 1.0;
        }
        Self::from_matrix(n, rows)
    }

    /// Row-major `n x n` transition matrix; rows must sum to one.
    pub fn from_matrix(n_states: usize, transition: Vec<f64>) -> Result<Self> {
        if n_states == 0 || transition.len() != n_states * n_states {
            return Err(Error::config(
                "task.transition",
                format!("expected {} entries", n_states * n_states),
            ));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::config("task.transition", format!("row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::config("task.transition", format!("row {i} sums to {s}")));
            }
        }
        let cumulative = transition.chunks(n_states).flat_map(cumsum).collect();
        let stationary = stationary_distribution(n_states, &transition);
        let stationary_cum = cumsum(&stationary);
        Ok(MarkovTask {
            n_states,
            transition,
            cumulative,
            stationary,
            stationary_cum,
            seed: 0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.transition[i * self.n_states..(i + 1) * self.n_states]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Conditional entropy of the next token under the stationary
    /// distribution, in nats: the floor for any model's expected loss.
    pub fn entropy_rate(&self) -> f64 {
        (0..self.n_states)
            .map(|i| {
                let h: f64 = self
                    .row(i)
                    .iter()
                    .filter(|p| **p > 0.0)
                    .map(|p| -p * p.ln())
                    .sum();
                self.stationary[i] * h
            })
            .sum()
    }

    /// `len` tokens starting from the stationary distribution.
    pub fn sample_sequence(&self, rng: &mut Prng, len: usize) -> Vec<u32> {
        let k = self.n_states;
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut s = rng.categorical(&self.stationary_cum);
        out.push(s as u32);
        for _ in 1..len {
            s = rng.categorical(&self.cumulative[s * k..(s + 1) * k]);
            out.push(s as u32);
        }
        out
    }

    /// Sequences `first_index .. first_index + batch_size`, each `seq_len + 1`
    /// tokens long. Sequence `n` depends only on `(data seed, stream, n)`, so
    /// consecutive small batches concatenate to the corresponding big batch.
    pub fn sample_batch(
        &self,
        data: &Prng,
        first_index: u64,
        batch_size: usize,
        seq_len: usize,
    ) -> TokenBatch {
        let mut tokens = Vec::with_capacity(batch_size * (seq_len + 1));
        for b in 0..batch_size {
            let mut rng = data.fork(first_index + b as u64);
            tokens.extend(self.sample_sequence(&mut rng, seq_len + 1));
        }
        TokenBatch { seq_len, tokens }
    }
}

/// Fixed point of `pi = pi P`, iterated on the lazy chain `(I + P) / 2`
/// so periodic chains converge too.
fn stationary_distribution(n: usize, p: &[f64]) -> Vec<f64> {
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..100_000 {
        next.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let w = pi[i];
            if w == 0.0 {
                continue;
            }
            for (j, x) in next.iter_mut().enumerate() {
                *x += w * p[i * n + j];
            }
        }
        let mut diff = 0.0;
        for (a, b) in pi.iter_mut().zip(&next) {
            let v = 0.5 * (*a + b);
            diff += (v - *a).abs();
            *a = v;
        }
        if diff < 1e-15 {
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    pi
}

/// `batch_size` sequences of `seq_len + 1` tokens (inputs plus next-token
/// targets), stored back to back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub seq_len: usize,
    pub tokens: Vec<u32>,
}

impl TokenBatch {
    pub fn new(seq_len: usize, tokens: Vec<u32>) -> Result<Self> {
        if !tokens.len().is_multiple_of(seq_len + 1) {
            return Err(Error::Structure(format!(
                "{} tokens is not a whole number of length-{} sequences",
                tokens.len(),
                seq_len + 1
            )));
        }
        Ok(TokenBatch { seq_len, tokens })
    }

    pub fn batch_size(&self) -> usize {
        self.tokens.len() / (self.seq_len + 1)
    }

    pub fn sequences(&self) -> impl Iterator<Item = &[u32]> {
        self.tokens.chunks(self.seq_len + 1)
    }

    pub fn positions(&self) -> usize {
        self.batch_size() * self.seq_len
    }

    pub fn concat(batches: &[TokenBatch]) -> Result<TokenBatch> {
        let seq_len = batches.first().map_or(0, |b| b.seq_len);
        if batches.iter().any(|b| b.seq_len != seq_len) {
            return Err(Error::Structure("batches have different sequence lengths".into()));
        }
        Ok(TokenBatch {
            seq_len,
            tokens: batches.iter().flat_map(|b| b.tokens.iter().copied()).collect(),
        })
    }

    pub fn bigram_counts(&self, n_states: usize) -> BigramCounts {
        let mut counts = BigramCounts::new(n_states);
        for seq in self.sequences() {
            counts.add_sequence(seq);
        }
        counts
    }
}

/// Next-token counts `c[i][j]` over all positions of a batch. The MLP sees one
/// token of context, so these counts are a sufficient statistic for its loss.
#[derive(Clone, Debug, PartialEq)]
pub struct BigramCounts {
    n_states: usize,
    counts: Vec<f64>,
    row_totals: Vec<f64>,
    total: f64,
}

impl BigramCounts {
    pub fn new(n_states: usize) -> Self {
        BigramCounts {
            n_states,
            counts: vec![0.0; n_states * n_states],
            row_totals: vec![0.0; n_states],
            total: 0.0,
        }
    }

    pub fn add_sequence(&mut self, seq: &[u32]) {
        for w in seq.windows(2) {
            self.add(w[0] as usize, w[1] as usize, 1.0);
        }
    }

    pub fn add(&mut self, from: usize, to: usize, weight: f64) {
        self.counts[from * self.n_states + to] += weight;
        self.row_totals[from] += weight;
        self.total += weight;
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.counts[i * self.n_states..(i + 1) * self.n_states]
    }

    pub fn row_total(&self, i: usize) -> f64 {
        self.row_totals[i]
    }

    /// Empirical conditional distribution of row `i`, if it was observed.
    pub fn frequencies(&self, i: usize) -> Option<Vec<f64>> {
        let t = self.row_totals[i];
        (t > 0.0).then(|| self.row(i).iter().map(|c| c / t).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_stochastic_and_seeded() {
        let a = MarkovTask::random(16, 2.0, 3).unwrap();
        for i in 0..16 {
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(a.row(i).iter().all(|p| *p >= 0.0));
        }
        assert_eq!(a, MarkovTask::random(16, 2.0, 3).unwrap());
        assert_ne!(a.row(0), MarkovTask::random(16, 2.0, 4).unwrap().row(0));
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(MarkovTask::from_matrix(2, vec![0.5, 0.5, 0.2, 0.7]).is_err());
        assert!(MarkovTask::from_matrix(2, vec![1.5, -0.5, 0.5, 0.5]).is_err());
        assert!(MarkovTask::permutation(&[0, 0]).is_err());
    }

    #[test]
    fn single_state_emits_zeros() {
        let t = MarkovTask::uniform(1).unwrap();
        let b = t.sample_batch(&Prng::new(0, Stream::Data), 0, 3, 10);
        assert!(b.tokens.iter().all(|&x| x == 0));
        assert_eq!(t.entropy_rate(), 0.0);
    }

    #[test]
    fn permutation_follows_orbit() {
        let perm = [2usize, 0, 3, 1];
        let t = MarkovTask::permutation(&perm).unwrap();
        let b = t.sample_batch(&Prng::new(5, Stream::Data), 0, 8, 20);
        for seq in b.sequences() {
            for w in seq.windows(2) {
                assert_eq!(perm[w[0] as usize], w[1] as usize);
            }
        }
        assert!(t.stationary().iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn batches_concatenate_by_global_index() {
        let t = MarkovTask::random(8, 1.0, 1).unwrap();
        let data = Prng::new(11, Stream::Data);
        let big = t.sample_batch(&data, 32, 32, 16);
        let parts: Vec<TokenBatch> = (0..8).map(|m| t.sample_batch(&data, 32 + 4 * m, 4, 16)).collect();
        assert_eq!(big, TokenBatch::concat(&parts).unwrap());
    }

    #[test]
    fn empirical_bigrams_match_transition_matrix() {
        let t = MarkovTask::random(8, 1.0, 2).unwrap();
        let b = t.sample_batch(&Prng::new(3, Stream::Data), 0, 1000, 1000);
        let counts = b.bigram_counts(8);
        assert_eq!(counts.total(), 1e6);
        for i in 0..8 {
            let f = counts.frequencies(i).unwrap();
            let tv: f64 = 0.5 * f.iter().zip(t.row(i)).map(|(a, b)| (a - b).abs()).sum::<f64>();
            assert!(tv < 1e-2, "row {i}: tv {tv}");
        }
    }

    #[test]
    fn stationary_is_fixed_point() {
        let t = MarkovTask::random(12, 1.5, 9).unwrap();
        let pi = t.stationary();
        for j in 0..12 {
            let next: f64 = (0..12).map(|i| pi[i] * t.row(i)[j]).sum();
            assert!((next - pi[j]).abs() < 1e-12);
        }
        let uniform = MarkovTask::uniform(64).unwrap();
        assert!((uniform.entropy_rate() - 64f64.ln()).abs() < 1e-12);
    }
}
