//! Desk-scale stand-ins for language-model training: seeded PRNG streams,
//! the noisy `x + 10 y^2` toy, a synthetic Markov next-token task and a
//! small MLP language model with hand-written gradients.

pub mod markov;
pub mod mlp;
pub mod prng;
pub mod toy;

pub use markov::{BigramCounts, MarkovTask, TokenBatch};
pub use mlp::{perplexity_eval, EvalSet, MlpDims, MlpLm};
pub use prng::{Prng, Stream};
pub use toy::{NoiseMode, ToyProblem};
