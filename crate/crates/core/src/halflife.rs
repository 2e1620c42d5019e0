//! Token half-lives of exponential moving averages.
//!
//! An EMA with decay rate `beta` shrinks the contribution of a gradient by
//! `beta` every optimizer step, and every step consumes `B * T` tokens. The
//! half-life is the number of tokens after which that contribution has halved:
//! `beta^(t / (B*T)) = 1/2`.
//!
//! Holding the second-moment half-life fixed while changing the batch size
//! gives the rescaling rule `beta2' = beta2^(B'T' / BT)`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// EMA decay rate, strictly inside (0, 1).
///
/// The natural log is kept next to the value: rates within `1e-4` of one
/// lose most of their relative precision in `1 - beta`, while `ln beta`
/// stays exact, so half-life conversions and rescaling go through the log.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DecayRate {
    value: f64,
    ln: f64,
}

impl DecayRate {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(DecayRate { value, ln: value.ln() })
        } else {
            Err(Error::InvalidDecayRate(value))
        }
    }

    /// From `ln beta`; fails when `beta` is not representable inside (0, 1).
    pub fn from_ln(ln: f64) -> Result<Self> {
        let value = ln.exp();
        if ln < 0.0 && value > 0.0 && value < 1.0 {
            Ok(DecayRate { value, ln })
        } else {
            Err(Error::InvalidDecayRate(value))
        }
    }

    pub fn get(self) -> f64 {
        self.value
    }

    pub fn ln(self) -> f64 {
        self.ln
    }
}

impl TryFrom<f64> for DecayRate {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        DecayRate::new(v)
    }
}

impl From<DecayRate> for f64 {
    fn from(b: DecayRate) -> f64 {
        b.value
    }
}

/// Half-life measured in training tokens.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TokenHalfLife(f64);

impl TokenHalfLife {
    pub fn new(tokens: f64) -> Result<Self> {
        if tokens > 0.0 && tokens.is_finite() {
            Ok(TokenHalfLife(tokens))
        } else {
            Err(Error::InvalidHalfLife(tokens))
        }
    }

    pub fn tokens(self) -> f64 {
        self.0
    }

    /// The same half-life expressed in optimizer steps.
    pub fn steps(self, tps: TokensPerStep) -> f64 {
        self.0 / tps.tokens()
    }

    pub fn scaled(self, factor: f64) -> Result<Self> {
        TokenHalfLife::new(self.0 * factor)
    }
}

impl TryFrom<f64> for TokenHalfLife {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        TokenHalfLife::new(v)
    }
}

impl From<TokenHalfLife> for f64 {
    fn from(t: TokenHalfLife) -> f64 {
        t.0
    }
}

/// Tokens consumed by one optimizer step: batch size times sequence length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokensPerStep {
    batch_size: u64,
    seq_len: u64,
}

impl TokensPerStep {
    pub fn new(batch_size: u64, seq_len: u64) -> Result<Self> {
        if batch_size == 0 || seq_len == 0 {
            return Err(Error::InvalidTokensPerStep {
                batch_size,
                seq_len,
            });
        }
        Ok(TokensPerStep {
            batch_size,
            seq_len,
        })
    }

    pub fn batch_size(self) -> u64 {
        self.batch_size
    }

    pub fn seq_len(self) -> u64 {
        self.seq_len
    }

    pub fn tokens(self) -> f64 {
        self.batch_size as f64 * self.seq_len as f64
    }
}

/// `t = B*T * ln 2 / (-ln beta)`.
pub fn beta_to_halflife(beta: DecayRate, tps: TokensPerStep) -> TokenHalfLife {
    TokenHalfLife(tps.tokens() * LN_2 / -beta.ln)
}

/// `beta = 2^(-B*T / t)`.
pub fn halflife_to_beta(t: TokenHalfLife, tps: TokensPerStep) -> Result<DecayRate> {
    DecayRate::from_ln(-LN_2 * (tps.tokens() / t.0))
}

/// Rescales a decay rate so its token half-life is unchanged when the
/// tokens per step change from `old` to `new`.
pub fn scale_beta2(beta: DecayRate, old: TokensPerStep, new: TokensPerStep) -> Result<DecayRate> {
    if old.tokens() == new.tokens() {
        return Ok(beta);
    }
    let ratio = new.tokens() / old.tokens();
    DecayRate::from_ln(beta.ln * ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tps(b: u64, t: u64) -> TokensPerStep {
        TokensPerStep::new(b, t).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    /// Continuous number of steps after which `beta^n <= 1/2`, found by
    /// bracketing with repeated multiplication and refining by bisection on
    /// `powf`. Independent of the log formula.
    fn halving_steps_oracle(beta: f64) -> f64 {
        let mut n = 0u64;
        let mut acc = 1.0f64;
        while acc > 0.5 {
            acc *= beta;
            n += 1;
        }
        let (mut lo, mut hi) = ((n - 1) as f64, n as f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if beta.powf(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn one_step_halving() {
        let t = beta_to_halflife(DecayRate::new(0.5).unwrap(), tps(1, 1));
        assert!((t.tokens() - 1.0).abs() < 1e-15);
        let b = halflife_to_beta(TokenHalfLife::new(1.0).unwrap(), tps(1, 1)).unwrap();
        assert!((b.get() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn halflife_examples_match_iteration_oracle() {
        let n = halving_steps_oracle(0.95);
        let expected = n * 524_288.0;
        let t = beta_to_halflife(DecayRate::new(0.95).unwrap(), tps(512, 1024));
        assert!(rel(t.tokens(), expected) < 1e-10);
        assert!(rel(t.tokens(), 7.085e6) < 1e-3);

        let n = halving_steps_oracle(0.9999);
        let t2 = beta_to_halflife(DecayRate::new(0.9999).unwrap(), tps(1, 1024));
        assert!(rel(t2.tokens(), n * 1024.0) < 1e-8);
        assert!(rel(t2.tokens(), 7.097e6) < 1e-3);
        // the two settings describe nearly the same averaging window
        assert!(rel(t.tokens(), t2.tokens()) < 2e-3);
    }

    #[test]
    fn inverse_examples() {
        let b = halflife_to_beta(TokenHalfLife::new(7.085e6).unwrap(), tps(512, 1024)).unwrap();
        assert!((b.get() - 0.95).abs() < 1e-4);
        let b = halflife_to_beta(TokenHalfLife::new(10e6).unwrap(), tps(1, 512)).unwrap();
        let direct = 2f64.powf(-512.0 / 1e7);
        assert!(rel(b.get(), direct) < 1e-14);
        assert!((b.get() - 0.9999645).abs() < 1e-7);
    }

    #[test]
    fn tiny_halflife_is_rejected() {
        let r = halflife_to_beta(TokenHalfLife::new(1e-3).unwrap(), tps(512, 1024));
        assert!(matches!(r, Err(Error::InvalidDecayRate(_))));
    }

    #[test]
    fn type_invariants() {
        assert!(DecayRate::new(0.0).is_err());
        assert!(DecayRate::new(1.0).is_err());
        assert!(DecayRate::new(f64::NAN).is_err());
        assert!(TokenHalfLife::new(0.0).is_err());
        assert!(TokenHalfLife::new(f64::INFINITY).is_err());
        assert!(TokensPerStep::new(0, 4).is_err());
        assert!(TokensPerStep::new(4, 0).is_err());
        assert!(serde_json::from_str::<DecayRate>("1.5").is_err());
    }

    #[test]
    fn scale_beta2_examples() {
        let b = DecayRate::new(0.95).unwrap();
        let s = scale_beta2(b, tps(512, 1024), tps(1, 1024)).unwrap();
        assert!((s.get() - 0.9999).abs() < 1e-5);
        let s = scale_beta2(b, tps(16, 1024), tps(1, 1024)).unwrap();
        assert!((s.get() - 0.997).abs() < 5e-4);
        assert_eq!(scale_beta2(b, tps(8, 64), tps(8, 64)).unwrap(), b);
        // same token count, different split: identity as well
        assert_eq!(scale_beta2(b, tps(8, 64), tps(64, 8)).unwrap(), b);
    }

    #[test]
    fn monotone_in_beta_and_tokens() {
        let grid: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
        for w in grid.windows(2) {
            let a = beta_to_halflife(DecayRate::new(w[0]).unwrap(), tps(4, 16));
            let b = beta_to_halflife(DecayRate::new(w[1]).unwrap(), tps(4, 16));
            assert!(a < b);
        }
        let beta = DecayRate::new(0.9).unwrap();
        assert!(beta_to_halflife(beta, tps(1, 16)) < beta_to_halflife(beta, tps(2, 16)));
    }

    #[test]
    fn log_spaced_round_trip() {
        for &bt in &[1u64, 512, 524_288] {
            for i in 0..=200 {
                // 1 - beta log-spaced from 1-1e-6 down to 1e-6, then mirrored
                let e = 10f64.powf(-6.0 * i as f64 / 200.0);
                for beta in [e.clamp(1e-6, 1.0 - 1e-6), 1.0 - e.clamp(1e-6, 1.0 - 1e-6)] {
                    let b = DecayRate::new(beta).unwrap();
                    let t = beta_to_halflife(b, tps(bt, 1));
                    let back = halflife_to_beta(t, tps(bt, 1)).unwrap();
                    assert!(rel(back.get(), beta) <= 1e-12, "beta={beta} bt={bt}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn scale_preserves_halflife(
            beta in 0.01f64..0.9999,
            b0 in 1u64..4096, b1 in 1u64..4096, t0 in 1u64..2048, t1 in 1u64..2048,
        ) {
            let beta = DecayRate::new(beta).unwrap();
            let (old, new) = (tps(b0, t0), tps(b1, t1));
            if let Ok(s) = scale_beta2(beta, old, new) {
                let h_old = beta_to_halflife(beta, old).tokens();
                let h_new = beta_to_halflife(s, new).tokens();
                prop_assert!(rel(h_new, h_old) <= 1e-12);
            }
        }

        #[test]
        fn scale_composes(beta in 0.5f64..0.999, a in 1u64..512, b in 1u64..512, c in 1u64..512) {
            let beta = DecayRate::new(beta).unwrap();
            let ab = scale_beta2(beta, tps(a, 8), tps(b, 8)).unwrap();
            let abc = scale_beta2(ab, tps(b, 8), tps(c, 8)).unwrap();
            let ac = scale_beta2(beta, tps(a, 8), tps(c, 8)).unwrap();
            prop_assert!(rel(abc.get(), ac.get()) <= 1e-12);
        }
    }
}
