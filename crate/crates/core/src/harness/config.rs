//! JSON run configuration. Decay rates may be given directly (`beta1`,
//! `beta2`) or as token half-lives (`t1_tokens`, `t2_tokens`), which are
//! resolved against the effective tokens per optimizer step.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::halflife::{beta_to_halflife, halflife_to_beta, DecayRate, TokenHalfLife, TokensPerStep};
use crate::models::{MarkovTask, MlpDims};
use crate::optim::{MomentumStyle, OptimizerConfig, Schedule, Variant};
use crate::units::{fmt_sig, TokenAmount, TokenCount};

pub const DEFAULT_EVAL_TOKENS: u64 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(default = "default_states")]
    pub n_states: usize,
    /// Scale of the row logits; larger means lower-entropy transitions.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_states() -> usize {
    64
}

fn default_concentration() -> f64 {
    2.0
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            n_states: default_states(),
            concentration: default_concentration(),
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn build(&self) -> Result<MarkovTask> {
        MarkovTask::random(self.n_states, self.concentration, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Start from uniform predictions.
    #[serde(default = "default_true")]
    pub zero_head: bool,
}

fn default_dim() -> usize {
    32
}

fn default_hidden() -> usize {
    128
}

fn default_true() -> bool {
    true
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            dim: default_dim(),
            hidden: default_hidden(),
            zero_head: true,
        }
    }
}

impl ModelSpec {
    pub fn dims(&self, vocab: usize) -> MlpDims {
        MlpDims {
            vocab,
            dim: self.dim,
            hidden: self.hidden,
        }
    }
}

/// Optimizer settings as written in a config file. Unset fields take the
/// variant's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub variant: Variant,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_tokens: Option<TokenAmount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_tokens: Option<TokenAmount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_correction: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ns_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub muon_momentum: Option<MomentumStyle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adafactor_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<Box<OptimizerSpec>>,
}

impl OptimizerSpec {
    pub fn new(variant: Variant, lr: f64) -> Self {
        OptimizerSpec {
            variant,
            lr,
            momentum: None,
            beta1: None,
            beta2: None,
            t1_tokens: None,
            t2_tokens: None,
            epsilon: None,
            weight_decay: None,
            bias_correction: None,
            schedule: None,
            ns_iters: None,
            muon_momentum: None,
            adafactor_delta: None,
            aux: None,
        }
    }

    pub fn resolve(&self, tps: TokensPerStep) -> Result<OptimizerConfig> {
        self.resolve_at(tps, "optimizer")
    }

    fn resolve_at(&self, tps: TokensPerStep, path: &str) -> Result<OptimizerConfig> {
        let mut cfg = OptimizerConfig::default_for(self.variant, self.lr);
        let decay = |beta: Option<f64>, t: Option<TokenAmount>, bkey: &str, tkey: &str| -> Result<Option<f64>> {
            match (beta, t) {
                (Some(_), Some(_)) => Err(Error::config(
                    format!("{path}.{tkey}"),
                    format!("give either {bkey} or {tkey}, not both"),
                )),
                (Some(b), None) => Ok(Some(b)),
                (None, Some(t)) => {
                    let half = TokenHalfLife::new(t.0).map_err(|e| Error::config(format!("{path}.{tkey}"), e.to_string()))?;
                    let beta = halflife_to_beta(half, tps)
                        .map_err(|e| Error::config(format!("{path}.{tkey}"), e.to_string()))?;
                    Ok(Some(beta.get()))
                }
                (None, None) => Ok(None),
            }
        };
        if let Some(b1) = decay(self.beta1, self.t1_tokens, "beta1", "t1_tokens")? {
            cfg.beta1 = b1;
        }
        if let Some(b2) = decay(self.beta2, self.t2_tokens, "beta2", "t2_tokens")? {
            cfg.beta2 = b2;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.bias_correction {
            cfg.bias_correction = v;
        }
        if let Some(v) = &self.schedule {
            cfg.schedule = v.clone();
        }
        if let Some(v) = self.ns_iters {
            cfg.ns_iters = v;
        }
        if let Some(v) = self.muon_momentum {
            cfg.muon_momentum = v;
        }
        if let Some(v) = self.adafactor_delta {
            cfg.adafactor_delta = v;
        }
        if let Some(aux) = &self.aux {
            cfg.aux = Some(Box::new(aux.resolve_at(tps, &format!("{path}.aux"))?));
        }
        cfg.validate().map_err(|e| match e {
            Error::Config { key, msg } => Error::config(format!("{path}.{key}"), msg),
            other => other,
        })?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub model: ModelSpec,
    pub optimizer: OptimizerSpec,
    /// Sequences per micro-batch.
    pub batch_size: u64,
    pub seq_len: u64,
    pub token_budget: TokenCount,
    #[serde(default = "default_accum")]
    pub accum_steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to a tenth of the budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every_tokens: Option<TokenCount>,
    #[serde(default = "default_eval_tokens")]
    pub eval_tokens: TokenCount,
}

fn default_accum() -> u64 {
    1
}

fn default_eval_tokens() -> TokenCount {
    TokenCount(DEFAULT_EVAL_TOKENS)
}

impl RunConfig {
    pub fn new(optimizer: OptimizerSpec, batch_size: u64, seq_len: u64, token_budget: u64) -> Self {
        RunConfig {
            task: TaskSpec::default(),
            model: ModelSpec::default(),
            optimizer,
            batch_size,
            seq_len,
            token_budget: TokenCount(token_budget),
            accum_steps: 1,
            seed: 0,
            eval_every_tokens: None,
            eval_tokens: default_eval_tokens(),
        }
    }

    pub fn from_value(value: Value) -> Result<Self> {
        Ok(serde_json::from_value(value)?)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn effective_batch(&self) -> u64 {
        self.batch_size * self.accum_steps
    }

    /// Tokens consumed by one optimizer step.
    pub fn tokens_per_step(&self) -> Result<TokensPerStep> {
        if self.accum_steps == 0 {
            return Err(Error::config("accum_steps", "must be positive"));
        }
        TokensPerStep::new(self.effective_batch(), self.seq_len)
            .map_err(|_| Error::config("batch_size", "batch_size and seq_len must be positive"))
    }

    pub fn n_steps(&self) -> Result<u64> {
        let tps = self.tokens_per_step()?.tokens() as u64;
        let steps = self.token_budget.get() / tps;
        if steps == 0 {
            return Err(Error::config(
                "token_budget",
                format!(
                    "{} tokens is less than one optimizer step of {tps} tokens",
                    self.token_budget
                ),
            ));
        }
        Ok(steps)
    }

    pub fn resolve_optimizer(&self) -> Result<OptimizerConfig> {
        self.optimizer.resolve(self.tokens_per_step()?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task.n_states == 0 {
            return Err(Error::config("task.n_states", "must be positive"));
        }
        if !(self.task.concentration.is_finite() && self.task.concentration >= 0.0) {
            return Err(Error::config("task.concentration", "must be finite and >= 0"));
        }
        if self.model.dim == 0 || self.model.hidden == 0 {
            return Err(Error::config("model", "dim and hidden must be positive"));
        }
        if self.eval_tokens.get() == 0 {
            return Err(Error::config("eval_tokens", "must be positive"));
        }
        if self.eval_every_tokens == Some(TokenCount(0)) {
            return Err(Error::config("eval_every_tokens", "must be positive"));
        }
        self.n_steps()?;
        self.resolve_optimizer()?;
        Ok(())
    }

    /// Readable key plus a hash of the full configuration. Two configs share
    /// an id only if they serialize identically.
    pub fn config_id(&self) -> String {
        let canonical = serde_json::to_string(&self.to_value()).expect("run config serializes");
        format!(
            "{}_B{}x{}_T{}_lr{}_s{}_{:08x}",
            self.optimizer.variant,
            self.batch_size,
            self.accum_steps,
            self.seq_len,
            fmt_sig(self.optimizer.lr, 4),
            self.seed,
            fnv1a(canonical.as_bytes()) as u32
        )
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Decay rates that matter for `cfg`, with their token half-lives at `tps`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReportedDecays {
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub t1_tokens: Option<f64>,
    pub t2_tokens: Option<f64>,
}

pub fn reported_decays(cfg: &OptimizerConfig, tps: TokensPerStep) -> ReportedDecays {
    let half = |b: f64| DecayRate::new(b).ok().map(|d| beta_to_halflife(d, tps).tokens());
    let (b1, b2) = match cfg.variant {
        Variant::Sgd => (None, None),
        Variant::Adam => (Some(cfg.beta1), Some(cfg.beta2)),
        Variant::Adafactor => ((cfg.beta1 > 0.0).then_some(cfg.beta1), Some(cfg.beta2)),
        Variant::Muon => {
            return cfg
                .aux
                .as_deref()
                .map(|aux| reported_decays(aux, tps))
                .unwrap_or_default()
        }
    };
    ReportedDecays {
        beta1: b1,
        beta2: b2,
        t1_tokens: b1.and_then(half),
        t2_tokens: b2.and_then(half),
    }
}

/// Sets `value` at a dotted `path` (e.g. `optimizer.lr`) inside a JSON
/// object, creating intermediate objects as needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(path, "malformed key path"));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(path, format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one component")
}
