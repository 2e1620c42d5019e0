//! Optimizer update rules behind a single [`Optimizer::step`] interface.
//!
//! | variant     | state per tensor                                    |
//! |-------------|-----------------------------------------------------|
//! | `sgd`       | nothing, or one momentum buffer when `momentum > 0` |
//! | `adam`      | first and second moments `m`, `v`                   |
//! | `adafactor` | row/column accumulators for matrices, `v` otherwise |
//! | `muon`      | momentum buffer for `hidden` matrices + aux state   |
//!
//! Weight decay is decoupled everywhere: `theta -= lr * w * theta` happens
//! before the gradient-based update.

pub mod adafactor;
pub mod adam;
pub mod muon;
pub mod newton_schulz;
pub mod sgd;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{GradSet, ParamSet, Role, Shape};

pub use newton_schulz::{newton_schulz, NS_COEFFS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sgd,
    #[serde(alias = "adamw")]
    Adam,
    Adafactor,
    Muon,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sgd => "sgd",
            Variant::Adam => "adam",
            Variant::Adafactor => "adafactor",
            Variant::Muon => "muon",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Variant::Sgd),
            "adam" | "adamw" => Ok(Variant::Adam),
            "adafactor" => Ok(Variant::Adafactor),
            "muon" => Ok(Variant::Muon),
            other => Err(Error::config(
                "variant",
                format!("unknown optimizer `{other}` (expected sgd, adam, adafactor or muon)"),
            )),
        }
    }
}

/// How Muon folds gradients into its buffer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentumStyle {
    /// `b = mu * b + g`
    #[default]
    Accumulate,
    /// `b = mu * b + (1 - mu) * g`
    Ema,
}

/// Learning-rate multiplier as a function of the (1-based) step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear warmup to the peak, then cosine decay to zero at `total_steps`.
    WarmupCosine { warmup_steps: u64, total_steps: u64 },
}

impl Schedule {
    pub fn factor(&self, step: u64) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::WarmupCosine {
                warmup_steps,
                total_steps,
            } => {
                if warmup_steps > 0 && step <= warmup_steps {
                    return step as f64 / warmup_steps as f64;
                }
                let span = total_steps.saturating_sub(warmup_steps).max(1) as f64;
                let progress = ((step - warmup_steps) as f64 / span).clamp(0.0, 1.0);
                0.5 * (1.0 + (PI * progress).cos())
            }
        }
    }
}

/// Resolved optimizer hyperparameters. Decay rates here are plain numbers;
/// half-life forms are resolved before this point (see `harness::config`).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub variant: Variant,
    pub lr: f64,
    /// SGD momentum, and Muon's buffer decay.
    pub momentum: f64,
    /// May be zero (no first moment).
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub bias_correction: bool,
    pub schedule: Schedule,
    pub ns_iters: usize,
    pub muon_momentum: MomentumStyle,
    /// Added to every squared gradient before factored accumulation.
    pub adafactor_delta: f64,
    /// Optimizer for Muon's non-hidden tensors.
    pub aux: Option<Box<OptimizerConfig>>,
}

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_ADAFACTOR_DELTA: f64 = 1e-30;
pub const DEFAULT_NS_ITERS: usize = 5;

impl OptimizerConfig {
    fn base(variant: Variant, lr: f64) -> Self {
        OptimizerConfig {
            variant,
            lr,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.95,
            epsilon: DEFAULT_EPSILON,
            weight_decay: 0.0,
            bias_correction: true,
            schedule: Schedule::Constant,
            ns_iters: DEFAULT_NS_ITERS,
            muon_momentum: MomentumStyle::Accumulate,
            adafactor_delta: DEFAULT_ADAFACTOR_DELTA,
            aux: None,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::base(Variant::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::base(Variant::Adam, lr)
    }

    pub fn adafactor(lr: f64) -> Self {
        OptimizerConfig {
            beta1: 0.0,
            ..Self::base(Variant::Adafactor, lr)
        }
    }

    /// Muon with an Adam auxiliary optimizer at the same learning rate.
    pub fn muon(lr: f64) -> Self {
        OptimizerConfig {
            momentum: 0.95,
            aux: Some(Box::new(Self::adam(lr))),
            ..Self::base(Variant::Muon, lr)
        }
    }

    pub fn default_for(variant: Variant, lr: f64) -> Self {
        match variant {
            Variant::Sgd => Self::sgd(lr),
            Variant::Adam => Self::adam(lr),
            Variant::Adafactor => Self::adafactor(lr),
            Variant::Muon => Self::muon(lr),
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    pub fn with_weight_decay(mut self, w: f64) -> Self {
        self.weight_decay = w;
        self
    }

    pub fn with_bias_correction(mut self, on: bool) -> Self {
        self.bias_correction = on;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_aux(mut self, aux: OptimizerConfig) -> Self {
        self.aux = Some(Box::new(aux));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg))
            }
        };
        check(self.lr.is_finite() && self.lr >= 0.0, "lr", "must be finite and >= 0")?;
        check(
            (0.0..1.0).contains(&self.momentum),
            "momentum",
            "must lie in [0, 1)",
        )?;
        check((0.0..1.0).contains(&self.beta1), "beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2", "must lie in [0, 1)")?;
        check(
            self.epsilon.is_finite() && self.epsilon >= 0.0,
            "epsilon",
            "must be finite and >= 0",
        )?;
        check(
            self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            "weight_decay",
            "must be finite and >= 0",
        )?;
        check(
            self.adafactor_delta.is_finite() && self.adafactor_delta >= 0.0,
            "adafactor_delta",
            "must be finite and >= 0",
        )?;
        if let Schedule::WarmupCosine {
            warmup_steps,
            total_steps,
        } = self.schedule
        {
            check(
                total_steps >= warmup_steps && total_steps > 0,
                "schedule",
                "total_steps must be positive and >= warmup_steps",
            )?;
        }
        if self.variant == Variant::Muon {
            check(self.ns_iters >= 1, "ns_iters", "must be at least 1")?;
            let aux = self
                .aux
                .as_deref()
                .ok_or_else(|| Error::config("aux", "muon needs an auxiliary optimizer"))?;
            check(
                aux.variant != Variant::Muon,
                "aux.variant",
                "the auxiliary optimizer cannot itself be muon",
            )?;
            aux.validate()?;
        }
        Ok(())
    }
}

/// Per-tensor optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub enum Slot {
    Empty,
    Momentum(Vec<f64>),
    Moments { m: Vec<f64>, v: Vec<f64> },
    Factored { row: Vec<f64>, col: Vec<f64> },
    SecondMoment(Vec<f64>),
}

impl Slot {
    pub fn element_count(&self) -> usize {
        match self {
            Slot::Empty => 0,
            Slot::Momentum(b) => b.len(),
            Slot::Moments { m, v } => m.len() + v.len(),
            Slot::Factored { row, col } => row.len() + col.len(),
            Slot::SecondMoment(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    step_count: u64,
    layout: Vec<(String, Shape)>,
    slots: Vec<Slot>,
    aux: Option<Box<OptimizerState>>,
}

impl OptimizerState {
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        let i = self.layout.iter().position(|(n, _)| n == name)?;
        Some(&self.slots[i])
    }

    pub fn aux(&self) -> Option<&OptimizerState> {
        self.aux.as_deref()
    }
}

/// Slot a tensor receives under `cfg` (ignores Muon delegation).
fn slot_for(cfg: &OptimizerConfig, shape: Shape, role: Role) -> Result<Slot> {
    let n = shape.numel();
    Ok(match cfg.variant {
        Variant::Sgd if cfg.momentum > 0.0 => Slot::Momentum(vec![0.0; n]),
        Variant::Sgd => Slot::Empty,
        Variant::Adam => Slot::Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        },
        Variant::Adafactor => match shape {
            Shape::Matrix(r, c) => Slot::Factored {
                row: vec![0.0; r],
                col: vec![0.0; c],
            },
            Shape::Vector(n) => Slot::SecondMoment(vec![0.0; n]),
        },
        Variant::Muon => match (role, shape) {
            (Role::Hidden, Shape::Matrix(..)) => Slot::Momentum(vec![0.0; n]),
            (Role::Hidden, Shape::Vector(_)) => {
                return Err(Error::config(
                    "role",
                    "muon cannot train a rank-1 tensor tagged hidden",
                ))
            }
            (Role::Other, _) => Slot::Empty,
        },
    })
}

fn init_state(cfg: &OptimizerConfig, params: &ParamSet) -> Result<OptimizerState> {
    let layout = params
        .iter()
        .map(|p| (p.name.clone(), p.value.shape()))
        .collect();
    let slots = params
        .iter()
        .map(|p| slot_for(cfg, p.value.shape(), p.role))
        .collect::<Result<Vec<_>>>()?;
    let aux = match (cfg.variant, cfg.aux.as_deref()) {
        (Variant::Muon, Some(aux_cfg)) => {
            let slots = params
                .iter()
                .map(|p| match p.role {
                    Role::Hidden => Ok(Slot::Empty),
                    Role::Other => slot_for(aux_cfg, p.value.shape(), p.role),
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Box::new(OptimizerState {
                step_count: 0,
                layout: params
                    .iter()
                    .map(|p| (p.name.clone(), p.value.shape()))
                    .collect(),
                slots,
                aux: None,
            }))
        }
        _ => None,
    };
    Ok(OptimizerState {
        step_count: 0,
        layout,
        slots,
        aux,
    })
}

/// Element counts of optimizer state, per tensor (main + aux) and overall.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateCount {
    pub per_tensor: Vec<(String, usize)>,
    pub total: usize,
}

pub fn state_element_count(state: &OptimizerState) -> StateCount {
    let per_tensor: Vec<(String, usize)> = state
        .layout
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let aux = state.aux.as_ref().map_or(0, |a| a.slots[i].element_count());
            (name.clone(), state.slots[i].element_count() + aux)
        })
        .collect();
    let total = per_tensor.iter().map(|(_, n)| n).sum();
    StateCount { per_tensor, total }
}

/// Closed-form state size for a set of tensor shapes, without allocating.
pub fn state_elements_for(cfg: &OptimizerConfig, tensors: &[(Shape, Role)]) -> Result<u64> {
    fn one(cfg: &OptimizerConfig, shape: Shape, role: Role) -> Result<u64> {
        let n = shape.numel() as u64;
        Ok(match cfg.variant {
            Variant::Sgd => {
                if cfg.momentum > 0.0 {
                    n
                } else {
                    0
                }
            }
            Variant::Adam => 2 * n,
            Variant::Adafactor => match shape {
                Shape::Matrix(r, c) => (r + c) as u64,
                Shape::Vector(n) => n as u64,
            },
            Variant::Muon => match (role, shape) {
                (Role::Hidden, Shape::Matrix(..)) => n,
                (Role::Hidden, Shape::Vector(_)) => {
                    return Err(Error::config(
                        "role",
                        "muon cannot train a rank-1 tensor tagged hidden",
                    ))
                }
                (Role::Other, _) => {
                    let aux = cfg
                        .aux
                        .as_deref()
                        .ok_or_else(|| Error::config("aux", "muon needs an auxiliary optimizer"))?;
                    one(aux, shape, role)?
                }
            },
        })
    }
    tensors.iter().map(|&(s, r)| one(cfg, s, r)).sum()
}

/// An optimizer configuration bound to its state for one parameter set.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        let state = init_state(&cfg, params)?;
        Ok(Optimizer { cfg, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn state_count(&self) -> StateCount {
        state_element_count(&self.state)
    }

    /// Applies one update. Deterministic in (params, grads, config, state).
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) -> Result<()> {
        grads.check_matches(params)?;
        for ((name, shape), p) in self.state.layout.iter().zip(params.iter()) {
            if *name != p.name || *shape != p.value.shape() {
                return Err(Error::Structure(format!(
                    "optimizer state was created for `{name}` {shape}, got `{}` {}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        if self.state.layout.len() != params.len() {
            return Err(Error::Structure(format!(
                "optimizer state has {} tensors, parameter set has {}",
                self.state.layout.len(),
                params.len()
            )));
        }

        self.state.step_count += 1;
        let t = self.state.step_count;
        let cfg = &self.cfg;
        let lr = cfg.lr * cfg.schedule.factor(t);

        match cfg.variant {
            Variant::Muon => {
                let aux_cfg = cfg.aux.as_deref().expect("validated");
                let aux_lr = aux_cfg.lr * aux_cfg.schedule.factor(t);
                let aux_state = self.state.aux.as_deref_mut().expect("muon has aux state");
                aux_state.step_count = t;
                for (i, p) in params.params_mut().iter_mut().enumerate() {
                    let g = grads.tensor(i);
                    match p.role {
                        Role::Hidden => {
                            let Slot::Momentum(buf) = &mut self.state.slots[i] else {
                                unreachable!("hidden tensors carry a momentum buffer")
                            };
                            muon::muon_update(&mut p.value, g, buf, lr, cfg)?;
                        }
                        Role::Other => update_tensor(
                            aux_cfg,
                            aux_lr,
                            t,
                            &mut aux_state.slots[i],
                            p.value.shape(),
                            p.value.data_mut(),
                            g.data(),
                        ),
                    }
                }
            }
            _ => {
                for (i, p) in params.params_mut().iter_mut().enumerate() {
                    let shape = p.value.shape();
                    update_tensor(
                        cfg,
                        lr,
                        t,
                        &mut self.state.slots[i],
                        shape,
                        p.value.data_mut(),
                        grads.tensor(i).data(),
                    );
                }
            }
        }
        Ok(())
    }
}

fn apply_weight_decay(theta: &mut [f64], lr: f64, w: f64) {
    if w > 0.0 {
        let keep = 1.0 - lr * w;
        theta.iter_mut().for_each(|x| *x *= keep);
    }
}

fn update_tensor(
    cfg: &OptimizerConfig,
    lr: f64,
    t: u64,
    slot: &mut Slot,
    shape: Shape,
    theta: &mut [f64],
    g: &[f64],
) {
    apply_weight_decay(theta, lr, cfg.weight_decay);
    match (cfg.variant, slot) {
        (Variant::Sgd, Slot::Momentum(buf)) => sgd::sgd_update(theta, g, Some(buf), lr, cfg.momentum),
        (Variant::Sgd, Slot::Empty) => sgd::sgd_update(theta, g, None, lr, 0.0),
        (Variant::Adam, Slot::Moments { m, v }) => adam::adam_update(
            theta,
            g,
            m,
            v,
            &adam::AdamParams {
                lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                epsilon: cfg.epsilon,
                step: t,
                bias_correction: cfg.bias_correction,
            },
        ),
        (Variant::Adafactor, Slot::Factored { row, col }) => {
            let Shape::Matrix(r, c) = shape else {
                unreachable!("factored slot on a matrix")
            };
            adafactor::factored_update(
                theta,
                g,
                (r, c),
                row,
                col,
                &adafactor::AdafactorParams::from_config(cfg, lr, t),
            )
        }
        (Variant::Adafactor, Slot::SecondMoment(v)) => {
            adafactor::unfactored_update(theta, g, v, &adafactor::AdafactorParams::from_config(cfg, lr, t))
        }
        (variant, slot) => unreachable!("slot {slot:?} does not belong to {variant}"),
    }
}
