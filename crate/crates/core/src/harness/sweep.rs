//! Grids of runs executed on a bounded thread pool. Results are keyed and
//! sorted by config id, so the table does not depend on execution order or
//! on the number of workers.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::config::{set_path, RunConfig};
use super::train::{train, RunOutput};

/// A base config plus axes of values substituted at dotted key paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub base: Value,
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<Value>>,
}

impl GridSpec {
    pub fn new(base: &RunConfig) -> Self {
        GridSpec {
            base: base.to_value(),
            axes: BTreeMap::new(),
        }
    }

    pub fn axis(mut self, path: &str, values: Vec<Value>) -> Self {
        self.axes.insert(path.to_string(), values);
        self
    }

    /// Cartesian product of the axes, in lexicographic axis order.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        let mut points = vec![self.base.clone()];
        for (path, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::config(format!("axes.{path}"), "axis has no values"));
            }
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in values {
                    let mut q = p.clone();
                    set_path(&mut q, path, v.clone())?;
                    next.push(q);
                }
            }
            points = next;
        }
        points
            .into_iter()
            .map(|v| {
                let cfg = RunConfig::from_value(v)?;
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

/// Completed runs shared between sweeps, keyed by config id.
#[derive(Debug, Default)]
pub struct RunCache {
    runs: Mutex<HashMap<String, Arc<RunOutput>>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.lock().expect("run cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn run(&self, cfg: &RunConfig) -> Result<Arc<RunOutput>> {
        let id = cfg.config_id();
        if let Some(hit) = self.runs.lock().expect("run cache lock").get(&id) {
            return Ok(Arc::clone(hit));
        }
        let out = Arc::new(train(cfg)?);
        self.runs
            .lock()
            .expect("run cache lock")
            .insert(id, Arc::clone(&out));
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub config_id: String,
    pub config: RunConfig,
    /// Run errors are kept per row rather than aborting the sweep.
    pub outcome: std::result::Result<Arc<RunOutput>, String>,
    /// Lowest final eval loss among runs sharing variant, B, accum and T.
    pub best_in_slice: bool,
}

impl SweepRow {
    pub fn final_eval_loss(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.final_eval_loss)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| (r.config_id.as_str(), e.as_str())))
    }

    pub fn best(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.best_in_slice)
    }
}

fn slice_key(c: &RunConfig) -> (String, u64, u64, u64) {
    (c.optimizer.variant.to_string(), c.batch_size, c.accum_steps, c.seq_len)
}

/// Losses compare with NaN ranked worst.
pub fn loss_rank(loss: f64) -> f64 {
    if loss.is_nan() {
        f64::INFINITY
    } else {
        loss
    }
}

pub fn sweep(grid: &[RunConfig], jobs: usize, cache: &RunCache) -> Result<SweepTable> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        grid.par_iter()
            .map(|cfg| SweepRow {
                config_id: cfg.config_id(),
                config: cfg.clone(),
                outcome: cache.run(cfg).map_err(|e| e.to_string()),
                best_in_slice: false,
            })
            .collect()
    });
    rows.sort_by(|a, b| a.config_id.cmp(&b.config_id));

    let mut best: BTreeMap<_, (usize, f64)> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if let Some(loss) = row.final_eval_loss() {
            let loss = loss_rank(loss);
            let entry = best.entry(slice_key(&row.config)).or_insert((i, loss));
            if loss < entry.1 {
                *entry = (i, loss);
            }
        }
    }
    for (i, _) in best.into_values() {
        rows[i].best_in_slice = true;
    }
    Ok(SweepTable { rows })
}

/// Learning-rate search on the lattice `center * factor^k`: walks from
/// `center` in the improving direction until the loss stops decreasing.
/// Returns the best learning rate and its final eval loss.
pub fn tune_lr(
    base: &RunConfig,
    center: f64,
    factor: f64,
    max_runs: usize,
    jobs: usize,
    cache: &RunCache,
) -> Result<(f64, f64)> {
    if !(center > 0.0 && factor > 1.0) {
        return Err(Error::config("tune", "center must be positive and factor above 1"));
    }
    let at = |k: i32| {
        let mut c = base.clone();
        c.optimizer.lr = center * factor.powi(k);
        c
    };
    let eval = |ks: &[i32]| -> Result<Vec<f64>> {
        let cfgs: Vec<RunConfig> = ks.iter().map(|&k| at(k)).collect();
        let table = sweep(&cfgs, jobs, cache)?;
        let by_id: HashMap<&str, f64> = table
            .rows
            .iter()
            .map(|r| (r.config_id.as_str(), r.final_eval_loss().map_or(f64::INFINITY, loss_rank)))
            .collect();
        Ok(cfgs.iter().map(|c| by_id[c.config_id().as_str()]).collect())
    };
    let first = eval(&[-1, 0, 1])?;
    let mut best_k = (-1..=1)
        .zip(&first)
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("three candidates");
    let mut best_loss = first[(best_k + 1) as usize];
    let mut runs = 3;
    if best_k != 0 {
        let dir = best_k;
        while runs < max_runs {
            let loss = eval(&[best_k + dir])?[0];
            runs += 1;
            if loss < best_loss {
                best_k += dir;
                best_loss = loss;
            } else {
                break;
            }
        }
    }
    Ok((at(best_k).optimizer.lr, best_loss))
}
