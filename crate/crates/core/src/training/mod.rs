//! Maximum-likelihood training of [`StppModel`].
//!
//! The objective is the negative log-likelihood of the event grids under
//! teacher forcing, divided by the number of cells so that values are
//! comparable across grid and clip sizes. Updates use adaptive moment
//! estimates:
//!
//! ```text
//! m = b1 m + (1 - b1) g          v = b2 v + (1 - b2) g^2
//! w -= lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
//! ```
//!
//! with the gradient rescaled to a maximum global norm before each step and
//! the learning rate multiplied by a decay factor every fixed interval.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Sequence, StppModel};
use crate::nn::Bound;
use crate::pointprocess::EventGrid;
use crate::tensor::gradcheck::max_relative_error;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Sequences per step.
    pub batch_size: usize,
    pub iterations: usize,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub seed: u64,
    /// Maximum global gradient norm.
    pub clip_norm: f64,
    /// Frames per training window; `0` uses whole sequences.
    pub window: usize,
    /// Checkpoint period in iterations; `0` disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            iterations: 2000,
            decay_factor: 0.1,
            decay_interval: 800,
            seed: 0,
            clip_norm: 5.0,
            window: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config(format!(
                "decay factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_interval == 0 {
            return Err(Error::config("decay interval must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }

    /// Learning rate in effect at 0-based iteration `k`.
    pub fn learning_rate_at(&self, k: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((k / self.decay_interval) as i32)
    }
}

/// One training sequence with its ground-truth event grids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub sequence: Sequence,
    pub labels: Vec<EventGrid>,
}

impl TrainSample {
    pub fn new(sequence: Sequence, labels: Vec<EventGrid>) -> Result<Self> {
        if labels.len() != sequence.len() {
            return Err(Error::input(format!(
                "{} event grids for {} frames",
                labels.len(),
                sequence.len()
            )));
        }
        if labels
            .iter()
            .any(|l| l.height() != sequence.height() || l.width() != sequence.width())
        {
            return Err(Error::input("event grids and frames differ in size"));
        }
        Ok(TrainSample { sequence, labels })
    }

    /// Frames `start..start + len` with grids renumbered from zero.
    pub fn window(&self, start: usize, len: usize) -> Result<TrainSample> {
        let sequence = self.sequence.window(start, len)?;
        let labels = self.labels[start..start + len]
            .iter()
            .enumerate()
            .map(|(t, g)| EventGrid::from_cells(t, g.height(), g.width(), g.cells().to_vec()))
            .collect::<Result<_>>()?;
        Ok(TrainSample { sequence, labels })
    }

    pub fn cells(&self) -> usize {
        self.sequence.len() * self.sequence.height() * self.sequence.width()
    }
}

/// Per-iteration training loss (mean NLL per cell over the batch).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub values: Vec<f64>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Trailing mean over at most `window` values ending at iteration `k`.
    pub fn smoothed(&self, k: usize, window: usize) -> Option<f64> {
        if k >= self.values.len() || window == 0 {
            return None;
        }
        let start = (k + 1).saturating_sub(window);
        let slice = &self.values[start..=k];
        Some(slice.iter().sum::<f64>() / slice.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,nll\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{k},{v:.12e}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Per-cell NLL of `sample` and its gradient for every parameter.
pub fn loss_and_gradient(model: &StppModel, sample: &TrainSample) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, true);
    let nll = model.nll_graph(&mut g, &p, &sample.sequence, &sample.labels)?;
    let loss = g.scale(nll, 1.0 / sample.cells() as f64)?;
    let value = g.value(loss)[0];
    let grads = g.backward(loss)?;
    let per_param = p
        .vars()
        .iter()
        .map(|&v| grads.get(v).expect("parameter gradient").to_vec())
        .collect();
    Ok((value, per_param))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Tensor]) -> Self {
        Adam {
            m: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (k, t) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in t.data_mut().iter_mut().enumerate() {
                let g = grads[k][i];
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Trains `model` in place and returns the loss trace. Batches are drawn
/// with replacement; with a window, each element is a random window of a
/// random sequence. When `checkpoint` is given and
/// `cfg.checkpoint_every > 0`, the model is saved there periodically.
pub fn train(
    model: &mut StppModel,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<LossTrace> {
    cfg.validate()?;
    let Some(first) = dataset.first() else {
        return Err(Error::input("training set is empty"));
    };
    let (h, w) = (first.sequence.height(), first.sequence.width());
    if dataset
        .iter()
        .any(|s| s.sequence.height() != h || s.sequence.width() != w)
    {
        return Err(Error::input("training sequences differ in grid size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params().tensors());
    let mut trace = LossTrace::default();
    for k in 0..cfg.iterations {
        let mut total = 0.0;
        let mut sum: Vec<Vec<f64>> = model.params().tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for _ in 0..cfg.batch_size {
            let idx = rng.random_range(0..dataset.len());
            let sample = &dataset[idx];
            let len = sample.sequence.len();
            let (loss, grads) = if cfg.window > 0 && cfg.window < len {
                let start = rng.random_range(0..=len - cfg.window);
                loss_and_gradient(model, &sample.window(start, cfg.window)?)
            } else {
                loss_and_gradient(model, sample)
            }
            .map_err(|e| match e {
                Error::Numeric { op, detail } => Error::Numeric {
                    op,
                    detail: format!("iteration {k}, sequence {idx}: {detail}"),
                },
                other => other,
            })?;
            total += loss;
            for (acc, g) in sum.iter_mut().zip(&grads) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        sum.iter_mut().flatten().for_each(|g| *g *= scale);
        let loss = total * scale;
        let norm = global_norm(&sum);
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::numeric(
                "train",
                format!("iteration {k}: loss {loss}, gradient norm {norm}"),
            ));
        }
        if norm > cfg.clip_norm {
            let c = cfg.clip_norm / norm;
            sum.iter_mut().flatten().for_each(|g| *g *= c);
        }
        adam.update(model.params_mut().tensors_mut(), &sum, cfg.learning_rate_at(k));
        trace.values.push(loss);
        if let Some(path) = checkpoint {
            if cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0 {
                model.save(path)?;
            }
        }
    }
    Ok(trace)
}

/// Worst relative error between the analytic gradient of the per-cell NLL
/// and central differences with step `step`, over every parameter.
pub fn gradient_check(model: &StppModel, sample: &TrainSample, step: f64) -> Result<f64> {
    let cells = sample.cells() as f64;
    max_relative_error(model.params().tensors(), step, |g, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let nll = model.nll_graph(g, &p, &sample.sequence, &sample.labels)?;
        g.scale(nll, 1.0 / cells)
    })
}
