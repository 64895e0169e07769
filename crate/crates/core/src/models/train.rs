use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::Model;
use crate::error::{Error, Result};
use crate::nn::layers::{argmax_rows, softmax_cross_entropy};
use crate::nn::optim::{clip_elementwise, clip_global_norm, AdamState};
use crate::pipeline::WindowSet;
use crate::rng::{mix, stream, stream_rng};

/// How gradients are bounded before each optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipMode {
    GlobalNorm,
    Value,
}

impl FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_norm" => Ok(ClipMode::GlobalNorm),
            "value" => Ok(ClipMode::Value),
            _ => Err(Error::Config(format!("unknown clip mode `{s}` (expected global_norm or value)"))),
        }
    }
}

impl std::fmt::Display for ClipMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClipMode::GlobalNorm => "global_norm",
            ClipMode::Value => "value",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub clip_mode: ClipMode,
    /// Validation accuracy is measured every `eval_every` iterations and
    /// after the last one.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            batch_size: 128,
            iterations: 1500,
            lr: 1e-4,
            max_grad_norm: 10.0,
            clip_mode: ClipMode::GlobalNorm,
            eval_every: 50,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Batch size and iteration count of the original long runs.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 1024,
            iterations: 3000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, iterations and eval_every must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(format!("max_grad_norm must be > 0, got {}", self.max_grad_norm)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    /// Batch loss of every iteration.
    pub losses: Vec<f64>,
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "iteration,train_loss,val_accuracy";

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{TRACE_HEADER}\n");
        for r in &self.rows {
            writeln!(s, "{},{:.6},{:.6}", r.iteration, r.train_loss, r.val_accuracy).unwrap();
        }
        s
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.val_accuracy)
    }
}

/// Draws batches from shuffled passes over the data. A set no larger than
/// the batch is used whole, in order, every iteration.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            batch,
            rng: stream_rng(seed, stream::BATCHES),
        }
    }

    fn next(&mut self) -> Vec<usize> {
        let n = self.order.len();
        if n <= self.batch {
            return self.order.clone();
        }
        if self.pos + self.batch > n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Predicted bins for every window of `set`, in inference mode.
pub fn predict_set(model: &Model, set: &WindowSet) -> Result<Vec<usize>> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let b = set.batch(chunk);
        out.extend(argmax_rows(&model.forward(&b.inputs)?.logits));
    }
    Ok(out)
}

pub fn evaluate_accuracy(model: &Model, set: &WindowSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let pred = predict_set(model, set)?;
    let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / set.len() as f64)
}

pub fn train(model: &mut Model, train_set: &WindowSet, val_set: &WindowSet, hp: &Hyperparams) -> Result<TrainTrace> {
    train_with_callback(model, train_set, val_set, hp, |_| {})
}

/// Mini-batch training: forward, cross-entropy, backward, clip, Adam.
/// `on_row` sees every trace row as it is produced.
pub fn train_with_callback(
    model: &mut Model,
    train_set: &WindowSet,
    val_set: &WindowSet,
    hp: &Hyperparams,
    mut on_row: impl FnMut(&TraceRow),
) -> Result<TrainTrace> {
    train_until(model, train_set, val_set, hp, |r| {
        on_row(r);
        false
    })
}

/// Like [`train_with_callback`], but stops after the first trace row for
/// which `stop` returns true.
pub fn train_until(
    model: &mut Model,
    train_set: &WindowSet,
    val_set: &WindowSet,
    hp: &Hyperparams,
    mut stop: impl FnMut(&TraceRow) -> bool,
) -> Result<TrainTrace> {
    hp.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training split has no windows".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Config("validation split has no windows".into()));
    }
    if train_set.window != model.spec.window || train_set.nodes != model.spec.nodes {
        return Err(Error::shape(
            "training windows",
            &[train_set.window, train_set.nodes],
            &[model.spec.window, model.spec.nodes],
        ));
    }
    let mut sampler = Sampler::new(train_set.len(), hp.batch_size, hp.seed);
    let mut drop_rng = stream_rng(mix(hp.seed, model.spec.kind as u64), stream::DROPOUT);
    let mut adam = AdamState::new(hp.lr, &model.params.values);
    let mut trace = TrainTrace::default();
    let mut since = 0.0;
    let mut count = 0usize;
    for it in 1..=hp.iterations {
        let batch = train_set.batch(&sampler.next());
        let pass = model.forward_train(&batch.inputs, &mut drop_rng)?;
        let (loss, dlogits) = softmax_cross_entropy(&pass.logits, &batch.labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at iteration {it}")));
        }
        let mut grads = model.backward(&pass, &dlogits)?;
        match hp.clip_mode {
            ClipMode::GlobalNorm => {
                clip_global_norm(&mut grads, hp.max_grad_norm)?;
            }
            ClipMode::Value => clip_elementwise(&mut grads, hp.max_grad_norm)?,
        }
        adam.step(&mut model.params.values, &grads)?;
        trace.losses.push(loss);
        since += loss;
        count += 1;
        if it % hp.eval_every == 0 || it == hp.iterations {
            let row = TraceRow {
                iteration: it,
                train_loss: since / count as f64,
                val_accuracy: evaluate_accuracy(model, val_set)?,
            };
            trace.rows.push(row);
            if stop(&row) {
                break;
            }
            since = 0.0;
            count = 0;
        }
    }
    Ok(trace)
}
