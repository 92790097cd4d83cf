//! Offline training of the trigger detector: reverse-mode gradients over the
//! graph IR, binary cross-entropy on the sigmoid output, and Adam.

mod adam;
mod grad;

pub use adam::Adam;
pub use grad::{backward, backward_from};

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{Dataset, LabeledImage};
use crate::graph::{find_io, Graph, IoError, Op};
use crate::interp::{ExecError, Executor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("`{node}` ({op:?}) is not differentiable")]
    NonDifferentiableOp { node: String, op: Op },
    #[error("loss diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("gradient seed for `{0}` does not match the node's value")]
    BadSeed(String),
    #[error("graph has {0} outputs, expected one")]
    NotSingleOutput(usize),
    #[error("detector output must be a Sigmoid of a one-element logit")]
    UnsupportedHead,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset problem: {0}")]
    Dataset(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Compute per-sample gradients on the rayon pool. The reduction order is
    /// fixed, so results are bit-identical to the serial path.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            seed: 0,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Binary classification metrics at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// `tp / (tp + fp)`, or 0 when nothing was predicted positive.
    pub precision: f64,
    pub precision_defined: bool,
    /// `tp / (tp + fn)`, or 0 without positives.
    pub recall: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            precision: ratio(tp, tp + fp),
            precision_defined: tp + fp > 0,
            recall: ratio(tp, tp + fn_),
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean binary cross-entropy over the epoch's training samples.
    pub train_loss: f64,
    pub validation: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Copy of the input graph with trained weights.
    pub detector: Graph,
}

impl TrainReport {
    /// Tab-separated, one row per epoch.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tprecision\trecall\taccuracy\tprecision_defined\n");
        for e in &self.epochs {
            let m = &e.validation;
            writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                e.epoch,
                e.train_loss,
                m.precision,
                m.recall,
                m.accuracy,
                u8::from(m.precision_defined)
            )
            .expect("string write");
        }
        s
    }

    pub fn final_metrics(&self) -> Option<&Metrics> {
        self.epochs.last().map(|e| &e.validation)
    }
}

/// Numerically stable BCE of `sigmoid(z)` against `label`.
pub fn bce_with_logit(z: f32, label: bool) -> f64 {
    let z = z as f64;
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a probability.
pub fn bce(p: f64, label: bool) -> f64 {
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

struct Head {
    input: String,
    logit: usize,
    output: usize,
}

fn head(graph: &Graph) -> Result<Head, TrainError> {
    let io = find_io(graph)?;
    let output = graph.index_of(&io.output_node).expect("found by find_io");
    let out = &graph.nodes[output];
    if out.op != Op::Sigmoid || io.output_shape.iter().product::<usize>() != 1 {
        return Err(TrainError::UnsupportedHead);
    }
    Ok(Head { input: io.input_node, logit: out.inputs[0].node, output })
}

fn const_indices(graph: &Graph) -> Vec<usize> {
    (0..graph.nodes.len()).filter(|&i| graph.nodes[i].op == Op::Const).collect()
}

/// Loss and per-parameter gradients (ordered like `params`) for one sample.
fn sample_grad(
    exec: &Executor<'_>,
    head: &Head,
    params: &[usize],
    sample: &LabeledImage,
) -> Result<(f64, Vec<Vec<f32>>), TrainError> {
    let feeds = HashMap::from([(head.input.clone(), sample.pixels.clone())]);
    let trace = exec.trace(&feeds)?;
    let z = trace.values[head.logit].as_f32().expect("f32")[0];
    let p = trace.values[head.output].as_f32().expect("f32")[0];
    let y = if sample.label { 1.0 } else { 0.0 };
    let seed = Tensor::from_f32(trace.values[head.logit].shape().to_vec(), vec![p - y]).expect("one element");
    let mut grads = backward_from(exec, &trace, vec![(head.logit, seed)])?;
    let per_param = params
        .iter()
        .map(|&i| grads[i].take().unwrap_or_else(|| vec![0.0; trace.values[i].len()]))
        .collect();
    Ok((bce_with_logit(z, sample.label), per_param))
}

/// Trains every `Const` of `detector` (whose output must be a Sigmoid over a
/// scalar logit) on the dataset's training split and evaluates on the
/// validation split after each epoch.
pub fn train(detector: &Graph, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let train_set: Vec<&LabeledImage> = data.train_samples().collect();
    if train_set.is_empty() {
        return Err(TrainError::Dataset("empty training split".into()));
    }
    if train_set.iter().all(|s| s.label) || train_set.iter().all(|s| !s.label) {
        return Err(TrainError::Dataset("training split holds a single class".into()));
    }
    let head = head(detector)?;
    let mut graph = detector.clone();
    let params = const_indices(&graph);
    let mut adam = Adam::new(cfg, params.iter().map(|&i| graph.nodes[i].value.as_ref().map_or(0, Tensor::len)));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let exec = Executor::new(&graph)?;
            let results: Vec<Result<(f64, Vec<Vec<f32>>), TrainError>> = if cfg.parallel {
                batch.par_iter().map(|&k| sample_grad(&exec, &head, &params, train_set[k])).collect()
            } else {
                batch.iter().map(|&k| sample_grad(&exec, &head, &params, train_set[k])).collect()
            };
            let mut total: Option<Vec<Vec<f32>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                match total.as_mut() {
                    None => total = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Divergence { epoch, step });
            }
            loss_sum += batch_loss;
            let mut grads = total.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            drop(exec);
            adam.begin_step();
            for (k, &i) in params.iter().enumerate() {
                let node = &mut graph.nodes[i];
                let w = node.value.as_mut().and_then(|v| v.as_f32_mut().ok()).ok_or_else(|| {
                    TrainError::InvalidConfig(format!("`{}` is not an f32 constant", node.name))
                })?;
                adam.update(k, w, &grads[k]);
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::Divergence { epoch, step });
                }
            }
        }
        let validation = evaluate(&graph, data.validation_samples(), 0.5)?;
        epochs.push(EpochStats { epoch: epoch + 1, train_loss: loss_sum / train_set.len() as f64, validation });
    }
    Ok(TrainReport { epochs, detector: graph })
}

/// Probabilities for each sample, in order.
pub fn predict<'a>(
    detector: &Graph,
    samples: impl IntoIterator<Item = &'a LabeledImage>,
) -> Result<Vec<f32>, TrainError> {
    let exec = Executor::new(detector)?;
    let samples: Vec<&LabeledImage> = samples.into_iter().collect();
    samples
        .par_iter()
        .map(|s| {
            let out = exec.run_single(s.pixels.clone())?;
            Ok(out.as_f32().map_err(|_| TrainError::UnsupportedHead)?[0])
        })
        .collect()
}

/// Thresholds the detector's probability (`p > threshold` is positive).
pub fn evaluate<'a>(
    detector: &Graph,
    samples: impl IntoIterator<Item = &'a LabeledImage>,
    threshold: f32,
) -> Result<Metrics, TrainError> {
    let samples: Vec<&LabeledImage> = samples.into_iter().collect();
    let probs = predict(detector, samples.iter().copied())?;
    Ok(metrics_at(&probs, samples.iter().map(|s| s.label), threshold))
}

pub fn metrics_at(probs: &[f32], labels: impl IntoIterator<Item = bool>, threshold: f32) -> Metrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, label) in probs.iter().zip(labels) {
        match (p > threshold, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Metrics::from_counts(tp, fp, tn, fn_)
}
