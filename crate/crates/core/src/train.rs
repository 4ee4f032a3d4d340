//! SGD-with-momentum training recipe: cross-entropy + L2 loss, velocity-form
//! momentum updates, the drop-on-plateau learning-rate schedule, top-k
//! evaluation, and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Sample;
use crate::model::{Gradients, ModelError, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub l2_lambda: f64,
    pub lr_decay_factor: f64,
    pub seed: u64,
    /// Stop early once validation top-1 reaches this value (end of epoch).
    pub target_val_acc: Option<f64>,
    /// Rescale gradients whose global L2 norm exceeds this threshold. The
    /// weighted-sum pooling heads (kernels initialized to 1) feed the
    /// classifier feature magnitudes on the order of the spatial area, so the
    /// first gradient steps at the initial learning rate are large enough to
    /// diverge without clipping.
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 0.1,
            momentum: 0.9,
            batch_size: 256,
            max_epochs: 40,
            l2_lambda: 0.001,
            lr_decay_factor: 10.0,
            seed: 0,
            target_val_acc: None,
            grad_clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr_initial > 0.0) {
            return Err("lr_initial must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err("momentum must be in [0,1)".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err("batch_size and max_epochs must be positive".into());
        }
        if self.l2_lambda < 0.0 || !(self.lr_decay_factor > 1.0) {
            return Err("l2_lambda must be >= 0 and lr_decay_factor > 1".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err("grad_clip_norm must be positive".into());
            }
        }
        Ok(())
    }
}

/// Batches used to re-estimate BN moving statistics at each epoch end.
const BN_REFRESH_BATCHES: usize = 8;

/// Per-parameter momentum buffers plus schedule state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    /// One velocity tensor per trainable parameter, in registry order.
    pub velocity: Vec<(String, Tensor<f32>)>,
    pub lr: f64,
    pub best_train_acc: f64,
    pub epochs_done: usize,
}

impl OptimizerState {
    pub fn new(net: &Network<f32>, config: &TrainConfig) -> Self {
        let mut velocity = Vec::new();
        net.visit_params(&mut |p| {
            if p.trainable {
                velocity.push((p.name, Tensor::zeros(p.tensor.shape())));
            }
        });
        OptimizerState {
            velocity,
            lr: config.lr_initial,
            best_train_acc: 0.0,
            epochs_done: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch={} lr={} loss={:.6} train_acc={:.4} val_acc={:.4}",
            self.epoch, self.lr, self.loss, self.train_acc, self.val_acc
        )
    }
}

const PROB_FLOOR: f64 = 1e-7;

/// Mean negative log-likelihood plus `(l2_lambda/2)·Σ‖w‖²` over regularized
/// parameters. Probabilities are clamped to `[1e-7, 1 − 1e-7]`.
pub fn loss(
    probs: &Tensor<f32>,
    labels: &[usize],
    net: &Network<f32>,
    l2_lambda: f64,
) -> Result<f64, ModelError> {
    let n = probs.shape()[0];
    let k = probs.shape()[1];
    assert_eq!(labels.len(), n, "one label per row");
    let mut nll = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(ModelError::LabelOutOfRange { label, classes: k });
        }
        let p = (probs.data()[i * k + label] as f64).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        nll -= p.ln();
    }
    let mut penalty = 0.0f64;
    if l2_lambda > 0.0 {
        net.visit_params(&mut |p| {
            if p.regularized {
                penalty += p.tensor.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            }
        });
    }
    Ok(nll / n as f64 + 0.5 * l2_lambda * penalty)
}

/// `v ← momentum·v − lr·(grad + λ·w)` (λ only on regularized parameters),
/// then `w ← w + v`.
pub fn sgd_step(
    net: &mut Network<f32>,
    grads: &Gradients<f32>,
    state: &mut OptimizerState,
    config: &TrainConfig,
) {
    let lr = state.lr as f32;
    let momentum = config.momentum as f32;
    let lambda = config.l2_lambda as f32;
    let mut idx = 0;
    let velocity = &mut state.velocity;
    net.visit_params_mut(&mut |name, w, trainable, regularized| {
        if !trainable {
            return;
        }
        let (grad_name, grad) = &grads.by_name[idx];
        let (vel_name, vel) = &mut velocity[idx];
        debug_assert_eq!(grad_name, name);
        debug_assert_eq!(vel_name, name);
        debug_assert_eq!(grad.shape(), w.shape());
        let decay = if regularized { lambda } else { 0.0 };
        for ((wv, vv), &gv) in w
            .data_mut()
            .iter_mut()
            .zip(vel.data_mut())
            .zip(grad.data())
        {
            *vv = momentum * *vv - lr * (gv + decay * *wv);
            *wv += *vv;
        }
        idx += 1;
    });
    debug_assert_eq!(idx, grads.by_name.len());
}

/// Rescales all gradients by `max_norm / ‖g‖` when the global L2 norm `‖g‖`
/// (across every trainable parameter) exceeds `max_norm`. Returns the
/// pre-clip norm.
pub fn clip_grads(grads: &mut Gradients<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .by_name
        .iter()
        .map(|(_, t)| t.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for (_, t) in &mut grads.by_name {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Divide after epoch 1 unconditionally; after that, divide whenever the
/// epoch's training accuracy did not strictly exceed the best seen so far.
pub fn lr_schedule(state: &mut OptimizerState, config: &TrainConfig, epoch_train_acc: f64) {
    state.epochs_done += 1;
    if state.epochs_done == 1 {
        state.lr /= config.lr_decay_factor;
    } else if epoch_train_acc <= state.best_train_acc {
        state.lr /= config.lr_decay_factor;
    }
    if epoch_train_acc > state.best_train_acc {
        state.best_train_acc = epoch_train_acc;
    }
}

fn top_k_hit(logits: &[f32], label: usize, k: usize) -> bool {
    // rank = number of classes strictly better, ties going to lower index
    let target = logits[label];
    let mut rank = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > target || (v == target && i < label) {
            rank += 1;
        }
    }
    rank < k
}

const EVAL_CHUNK: usize = 64;

fn evaluate_impl(
    net: &Network<f32>,
    dataset: &[Sample],
    k_values: &[usize],
    zero_bias: bool,
) -> Result<Vec<f64>, ModelError> {
    assert!(!dataset.is_empty(), "evaluate needs a non-empty dataset");
    let classes = net.classifier.classes();
    for &k in k_values {
        assert!(k >= 1 && k <= classes, "k must lie in [1, num_classes]");
    }
    let size = net.config.input_size;
    let per_chunk = |chunk: &[Sample]| -> Result<Vec<usize>, ModelError> {
        let n = chunk.len();
        let mut batch = Tensor::zeros(&[n, size, size, 1]);
        let per = size * size;
        for (i, s) in chunk.iter().enumerate() {
            batch.data_mut()[i * per..(i + 1) * per].copy_from_slice(s.image.data());
        }
        let (logits, _, _) = net.forward_infer(&batch, zero_bias)?;
        let mut hits = vec![0usize; k_values.len()];
        for (i, s) in chunk.iter().enumerate() {
            let row = &logits.data()[i * classes..(i + 1) * classes];
            for (hi, &k) in k_values.iter().enumerate() {
                if top_k_hit(row, s.label, k) {
                    hits[hi] += 1;
                }
            }
        }
        Ok(hits)
    };
    // chunk-parallel; the reduction is an integer sum, so the result is
    // identical regardless of thread count
    let chunk_hits: Result<Vec<Vec<usize>>, ModelError> = dataset
        .par_chunks(EVAL_CHUNK)
        .map(per_chunk)
        .collect();
    let mut hits = vec![0usize; k_values.len()];
    for chunk in chunk_hits? {
        for (h, c) in hits.iter_mut().zip(chunk) {
            *h += c;
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| h as f64 / dataset.len() as f64)
        .collect())
}

/// Top-k accuracy for each requested k, with ties broken by lower class
/// index. Inference mode, stored softmax bias.
pub fn evaluate(
    net: &Network<f32>,
    dataset: &[Sample],
    k_values: &[usize],
) -> Result<Vec<f64>, ModelError> {
    evaluate_impl(net, dataset, k_values, false)
}

/// `evaluate` with an optional zeroed softmax bias (bias-effect probes).
pub fn evaluate_with_bias(
    net: &Network<f32>,
    dataset: &[Sample],
    k_values: &[usize],
    zero_bias: bool,
) -> Result<Vec<f64>, ModelError> {
    evaluate_impl(net, dataset, k_values, zero_bias)
}

/// Full recipe: seeded shuffle each epoch, minibatch SGD, schedule update,
/// and an `EpochLog` per epoch. Stops early when `target_val_acc` is met,
/// but never before epoch 2 so the unconditional epoch-1 LR decay always
/// appears in the log.
pub fn train_loop(
    net: &mut Network<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, ModelError> {
    assert!(!train_set.is_empty(), "training set must be non-empty");
    config.validate().expect("valid train config");
    let mut state = OptimizerState::new(net, config);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = net.config.input_size;
    let per = size * size;
    let classes = net.classifier.classes();
    let mut logs = Vec::new();
    let mut salt: u64 = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        for batch_ids in order.chunks(config.batch_size) {
            let n = batch_ids.len();
            if n < 2 {
                // batch norm needs at least two samples of statistics
                continue;
            }
            let mut batch = Tensor::zeros(&[n, size, size, 1]);
            let mut labels = Vec::with_capacity(n);
            for (i, &id) in batch_ids.iter().enumerate() {
                batch.data_mut()[i * per..(i + 1) * per]
                    .copy_from_slice(train_set[id].image.data());
                labels.push(train_set[id].label);
            }
            salt += 1;
            let (logits, cache) = net.forward_train(&batch, salt)?;
            let batch_loss = loss(&cache.probs, &labels, net, config.l2_lambda)?;
            epoch_loss += batch_loss * n as f64;
            for (i, &label) in labels.iter().enumerate() {
                let row = &logits.data()[i * classes..(i + 1) * classes];
                if top_k_hit(row, label, 1) {
                    correct += 1;
                }
            }
            // d(mean NLL)/d(logits) = (probs − one_hot) / N
            let inv_n = 1.0f32 / n as f32;
            let mut grad_logits = cache.probs.clone();
            for (i, &label) in labels.iter().enumerate() {
                grad_logits.data_mut()[i * classes + label] -= 1.0;
            }
            for v in grad_logits.data_mut() {
                *v *= inv_n;
            }
            let mut grads = net.backward(&cache, &grad_logits)?;
            if let Some(max_norm) = config.grad_clip_norm {
                clip_grads(&mut grads, max_norm);
            }
            sgd_step(net, &grads, &mut state, config);
        }
        let train_acc = correct as f64 / train_set.len() as f64;
        // moving statistics lag a short epoch badly; re-estimate them at the
        // final weights before validating
        let refresh: Vec<Tensor<f32>> = order
            .chunks(config.batch_size)
            .filter(|ids| ids.len() >= 2)
            .take(BN_REFRESH_BATCHES)
            .map(|ids| {
                let mut batch = Tensor::zeros(&[ids.len(), size, size, 1]);
                for (i, &id) in ids.iter().enumerate() {
                    batch.data_mut()[i * per..(i + 1) * per]
                        .copy_from_slice(train_set[id].image.data());
                }
                batch
            })
            .collect();
        net.refresh_bn_stats(&refresh)?;
        let val_acc = if val_set.is_empty() {
            f64::NAN
        } else {
            evaluate(net, val_set, &[1])?[0]
        };
        let lr_used = state.lr;
        lr_schedule(&mut state, config, train_acc);
        let log = EpochLog {
            epoch,
            lr: lr_used,
            loss: epoch_loss / train_set.len() as f64,
            train_acc,
            val_acc,
        };
        on_epoch(&log);
        logs.push(log);
        if let Some(target) = config.target_val_acc {
            if epoch >= 2 && val_acc >= target {
                break;
            }
        }
    }
    Ok(logs)
}
