//! Model A/B/C assembly, parameter accounting, and the full-network
//! forward/backward passes.
//!
//! All three variants share the same conv stack (two stem conv layers, four
//! bottleneck conv blocks, average pooling between) and differ only in the
//! global pooling head: A uses plain spatial averaging, B a per-channel
//! scaling of the spatial sum, C a per-position weighting.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::layers::{
    relu, relu_backward, AvgPool, BatchNorm, BnCache, Conv2d, DenseSoftmax, Dropout, HeadKind,
    LayerError, Mode, PoolingHead,
};
use crate::tensor::{Scalar, Tensor, TensorError};

/// Stem conv channel widths, then `(block output M, bottleneck M_B)` per block.
pub const STEM_CHANNELS: [usize; 2] = [64, 64];
pub const BLOCK_PLAN: [(usize, usize); 4] = [(96, 64), (128, 96), (256, 192), (448, 256)];

pub const DEFAULT_INPUT_SIZE: usize = 96;
pub const DEFAULT_BN_EPS: f64 = 1e-3;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    A,
    B,
    C,
}

impl Variant {
    pub fn head_kind(self) -> HeadKind {
        match self {
            Variant::A => HeadKind::Gap,
            Variant::B => HeadKind::Gwoap,
            Variant::C => HeadKind::Gwap,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::A => 0,
            Variant::B => 1,
            Variant::C => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::A),
            1 => Some(Variant::B),
            2 => Some(Variant::C),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::A => write!(f, "A"),
            Variant::B => write!(f, "B"),
            Variant::C => write!(f, "C"),
        }
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Variant::A),
            "B" => Ok(Variant::B),
            "C" => Ok(Variant::C),
            other => Err(format!("unknown variant '{other}', expected A, B or C")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_classes: usize,
    pub input_size: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant, num_classes: usize) -> Self {
        ModelConfig {
            variant,
            num_classes,
            input_size: DEFAULT_INPUT_SIZE,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            dropout: DEFAULT_DROPOUT,
        }
    }

    /// Spatial side of the feature map entering the pooling head
    /// (four ceil-halvings of the input size).
    pub fn feature_size(&self) -> usize {
        let mut s = self.input_size;
        for _ in 0..4 {
            s = s.div_ceil(2);
        }
        s
    }

    pub fn feature_channels(&self) -> usize {
        BLOCK_PLAN[BLOCK_PLAN.len() - 1].0
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes < 2 {
            return Err(ModelError::BadConfig(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.feature_size() < 1 || self.input_size < 16 {
            return Err(ModelError::BadConfig(format!(
                "input size {} is not reducible to a valid feature map",
                self.input_size
            )));
        }
        if self.bn_eps <= 0.0 || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(ModelError::BadConfig(
                "bn_eps must be > 0 and bn_momentum in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input shape {got:?} does not match expected {expected:?}")]
    InputShape { got: Vec<usize>, expected: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// One conv layer with its batch-norm; ReLU follows.
#[derive(Debug, Clone)]
pub struct ConvUnit<T: Scalar> {
    pub name: String,
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    pub config: ModelConfig,
    units: Vec<ConvUnit<T>>,
    /// Unit indices after which a 3x3/2 average pool runs.
    pool_after: Vec<usize>,
    pub head: PoolingHead<T>,
    pub dropout: Dropout,
    pub classifier: DenseSoftmax<T>,
}

/// A parameter visited by `visit_params`.
pub struct ParamInfo<'a, T: Scalar> {
    pub name: String,
    pub tensor: &'a Tensor<T>,
    pub trainable: bool,
    /// Whether L2 regularization applies (multiplicative weights only).
    pub regularized: bool,
}

/// Gradients for every trainable parameter, in `visit_params` order.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub by_name: Vec<(String, Tensor<T>)>,
}

/// Everything the backward pass and the activation-map path need from a
/// forward pass.
pub struct ForwardCache<T: Scalar> {
    unit_inputs: Vec<Tensor<T>>,
    bn_caches: Vec<BnCache<T>>,
    pool_input_shapes: Vec<Vec<usize>>,
    /// Last conv output, `N x h x w x C`, pre-head.
    pub features: Tensor<T>,
    pub pooled: Tensor<T>,
    dropout_mask: Option<Vec<bool>>,
    classifier_input: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Feature map of one sample as `h x w x C`.
    pub fn feature_map(&self, sample: usize) -> Tensor<T> {
        let s = self.features.shape();
        let (h, w, c) = (s[1], s[2], s[3]);
        let per = h * w * c;
        Tensor::new(
            &[h, w, c],
            self.features.data()[sample * per..(sample + 1) * per].to_vec(),
        )
        .unwrap()
    }
}

/// Layer plan shared by model building and cost analysis:
/// `(name, in_channels, out_channels)` for every conv layer in order.
pub fn conv_layer_plan() -> Vec<(String, usize, usize)> {
    let mut plan = Vec::new();
    plan.push(("conv1".to_string(), 1, STEM_CHANNELS[0]));
    plan.push(("conv2".to_string(), STEM_CHANNELS[0], STEM_CHANNELS[1]));
    let mut c_in = STEM_CHANNELS[1];
    for (bi, &(m, mb)) in BLOCK_PLAN.iter().enumerate() {
        let b = bi + 1;
        plan.push((format!("block{b}.conv1"), c_in, m));
        plan.push((format!("block{b}.conv2"), m, mb));
        plan.push((format!("block{b}.conv3"), mb, m));
        c_in = m;
    }
    plan
}

/// Builds a freshly initialized network: He-normal conv kernels, unit BN
/// gamma / zero beta, classifier weights drawn with standard deviation 0.001
/// and zero bias, pooling-head kernels set to 1. Deterministic given `seed`.
pub fn build<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Network<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::new();
    for (name, c_in, c_out) in conv_layer_plan() {
        let fan_in = 3 * 3 * c_in;
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let kernel = Tensor::from_fn(&[3, 3, c_in, c_out], |_| T::from_f64(dist.sample(&mut rng)));
        units.push(ConvUnit {
            name,
            conv: Conv2d::new(kernel)?,
            bn: BatchNorm::new(
                c_out,
                T::from_f64(config.bn_eps),
                T::from_f64(config.bn_momentum),
            ),
        });
    }
    let (fh, fc) = (config.feature_size(), config.feature_channels());
    let head = match config.variant.head_kind() {
        HeadKind::Gap => PoolingHead::Gap,
        HeadKind::Gwoap => PoolingHead::Gwoap {
            kernel: Tensor::full(&[fc], T::one()),
        },
        HeadKind::Gwap => PoolingHead::Gwap {
            kernel: Tensor::full(&[fh, fh, fc], T::one()),
        },
    };
    let cls_dist = Normal::new(0.0, 0.001).unwrap();
    let classifier = DenseSoftmax {
        weights: Tensor::from_fn(&[fc, config.num_classes], |_| {
            T::from_f64(cls_dist.sample(&mut rng))
        }),
        bias: Tensor::zeros(&[config.num_classes]),
    };
    Ok(Network {
        config: config.clone(),
        units,
        pool_after: vec![1, 4, 7, 10],
        head,
        dropout: Dropout::new(config.dropout, seed ^ 0xD80_D80),
        classifier,
    })
}

impl<T: Scalar> Network<T> {
    pub fn units(&self) -> &[ConvUnit<T>] {
        &self.units
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(ParamInfo<'_, T>)) {
        for u in &self.units {
            f(ParamInfo {
                name: format!("{}.kernel", u.name),
                tensor: &u.conv.kernel,
                trainable: true,
                regularized: true,
            });
            for (field, tensor, trainable) in [
                ("bn.gamma", &u.bn.gamma, true),
                ("bn.beta", &u.bn.beta, true),
                ("bn.moving_mean", &u.bn.moving_mean, false),
                ("bn.moving_var", &u.bn.moving_var, false),
            ] {
                f(ParamInfo {
                    name: format!("{}.{field}", u.name),
                    tensor,
                    trainable,
                    regularized: false,
                });
            }
        }
        if let Some(kernel) = self.head.kernel() {
            f(ParamInfo {
                name: "head.kernel".to_string(),
                tensor: kernel,
                trainable: true,
                regularized: true,
            });
        }
        f(ParamInfo {
            name: "classifier.weights".to_string(),
            tensor: &self.classifier.weights,
            trainable: true,
            regularized: true,
        });
        f(ParamInfo {
            name: "classifier.bias".to_string(),
            tensor: &self.classifier.bias,
            trainable: true,
            regularized: false,
        });
    }

    /// Mutable visit over every parameter, same order and naming as
    /// `visit_params`.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, bool, bool)) {
        for u in &mut self.units {
            f(&format!("{}.kernel", u.name), &mut u.conv.kernel, true, true);
            f(&format!("{}.bn.gamma", u.name), &mut u.bn.gamma, true, false);
            f(&format!("{}.bn.beta", u.name), &mut u.bn.beta, true, false);
            f(
                &format!("{}.bn.moving_mean", u.name),
                &mut u.bn.moving_mean,
                false,
                false,
            );
            f(
                &format!("{}.bn.moving_var", u.name),
                &mut u.bn.moving_var,
                false,
                false,
            );
        }
        let head_kernel = match &mut self.head {
            PoolingHead::Gap => None,
            PoolingHead::Gwoap { kernel } | PoolingHead::Gwap { kernel } => Some(kernel),
        };
        if let Some(kernel) = head_kernel {
            f("head.kernel", kernel, true, true);
        }
        f(
            "classifier.weights",
            &mut self.classifier.weights,
            true,
            true,
        );
        f("classifier.bias", &mut self.classifier.bias, true, false);
    }

    /// `(trainable, non_trainable, total)` parameter counts. BN moving
    /// statistics are the non-trainable part.
    pub fn param_count(&self) -> (usize, usize, usize) {
        let mut trainable = 0;
        let mut frozen = 0;
        self.visit_params(&mut |p| {
            if p.trainable {
                trainable += p.tensor.len();
            } else {
                frozen += p.tensor.len();
            }
        });
        (trainable, frozen, trainable + frozen)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), ModelError> {
        let s = self.config.input_size;
        if x.rank() != 4 || x.shape()[1] != s || x.shape()[2] != s || x.shape()[3] != 1 {
            return Err(ModelError::InputShape {
                got: x.shape().to_vec(),
                expected: vec![x.shape().first().copied().unwrap_or(0), s, s, 1],
            });
        }
        Ok(())
    }

    /// Inference pass. Read-only; batch-norm uses moving statistics and
    /// dropout is the identity. Returns logits, probs and the pre-head
    /// feature maps.
    pub fn forward_infer(
        &self,
        x: &Tensor<T>,
        zero_softmax_bias: bool,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), ModelError> {
        self.check_input(x)?;
        let mut act = x.clone();
        for (i, u) in self.units.iter().enumerate() {
            act = relu(&u.bn.forward_infer(&u.conv.forward(&act)?)?);
            if self.pool_after.contains(&i) {
                act = AvgPool.forward(&act)?;
            }
        }
        let features = act;
        let n = features.shape()[0];
        let c = features.shape()[3];
        let mut pooled = Tensor::zeros(&[n, c]);
        for ni in 0..n {
            let per = features.len() / n;
            let fm = Tensor::new(
                &features.shape()[1..],
                features.data()[ni * per..(ni + 1) * per].to_vec(),
            )?;
            let v = self.head.forward(&fm)?;
            pooled.data_mut()[ni * c..(ni + 1) * c].copy_from_slice(v.data());
        }
        let (logits, probs) = self.classifier.forward(&pooled, zero_softmax_bias)?;
        Ok((logits, probs, features))
    }

    /// Training pass: batch statistics, moving-stat updates, dropout.
    /// `dropout_salt` pins the dropout mask for reproducibility.
    pub fn forward_train(
        &mut self,
        x: &Tensor<T>,
        dropout_salt: u64,
    ) -> Result<(Tensor<T>, ForwardCache<T>), ModelError> {
        self.check_input(x)?;
        let mut unit_inputs = Vec::with_capacity(self.units.len());
        let mut bn_caches = Vec::with_capacity(self.units.len());
        let mut pool_input_shapes = Vec::new();
        let pool_after = self.pool_after.clone();
        let mut act = x.clone();
        for (i, u) in self.units.iter_mut().enumerate() {
            unit_inputs.push(act.clone());
            let conv_out = u.conv.forward(&act)?;
            let (bn_out, bn_cache) = u.bn.forward_train(&conv_out)?;
            bn_caches.push(bn_cache);
            act = relu(&bn_out);
            if pool_after.contains(&i) {
                pool_input_shapes.push(act.shape().to_vec());
                act = AvgPool.forward(&act)?;
            }
        }
        let features = act;
        let n = features.shape()[0];
        let c = features.shape()[3];
        let mut pooled = Tensor::zeros(&[n, c]);
        for ni in 0..n {
            let per = features.len() / n;
            let fm = Tensor::new(
                &features.shape()[1..],
                features.data()[ni * per..(ni + 1) * per].to_vec(),
            )?;
            let v = self.head.forward(&fm)?;
            pooled.data_mut()[ni * c..(ni + 1) * c].copy_from_slice(v.data());
        }
        let (dropped, dropout_mask) = self.dropout.forward(&pooled, Mode::Train, dropout_salt);
        let (logits, probs) = self.classifier.forward(&dropped, false)?;
        Ok((
            logits.clone(),
            ForwardCache {
                unit_inputs,
                bn_caches,
                pool_input_shapes,
                features,
                pooled,
                dropout_mask,
                classifier_input: dropped,
                probs,
            },
        ))
    }

    /// Re-estimates every BN layer's moving statistics at the current
    /// weights by averaging batch statistics over the given batches.
    ///
    /// The training-time moving average cannot track a short run: at desk
    /// scale an epoch is a few dozen batches, well inside the 0.99 EMA
    /// horizon, so inference statistics lag the weights by whole epochs.
    /// Resetting the warmup counter turns the EMA back into a cumulative
    /// average for the refresh batches.
    pub fn refresh_bn_stats(&mut self, batches: &[Tensor<T>]) -> Result<(), ModelError> {
        if batches.is_empty() {
            return Ok(());
        }
        for u in self.units.iter_mut() {
            u.bn.batches_seen = 0;
        }
        for b in batches {
            self.forward_train(b, 0)?;
        }
        Ok(())
    }

    /// Backpropagates `d(loss)/d(logits)` through the whole network and
    /// returns gradients for every trainable parameter.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<Gradients<T>, ModelError> {
        let (grad_cls_in, grad_w, grad_b) = self
            .classifier
            .backward(&cache.classifier_input, grad_logits)?;
        let grad_pooled = self
            .dropout
            .backward(&grad_cls_in, cache.dropout_mask.as_ref());

        // head backward per sample, kernel grads summed over the batch
        let n = cache.features.shape()[0];
        let c = cache.features.shape()[3];
        let per = cache.features.len() / n;
        let mut grad_feat = Tensor::zeros(cache.features.shape());
        let mut grad_head_kernel: Option<Tensor<T>> = None;
        for ni in 0..n {
            let fm = cache.feature_map(ni);
            let g = Tensor::new(&[c], grad_pooled.data()[ni * c..(ni + 1) * c].to_vec())?;
            let (gf, gk) = self.head.backward(&fm, &g)?;
            grad_feat.data_mut()[ni * per..(ni + 1) * per].copy_from_slice(gf.data());
            if let Some(gk) = gk {
                match &mut grad_head_kernel {
                    None => grad_head_kernel = Some(gk),
                    Some(acc) => {
                        for (a, &v) in acc.data_mut().iter_mut().zip(gk.data()) {
                            *a += v;
                        }
                    }
                }
            }
        }

        let mut by_name: Vec<(String, Tensor<T>)> = Vec::new();
        let mut grad = grad_feat;
        let mut pool_shapes = cache.pool_input_shapes.iter().rev();
        for (i, u) in self.units.iter().enumerate().rev() {
            if self.pool_after.contains(&i) {
                let shape = pool_shapes.next().expect("pool cache aligned");
                grad = AvgPool.backward(shape, &grad)?;
            }
            // recompute the BN output to mask the ReLU gradient
            let bn_cache = &cache.bn_caches[i];
            let c = u.bn.channels();
            let mut bn_out = bn_cache.xhat.clone();
            let gamma = u.bn.gamma.data();
            let beta = u.bn.beta.data();
            for row in bn_out.data_mut().chunks_exact_mut(c) {
                for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
                    *v = g * *v + b;
                }
            }
            let grad_bn_out = relu_backward(&bn_out, &grad);
            let (grad_conv_out, grad_gamma, grad_beta) = u.bn.backward(bn_cache, &grad_bn_out)?;
            let (grad_in, grad_kernel) = u.conv.backward(&cache.unit_inputs[i], &grad_conv_out)?;
            by_name.push((format!("{}.bn.beta", u.name), grad_beta));
            by_name.push((format!("{}.bn.gamma", u.name), grad_gamma));
            by_name.push((format!("{}.kernel", u.name), grad_kernel));
            grad = grad_in;
        }
        by_name.reverse();
        if let Some(gk) = grad_head_kernel {
            by_name.push(("head.kernel".to_string(), gk));
        }
        by_name.push(("classifier.weights".to_string(), grad_w));
        by_name.push(("classifier.bias".to_string(), grad_b));

        // canonical ordering: match visit_params over trainables
        let mut order = Vec::new();
        self.visit_params(&mut |p| {
            if p.trainable {
                order.push(p.name);
            }
        });
        by_name.sort_by_key(|(name, _)| {
            order
                .iter()
                .position(|n| n == name)
                .expect("gradient name registered")
        });
        Ok(Gradients { by_name })
    }
}
