//! Static cost accounting: per-layer multiply-accumulate counts, conv-block
//! totals with and without a bottleneck middle layer, the bottleneck
//! reduction ratio, and whole-network totals. All counts are exact integers;
//! ratios are exact rationals.

use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

use crate::model::{conv_layer_plan, ModelConfig, BLOCK_PLAN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCostSpec {
    /// Input feature map spatial dims.
    pub h: u64,
    pub w: u64,
    /// Input channels.
    pub c: u64,
    /// Kernel spatial dims.
    pub r: u64,
    pub q: u64,
    /// Kernel count.
    pub m: u64,
    /// Zero padding per border.
    pub p: u64,
    /// Stride.
    pub s: u64,
}

impl LayerCostSpec {
    pub fn same_3x3(h: u64, w: u64, c: u64, m: u64) -> Self {
        LayerCostSpec {
            h,
            w,
            c,
            r: 3,
            q: 3,
            m,
            p: 1,
            s: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("non-divisible configuration: ({dim} + 2*{p} - {k} + {s}) is not a multiple of stride {s}")]
    NotDivisible { dim: u64, p: u64, k: u64, s: u64 },
    #[error("kernel extent {k} exceeds padded input {dim} + 2*{p}")]
    KernelTooLarge { dim: u64, p: u64, k: u64 },
}

fn out_dim(dim: u64, p: u64, k: u64, s: u64) -> Result<u64, AnalysisError> {
    if dim + 2 * p < k {
        return Err(AnalysisError::KernelTooLarge { dim, p, k });
    }
    let num = dim + 2 * p - k + s;
    if num % s != 0 {
        return Err(AnalysisError::NotDivisible { dim, p, k, s });
    }
    Ok(num / s)
}

/// Multiply-accumulates of one conv layer:
/// `((H+2P-R+S)/S) * ((W+2P-Q+S)/S) * R * Q * C * M`.
pub fn mac_conv(spec: &LayerCostSpec) -> Result<u64, AnalysisError> {
    let oh = out_dim(spec.h, spec.p, spec.r, spec.s)?;
    let ow = out_dim(spec.w, spec.p, spec.q, spec.s)?;
    Ok(oh * ow * spec.r * spec.q * spec.c * spec.m)
}

/// Three-layer conv-block without bottleneck: one `C -> M` layer plus two
/// `M -> M` layers at the same spatial size.
pub fn mac_block_plain(spec: &LayerCostSpec, m: u64) -> Result<u64, AnalysisError> {
    let first = mac_conv(&LayerCostSpec { m, ..*spec })?;
    let inner = mac_conv(&LayerCostSpec {
        c: m,
        m,
        ..*spec
    })?;
    Ok(first + 2 * inner)
}

/// Bottleneck conv-block: `C -> M`, `M -> M_B`, `M_B -> M`. The two inner
/// layers each cost `M_B * M` kernel-channel products.
pub fn mac_block_bottleneck(spec: &LayerCostSpec, m: u64, m_b: u64) -> Result<u64, AnalysisError> {
    let first = mac_conv(&LayerCostSpec { m, ..*spec })?;
    let inner = mac_conv(&LayerCostSpec {
        c: m_b,
        m,
        ..*spec
    })?;
    Ok(first + 2 * inner)
}

/// Computation/storage reduction of a bottleneck block: `(C+2M)/(C+2M_B)`.
pub fn reduction_ratio(c: u64, m: u64, m_b: u64) -> Ratio<u64> {
    Ratio::new(c + 2 * m, c + 2 * m_b)
}

#[derive(Debug, Clone)]
pub struct BlockCost {
    pub name: String,
    pub macs: u64,
    pub macs_without_bottleneck: u64,
    pub ratio: Ratio<u64>,
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub layers: Vec<(String, u64)>,
    pub blocks: Vec<BlockCost>,
    pub total_macs: u64,
    pub trainable_params: u64,
    pub non_trainable_params: u64,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.trainable_params + self.non_trainable_params
    }

    /// Machine-readable key=value lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (name, macs) in &self.layers {
            out.push_str(&format!("layer.{name}.macs={macs}\n"));
        }
        for b in &self.blocks {
            out.push_str(&format!("block.{}.macs={}\n", b.name, b.macs));
            out.push_str(&format!(
                "block.{}.macs_plain={}\n",
                b.name, b.macs_without_bottleneck
            ));
            out.push_str(&format!(
                "block.{}.reduction_ratio={}/{}\n",
                b.name,
                b.ratio.numer(),
                b.ratio.denom()
            ));
        }
        out.push_str(&format!("total.macs={}\n", self.total_macs));
        out.push_str(&format!("params.trainable={}\n", self.trainable_params));
        out.push_str(&format!(
            "params.non_trainable={}\n",
            self.non_trainable_params
        ));
        out.push_str(&format!("params.total={}\n", self.total_params()));
        out
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:>16}", "layer", "MACs")?;
        for (name, macs) in &self.layers {
            writeln!(f, "{name:<22} {macs:>16}")?;
        }
        writeln!(f, "{:<22} {:>16}", "total", self.total_macs)?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<10} {:>14} {:>14} {:>8}",
            "block", "MACs", "plain MACs", "ratio"
        )?;
        for b in &self.blocks {
            writeln!(
                f,
                "{:<10} {:>14} {:>14} {:>8}",
                b.name,
                b.macs,
                b.macs_without_bottleneck,
                format!("{}/{}", b.ratio.numer(), b.ratio.denom())
            )?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "parameters: {} trainable + {} non-trainable = {}",
            self.trainable_params,
            self.non_trainable_params,
            self.total_params()
        )
    }
}

/// Per-layer spatial sizes of the conv stack for a given input size:
/// conv layers keep their input size, pooling ceil-halves it.
fn layer_spatial_sizes(input: u64) -> Vec<u64> {
    let mut sizes = vec![input, input]; // conv1, conv2
    let mut s = input.div_ceil(2);
    for _ in 0..BLOCK_PLAN.len() {
        sizes.extend([s, s, s]);
        s = s.div_ceil(2);
    }
    sizes
}

/// Whole-network cost: every conv layer plus the classifier matrix-vector
/// product (`C*K` MACs). Pooling, batch-norm, ReLU and the global head are
/// excluded; they contribute no multiply-accumulate terms of the same kind.
pub fn network_cost(config: &ModelConfig) -> CostReport {
    let plan = conv_layer_plan();
    let sizes = layer_spatial_sizes(config.input_size as u64);
    let mut layers = Vec::new();
    let mut total = 0u64;
    for ((name, c_in, c_out), &size) in plan.iter().zip(&sizes) {
        let macs = mac_conv(&LayerCostSpec::same_3x3(
            size,
            size,
            *c_in as u64,
            *c_out as u64,
        ))
        .expect("stride-1 same conv is always divisible");
        total += macs;
        layers.push((name.clone(), macs));
    }
    let classifier_macs = config.feature_channels() as u64 * config.num_classes as u64;
    total += classifier_macs;
    layers.push(("classifier".to_string(), classifier_macs));

    let mut blocks = Vec::new();
    let mut c_in = crate::model::STEM_CHANNELS[1] as u64;
    let mut size = config.input_size as u64;
    for (bi, &(m, mb)) in BLOCK_PLAN.iter().enumerate() {
        size = size.div_ceil(2);
        let spec = LayerCostSpec::same_3x3(size, size, c_in, m as u64);
        blocks.push(BlockCost {
            name: format!("block{}", bi + 1),
            macs: mac_block_bottleneck(&spec, m as u64, mb as u64).unwrap(),
            macs_without_bottleneck: mac_block_plain(&spec, m as u64).unwrap(),
            ratio: reduction_ratio(c_in, m as u64, mb as u64),
        });
        c_in = m as u64;
    }

    let (trainable, non_trainable) = static_param_counts(config);
    CostReport {
        layers,
        blocks,
        total_macs: total,
        trainable_params: trainable,
        non_trainable_params: non_trainable,
    }
}

/// Closed-form parameter counts, independent of the built network.
fn static_param_counts(config: &ModelConfig) -> (u64, u64) {
    let mut trainable = 0u64;
    let mut frozen = 0u64;
    for (_, c_in, c_out) in conv_layer_plan() {
        trainable += 9 * c_in as u64 * c_out as u64; // kernel
        trainable += 2 * c_out as u64; // gamma, beta
        frozen += 2 * c_out as u64; // moving stats
    }
    let fc = config.feature_channels() as u64;
    let fs = config.feature_size() as u64;
    trainable += match config.variant {
        crate::model::Variant::A => 0,
        crate::model::Variant::B => fc,
        crate::model::Variant::C => fs * fs * fc,
    };
    trainable += fc * config.num_classes as u64 + config.num_classes as u64;
    (trainable, frozen)
}
