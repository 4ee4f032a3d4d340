//! Class activation maps.
//!
//! The map for the predicted class is the channel-weighted sum of the last
//! conv output, using the classifier weight column of that class; for the
//! weighted pooling heads the feature map is first scaled by the head
//! kernel. The softmax bias is ignored throughout this path.

use std::io;
use std::path::{Path, PathBuf};

use crate::data::Sample;
use crate::interp::bilinear_resize;
use crate::layers::PoolingHead;
use crate::model::{ModelError, Network};
use crate::pgm::write_pgm;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CamResult {
    pub predicted_class: usize,
    /// Raw signed map at feature-map resolution (`h x w`, 6 x 6 at 96 input).
    pub raw_map: Tensor<f32>,
    /// Bilinear upsample of `raw_map` to the input size.
    pub upsampled_map: Tensor<f32>,
    /// Min-max normalized upsample in [0,1]; all-zero for a constant map.
    pub normalized_map: Tensor<f32>,
}

/// Bilinear upsample of a rank-2 map.
pub fn bilinear_upsample(map: &Tensor<f32>, target: (usize, usize)) -> Tensor<f32> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let out = bilinear_resize(map.data(), h, w, target.0, target.1);
    Tensor::new(&[target.0, target.1], out).unwrap()
}

fn min_max_normalize(map: &Tensor<f32>) -> Tensor<f32> {
    let lo = map.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = map.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if hi - lo <= 0.0 {
        return Tensor::zeros(map.shape());
    }
    map.map(|v| (v - lo) / (hi - lo))
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs a zero-bias forward pass, picks the predicted class, and contracts
/// the (head-scaled) feature map against that class's classifier weights.
pub fn compute_cam(net: &Network<f32>, sample: &Sample) -> Result<CamResult, ModelError> {
    let input_size = net.config.input_size;
    let image = sample.image.clone().reshaped(&[1, input_size, input_size, 1])?;
    let (logits, _, features) = net.forward_infer(&image, true)?;
    let predicted = argmax(logits.data());

    let (h, w, c) = (
        features.shape()[1],
        features.shape()[2],
        features.shape()[3],
    );
    let feat = Tensor::new(&[h, w, c], features.data().to_vec())?;
    let scaled = match &net.head {
        PoolingHead::Gap => feat,
        PoolingHead::Gwoap { kernel } => {
            let broadcast = kernel.clone().reshaped(&[1, 1, c])?;
            feat.elementwise_mul(&broadcast)?
        }
        PoolingHead::Gwap { kernel } => feat.elementwise_mul(kernel)?,
    };

    let k = net.classifier.classes();
    let column: Vec<f32> = (0..c)
        .map(|ci| net.classifier.weights.data()[ci * k + predicted])
        .collect();
    let mut raw = vec![0.0f32; h * w];
    for (i, &v) in scaled.data().iter().enumerate() {
        raw[i / c] += column[i % c] * v;
    }
    let raw_map = Tensor::new(&[h, w], raw)?;
    let upsampled_map = bilinear_upsample(&raw_map, (input_size, input_size));
    let normalized_map = min_max_normalize(&upsampled_map);
    Ok(CamResult {
        predicted_class: predicted,
        raw_map,
        upsampled_map,
        normalized_map,
    })
}

fn to_bytes(values: &[f32]) -> Vec<u8> {
    // round half up on [0,1] inputs
    values
        .iter()
        .map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes `<stem>.cam.pgm` (normalized map) and `<stem>.overlay.pgm`
/// (equal-weight blend of input and map). Returns the two paths.
pub fn emit_overlay(
    sample: &Sample,
    cam: &CamResult,
    stem: &Path,
) -> io::Result<(PathBuf, PathBuf)> {
    let size = cam.normalized_map.shape()[0];
    let cam_path = stem.with_extension("cam.pgm");
    let overlay_path = stem.with_extension("overlay.pgm");
    write_pgm(&cam_path, size, size, &to_bytes(cam.normalized_map.data()))?;
    let blend: Vec<f32> = sample
        .image
        .data()
        .iter()
        .zip(cam.normalized_map.data())
        .map(|(&a, &b)| 0.5 * a + 0.5 * b)
        .collect();
    write_pgm(&overlay_path, size, size, &to_bytes(&blend))?;
    Ok((cam_path, overlay_path))
}

/// Top-1 accuracy with the stored softmax bias and with the bias zeroed,
/// plus the absolute difference. The network itself is never mutated.
pub fn bias_effect(
    net: &Network<f32>,
    dataset: &[Sample],
) -> Result<(f64, f64, f64), ModelError> {
    assert!(!dataset.is_empty(), "bias_effect needs a non-empty dataset");
    let ks = [1usize];
    let with_bias = crate::train::evaluate_with_bias(net, dataset, &ks, false)?[0];
    let zero_bias = crate::train::evaluate_with_bias(net, dataset, &ks, true)?[0];
    Ok((with_bias, zero_bias, (with_bias - zero_bias).abs()))
}
