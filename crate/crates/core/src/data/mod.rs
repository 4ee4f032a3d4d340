//! Dataset ingestion and preprocessing.

mod gnt;
mod synth;

pub use gnt::{parse_gnt, write_gnt, GntError, GntReader, GntRecord};
pub use synth::synth_glyphs;

use std::collections::HashMap;

use thiserror::Error;

use crate::interp::bilinear_resize;
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 96;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("tag code {0:02x?} is not in the label map")]
    UnknownTag([u8; 2]),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// One preprocessed training/evaluation sample: a `96 x 96 x 1` image with
/// ink near 1 and background at 0.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
}

/// Bijection between GNT tag codes and dense class indices, ordered by tag.
#[derive(Debug, Clone, Default)]
pub struct LabelMap {
    tags: Vec<[u8; 2]>,
    index: HashMap<[u8; 2], usize>,
}

impl LabelMap {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a GntRecord>) -> Self {
        let mut tags: Vec<[u8; 2]> = records.into_iter().map(|r| r.tag).collect();
        tags.sort_unstable();
        tags.dedup();
        let index = tags.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        LabelMap { tags, index }
    }

    pub fn class_of(&self, tag: [u8; 2]) -> Option<usize> {
        self.index.get(&tag).copied()
    }

    pub fn tag_of(&self, class: usize) -> Option<[u8; 2]> {
        self.tags.get(class).copied()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Raw grayscale bytes (255 = background) to a network-ready image:
/// invert, scale to [0,1], bilinear-resize to 96 x 96.
pub fn image_from_gray(bytes: &[u8], height: usize, width: usize) -> Tensor<f32> {
    let inverted: Vec<f32> = bytes.iter().map(|&v| (255 - v) as f32 / 255.0).collect();
    let resized = bilinear_resize(&inverted, height, width, IMAGE_SIZE, IMAGE_SIZE);
    Tensor::new(&[IMAGE_SIZE, IMAGE_SIZE, 1], resized).unwrap()
}

pub fn preprocess(record: &GntRecord, labels: &LabelMap) -> Result<Sample, DataError> {
    let label = labels
        .class_of(record.tag)
        .ok_or(DataError::UnknownTag(record.tag))?;
    Ok(Sample {
        image: image_from_gray(&record.bitmap, record.height as usize, record.width as usize),
        label,
    })
}
