//! Bit-exact binary checkpoints.
//!
//! Layout, little-endian throughout: magic `MNCK`, u16 version (= 1),
//! u8 variant code, u32 num_classes, f32 bn_eps, f32 bn_momentum,
//! u32 tensor count; then per tensor: u16 name length, UTF-8 name, u8 rank,
//! u32 per dim, raw f32 data.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{build, ModelConfig, ModelError, Network, Variant};

pub const MAGIC: &[u8; 4] = b"MNCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic number, not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u16),
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("invalid variant code {0}")]
    BadVariantCode(u8),
    #[error("checkpoint holds variant {found}, but variant {requested} was requested")]
    VariantMismatch { requested: Variant, found: Variant },
    #[error("tensor '{name}' has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint contains unknown tensor '{0}'")]
    UnknownTensor(String),
    #[error("checkpoint is missing tensor '{0}'")]
    MissingTensor(String),
    #[error("invalid tensor name encoding")]
    BadName,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn save(net: &Network<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[net.config.variant.code()])?;
    w.write_all(&(net.config.num_classes as u32).to_le_bytes())?;
    w.write_all(&(net.config.bn_eps as f32).to_le_bytes())?;
    w.write_all(&(net.config.bn_momentum as f32).to_le_bytes())?;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    net.visit_params(&mut |p| {
        tensors.push((p.name, p.tensor.shape().to_vec(), p.tensor.data().to_vec()));
    });
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[shape.len() as u8])?;
        for d in &shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Header metadata without the tensor payloads.
#[derive(Debug, Clone)]
pub struct CheckpointInfo {
    pub variant: Variant,
    pub num_classes: usize,
    pub bn_eps: f32,
    pub bn_momentum: f32,
    pub tensor_count: usize,
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated
        } else {
            CheckpointError::Io(e)
        }
    })
}

fn read_u16(r: &mut impl Read) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_header(r: &mut impl Read) -> Result<CheckpointInfo, CheckpointError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    let mut code = [0u8; 1];
    read_exact(r, &mut code)?;
    let variant = Variant::from_code(code[0]).ok_or(CheckpointError::BadVariantCode(code[0]))?;
    let num_classes = read_u32(r)? as usize;
    let bn_eps = read_f32(r)?;
    let bn_momentum = read_f32(r)?;
    let tensor_count = read_u32(r)? as usize;
    Ok(CheckpointInfo {
        variant,
        num_classes,
        bn_eps,
        bn_momentum,
        tensor_count,
    })
}

/// Reads only the header.
pub fn inspect(path: &Path) -> Result<CheckpointInfo, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r)
}

/// Restores a network. `expected_variant`, when given, must match the file.
pub fn load(
    path: &Path,
    expected_variant: Option<Variant>,
) -> Result<Network<f32>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let info = read_header(&mut r)?;
    if let Some(requested) = expected_variant {
        if requested != info.variant {
            return Err(CheckpointError::VariantMismatch {
                requested,
                found: info.variant,
            });
        }
    }
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    for _ in 0..info.tensor_count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        read_exact(&mut r, &mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, (shape, data));
    }

    let mut config = ModelConfig::new(info.variant, info.num_classes);
    config.bn_eps = info.bn_eps as f64;
    config.bn_momentum = info.bn_momentum as f64;
    let mut net = build::<f32>(&config, 0)?;
    let mut apply_err = None;
    net.visit_params_mut(&mut |name, tensor, _, _| {
        if apply_err.is_some() {
            return;
        }
        match tensors.remove(name) {
            None => apply_err = Some(CheckpointError::MissingTensor(name.to_string())),
            Some((shape, data)) => {
                if shape != tensor.shape() {
                    apply_err = Some(CheckpointError::ShapeMismatch {
                        name: name.to_string(),
                        got: shape,
                        expected: tensor.shape().to_vec(),
                    });
                } else {
                    tensor.data_mut().copy_from_slice(&data);
                }
            }
        }
    });
    if let Some(e) = apply_err {
        return Err(e);
    }
    if let Some(extra) = tensors.into_keys().next() {
        return Err(CheckpointError::UnknownTensor(extra));
    }
    Ok(net)
}
