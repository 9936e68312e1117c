//! Checkpoint file: one line of JSON header, then little-endian f32 blobs in header order.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{ConvBlock, EncoderModel, BLOCKS};
use super::layers::{BatchNorm, Mode};
use super::optim::SchedulerState;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

const FORMAT: &str = "protoshot-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub rng_seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub scheduler: SchedulerState,
    pub val_loss: Option<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel<f32>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    tensors: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

fn named_tensors(model: &EncoderModel<f32>) -> Vec<(String, Vec<usize>, &[f32])> {
    let mut out = Vec::new();
    for (i, b) in model.blocks.iter().enumerate() {
        let p = format!("block{}", i + 1);
        out.push((format!("{p}.conv.weight"), b.kernel.dims.to_vec(), &b.kernel.data[..]));
        out.push((format!("{p}.conv.bias"), vec![b.bias.len()], &b.bias[..]));
        out.push((format!("{p}.bn.weight"), vec![b.bn.gamma.len()], &b.bn.gamma[..]));
        out.push((format!("{p}.bn.bias"), vec![b.bn.beta.len()], &b.bn.beta[..]));
        out.push((format!("{p}.bn.running_mean"), vec![b.bn.running_mean.len()], &b.bn.running_mean[..]));
        out.push((format!("{p}.bn.running_var"), vec![b.bn.running_var.len()], &b.bn.running_var[..]));
    }
    out
}

pub fn write_checkpoint<W: Write>(mut out: W, ckpt: &Checkpoint) -> Result<()> {
    let tensors = named_tensors(&ckpt.model);
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        tensors: tensors.iter().map(|(n, s, _)| TensorEntry { name: n.clone(), shape: s.clone() }).collect(),
        meta: ckpt.meta.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (_, _, data) in tensors {
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<Checkpoint> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| Error::BadCheckpoint(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::BadCheckpoint(format!("{} v{}", header.format, header.version)));
    }
    if header.tensors.len() != BLOCKS * 6 {
        return Err(Error::BadCheckpoint(format!("{} tensors", header.tensors.len())));
    }

    let mut blobs = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let len: usize = t.shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::BadCheckpoint(format!("truncated tensor {}", t.name)))?;
        blobs.push(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>());
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::BadCheckpoint("trailing bytes".into()));
    }

    let mut blocks = Vec::with_capacity(BLOCKS);
    let mut blobs = blobs.into_iter();
    for (i, entries) in header.tensors.chunks(6).enumerate() {
        let p = format!("block{}", i + 1);
        let expected = ["conv.weight", "conv.bias", "bn.weight", "bn.bias", "bn.running_mean", "bn.running_var"];
        for (e, suffix) in entries.iter().zip(expected) {
            if e.name != format!("{p}.{suffix}") {
                return Err(Error::BadCheckpoint(format!("unexpected tensor {}", e.name)));
            }
        }
        let shape = &entries[0].shape;
        if shape.len() != 4 || shape[2] != 3 || shape[3] != 3 {
            return Err(Error::BadCheckpoint(format!("kernel shape {shape:?}")));
        }
        let c_out = shape[0];
        if entries[1..].iter().any(|e| e.shape != [c_out]) {
            return Err(Error::BadCheckpoint(format!("{p} vector shapes")));
        }
        let mut next = || blobs.next().unwrap();
        let kernel = Tensor4 { dims: [shape[0], shape[1], 3, 3], data: next() };
        let bias = next();
        let bn = BatchNorm { gamma: next(), beta: next(), running_mean: next(), running_var: next() };
        if bn.running_var.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(Error::BadCheckpoint(format!("{p} running variance must be positive")));
        }
        blocks.push(ConvBlock { kernel, bias, bn });
    }
    Ok(Checkpoint { model: EncoderModel { blocks, mode: Mode::Eval }, meta: header.meta })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
