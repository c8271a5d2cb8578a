//! Checkpoint files: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header, then every parameter array as raw little-endian values in
//! header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, Network};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRUNECK1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub precision: String,
    pub epoch: usize,
    pub step: u64,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    /// Filter masks of the conv layers, in order.
    pub masks: Vec<Vec<bool>>,
    pub tensors: Vec<TensorEntry>,
}

fn named_tensors<T: Real>(net: &Network<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Conv(c) => {
                out.push((format!("layers.{i}.weights"), &c.weights));
                out.push((format!("layers.{i}.bias"), &c.bias));
                out.push((format!("layers.{i}.bn_gamma"), &c.bn_gamma));
                out.push((format!("layers.{i}.bn_beta"), &c.bn_beta));
                out.push((format!("layers.{i}.bn_running_mean"), &c.bn_running_mean));
                out.push((format!("layers.{i}.bn_running_var"), &c.bn_running_var));
            }
            Layer::Pool => {}
            Layer::Linear(l) => {
                out.push((format!("layers.{i}.weights"), &l.weights));
                out.push((format!("layers.{i}.bias"), &l.bias));
            }
        }
    }
    out
}

pub fn encode_checkpoint<T: Real>(net: &Network<T>, epoch: usize) -> Result<Vec<u8>> {
    let mut data = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in named_tensors(net) {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: data.len(),
        });
        for v in t.data() {
            v.write_le(&mut data);
        }
    }
    let header = CheckpointHeader {
        precision: T::NAME.to_string(),
        epoch,
        step: net.step(),
        input_shape: net.input_shape(),
        num_classes: net.num_classes(),
        masks: net.masks(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn write_checkpoint<T: Real>(net: &Network<T>, epoch: usize, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(net, epoch)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

/// A decoded checkpoint with values widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path)?).map_err(|e| match e {
            Error::Corrupt { msg, .. } => Error::Corrupt {
                path: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: String| Error::Corrupt {
            path: "checkpoint".into(),
            msg,
        };
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing checkpoint magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("header is truncated".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let width = match header.precision.as_str() {
            "f32" => 4,
            "f64" => 8,
            p => return Err(corrupt(format!("unknown precision {p}"))),
        };
        let data = &bytes[16 + hlen..];
        let mut values = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0;
        for t in &header.tensors {
            let len: usize = t.shape.iter().product();
            if t.offset != expected_offset {
                return Err(corrupt(format!("{} starts at {} instead of {expected_offset}", t.name, t.offset)));
            }
            let raw = data
                .get(t.offset..t.offset + len * width)
                .ok_or_else(|| corrupt(format!("data for {} is truncated", t.name)))?;
            values.push(if width == 4 {
                raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect()
            } else {
                raw.chunks_exact(8).map(f64::read_le).collect()
            });
            expected_offset += len * width;
        }
        if expected_offset != data.len() {
            return Err(corrupt(format!("{} trailing bytes", data.len() - expected_offset)));
        }
        Ok(Checkpoint { header, values })
    }

    pub fn tensor(&self, name: &str) -> Option<(&TensorEntry, &[f64])> {
        self.header
            .tensors
            .iter()
            .zip(&self.values)
            .find(|(t, _)| t.name == name)
            .map(|(t, v)| (t, v.as_slice()))
    }

    /// Names of the conv weight tensors, in conv-layer order.
    pub fn conv_weight_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        let entries = &self.header.tensors;
        for (i, t) in entries.iter().enumerate() {
            if t.name.ends_with(".bn_gamma") {
                names.push(entries[i - 2].name.as_str());
            }
        }
        names
    }

    /// Copies parameters, running statistics and masks into `net`, which
    /// must have the same architecture.
    pub fn restore<T: Real>(&self, net: &mut Network<T>) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> =
            named_tensors(net).into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        let got: Vec<(String, Vec<usize>)> =
            self.header.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
        if expected != got || self.header.masks.len() != net.conv_count() {
            return Err(Error::Corrupt {
                path: "checkpoint".into(),
                msg: "architecture does not match the network".into(),
            });
        }
        let mut values = self.values.iter();
        let mut fill = |t: &mut Tensor<T>| {
            for (d, &v) in t.data_mut().iter_mut().zip(values.next().unwrap()) {
                *d = T::from_f64_lossy(v);
            }
        };
        let mut masks = self.header.masks.iter();
        for layer in net.layers_mut() {
            match layer {
                Layer::Conv(c) => {
                    fill(&mut c.weights);
                    fill(&mut c.bias);
                    fill(&mut c.bn_gamma);
                    fill(&mut c.bn_beta);
                    fill(&mut c.bn_running_mean);
                    fill(&mut c.bn_running_var);
                    c.filter_mask.clone_from(masks.next().unwrap());
                }
                Layer::Pool => {}
                Layer::Linear(l) => {
                    fill(&mut l.weights);
                    fill(&mut l.bias);
                }
            }
        }
        Ok(())
    }
}
