//! Binary model container.
//!
//! ```text
//! "DSNN" | u16 version | [u8; 32] sha256(config) | u32 len | config JSON
//! u32 blocks | { u16 len | name | u8 ndim | u64 dims.. | f64 values.. }*
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BatchNorm, HiddenLayer, NetworkConfig, NetworkModel, Readout};
use crate::delay::DelayVector;
use crate::error::{Error, Result};
use crate::recurrent::{KernelKind, RecurrentKernel};

pub const MODEL_MAGIC: &[u8; 4] = b"DSNN";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Round delays to integers and mark them frozen.
    pub round_delays: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    sigma: f64,
    delays_trainable: Vec<bool>,
}

struct Block {
    dims: Vec<u64>,
    values: Vec<f64>,
}

fn put_block(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(model: &NetworkModel) -> Result<Vec<u8>> {
    let header = Header {
        network: model.config.clone(),
        sigma: model.sigma,
        delays_trainable: model.layers.iter().map(|l| l.delays.trainable).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&json));
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);

    let mut blocks: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        let n = layer.neurons();
        blocks.push((format!("layer{l}.w_ff"), vec![layer.n_in, n], &layer.w_ff));
        if let Some(bn) = &layer.bn {
            blocks.push((format!("layer{l}.bn.gamma"), vec![n], &bn.gamma));
            blocks.push((format!("layer{l}.bn.beta"), vec![n], &bn.beta));
            blocks.push((format!("layer{l}.bn.running_mean"), vec![n], &bn.running_mean));
            blocks.push((format!("layer{l}.bn.running_var"), vec![n], &bn.running_var));
        }
        let w = layer.kernel.weights();
        let dims = match layer.kernel {
            RecurrentKernel::Dense { neurons, .. } => vec![neurons, neurons],
            RecurrentKernel::Conv { .. } => vec![w.len()],
        };
        blocks.push((format!("layer{l}.w_rec"), dims, w));
        blocks.push((format!("layer{l}.delays"), vec![n], &layer.delays.values));
    }
    let ro = &model.readout;
    blocks.push(("readout.w".into(), vec![ro.n_in, ro.classes], &ro.weights));
    blocks.push(("readout.b".into(), vec![ro.classes], &ro.bias));

    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, dims, values) in &blocks {
        put_block(&mut out, name, dims, values);
    }
    Ok(out)
}

pub fn save_model(path: impl AsRef<Path>, model: &NetworkModel) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Model(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

fn parse_blocks(r: &mut Reader<'_>) -> Result<BTreeMap<String, Block>> {
    let count = u32::from_le_bytes(r.array("block count")?);
    let mut blocks = BTreeMap::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array("block name length")?) as usize;
        let name = String::from_utf8(r.take(len, "block name")?.to_vec())
            .map_err(|_| Error::Model("block name is not UTF-8".into()))?;
        let ndim = r.array::<1>("ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(r.array("dims")?));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
            .filter(|&c| c <= (r.bytes.len() - r.pos) / 8)
            .ok_or_else(|| Error::Model(format!("truncated while reading block `{name}`")))?;
        let raw = r.take(count * 8, "values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.insert(name, Block { dims, values });
    }
    if r.pos != r.bytes.len() {
        return Err(Error::Model(format!("{} trailing bytes", r.bytes.len() - r.pos)));
    }
    Ok(blocks)
}

fn take_block(blocks: &mut BTreeMap<String, Block>, name: &str, dims: &[usize]) -> Result<Vec<f64>> {
    let block = blocks
        .remove(name)
        .ok_or_else(|| Error::Model(format!("missing block `{name}`")))?;
    let expect: Vec<u64> = dims.iter().map(|&d| d as u64).collect();
    if block.dims != expect {
        return Err(Error::Model(format!(
            "block `{name}` has shape {:?}, expected {:?}",
            block.dims, expect
        )));
    }
    Ok(block.values)
}

pub fn decode_model(bytes: &[u8], opts: LoadOptions) -> Result<NetworkModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Model("not a model file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != MODEL_VERSION {
        return Err(Error::Model(format!(
            "unsupported version {version}, expected {MODEL_VERSION}"
        )));
    }
    let digest: [u8; 32] = r.array("config digest")?;
    let len = u32::from_le_bytes(r.array("config length")?) as usize;
    let json = r.take(len, "config")?;
    if Sha256::digest(json).as_slice() != digest {
        return Err(Error::Model("config digest mismatch".into()));
    }
    let header: Header = serde_json::from_slice(json)?;
    let config = header.network;
    config.validate()?;
    if header.delays_trainable.len() != config.layers.len() {
        return Err(Error::Model("delay flags do not match layer count".into()));
    }
    let mut blocks = parse_blocks(&mut r)?;

    let mut layers = Vec::with_capacity(config.layers.len());
    let mut n_in = config.input_channels;
    for (l, lc) in config.layers.iter().enumerate() {
        let n = lc.neurons;
        let w_ff = take_block(&mut blocks, &format!("layer{l}.w_ff"), &[n_in, n])?;
        let bn = if lc.batchnorm {
            let mut bn = BatchNorm::new(n, config.bn_momentum, config.bn_eps);
            bn.gamma = take_block(&mut blocks, &format!("layer{l}.bn.gamma"), &[n])?;
            bn.beta = take_block(&mut blocks, &format!("layer{l}.bn.beta"), &[n])?;
            bn.running_mean = take_block(&mut blocks, &format!("layer{l}.bn.running_mean"), &[n])?;
            bn.running_var = take_block(&mut blocks, &format!("layer{l}.bn.running_var"), &[n])?;
            Some(bn)
        } else {
            None
        };
        let kernel = match lc.kernel {
            KernelKind::Dense => RecurrentKernel::dense(n, take_block(&mut blocks, &format!("layer{l}.w_rec"), &[n, n])?)?,
            KernelKind::Conv => RecurrentKernel::conv(take_block(
                &mut blocks,
                &format!("layer{l}.w_rec"),
                &[lc.kernel_size],
            )?)?,
        };
        let mut delays = DelayVector {
            values: take_block(&mut blocks, &format!("layer{l}.delays"), &[n])?,
            d_max: config.d_max,
            trainable: header.delays_trainable[l],
        };
        if opts.round_delays {
            delays = delays.round_for_inference();
        }
        layers.push(HiddenLayer {
            config: lc.clone(),
            n_in,
            w_ff,
            bn,
            kernel,
            delays,
        });
        n_in = n;
    }
    let readout = Readout {
        n_in,
        classes: config.classes,
        weights: take_block(&mut blocks, "readout.w", &[n_in, config.classes])?,
        bias: take_block(&mut blocks, "readout.b", &[config.classes])?,
    };
    if let Some(name) = blocks.keys().next() {
        return Err(Error::Model(format!("unexpected block `{name}`")));
    }
    Ok(NetworkModel::from_parts(config, layers, readout, header.sigma))
}

pub fn load_model(path: impl AsRef<Path>, opts: LoadOptions) -> Result<NetworkModel> {
    decode_model(&fs::read(path)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SpikeTensor;

    fn model() -> NetworkModel {
        let mut cfg = NetworkConfig::uniform(6, 3, 2, 5, KernelKind::Conv, 3);
        cfg.layers[1].kernel = KernelKind::Dense;
        cfg.layers[1].batchnorm = false;
        let mut m = NetworkModel::new(cfg, 11).unwrap();
        m.layers[0].delays.values[2] = 3.5;
        m.sigma = 0.75;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_model(&m).unwrap();
        let back = decode_model(&bytes, LoadOptions::default()).unwrap();
        assert_eq!(back.layers, m.layers);
        assert_eq!(back.readout, m.readout);
        assert_eq!(back.config, m.config);
        assert_eq!(back.sigma.to_bits(), m.sigma.to_bits());
        let x = SpikeTensor::random(2, 8, 6, 0.3, 5);
        assert_eq!(back.forward_eval(&x).unwrap(), m.forward_eval(&x).unwrap());
    }

    #[test]
    fn rounding_on_load() {
        let back = decode_model(&encode_model(&model()).unwrap(), LoadOptions { round_delays: true }).unwrap();
        assert_eq!(back.layers[0].delays.values[2], 4.0);
        assert!(!back.layers[0].delays.trainable);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_model(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad, LoadOptions::default()).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_model(&bad, LoadOptions::default()).unwrap_err().to_string().contains("version"));
        for cut in [3, 20, 50, bytes.len() - 1] {
            let err = decode_model(&bytes[..cut], LoadOptions::default()).unwrap_err().to_string();
            assert!(err.contains("truncated"), "{cut}: {err}");
        }
        let mut bad = bytes.clone();
        bad[45] ^= 1;
        assert!(decode_model(&bad, LoadOptions::default()).is_err());
    }
}
