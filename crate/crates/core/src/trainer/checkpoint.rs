//! Binary checkpoint archive.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config, iteration, rng position, optimizer step counts, recent
//! metrics, tensor index), then every tensor as little-endian `f32` in index
//! order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::TrainState;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::nn::{NamedTensor, ParamStore};
use crate::rng::RngSnapshot;

pub const MAGIC: &[u8; 8] = b"UNETGAN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: String,
    iteration: u64,
    rng: RngSnapshot,
    g_opt_step: u64,
    d_opt_step: u64,
    metrics_tail: Vec<MetricsRecord>,
    tensors: Vec<TensorEntry>,
}

fn push_store<'a>(out: &mut Vec<(String, &'a [usize], &'a [f32])>, prefix: &str, store: &'a ParamStore<f32>) {
    for (k, t) in &store.params {
        out.push((format!("{prefix}.param/{k}"), &t.shape, &t.data));
    }
    for (k, t) in &store.buffers {
        out.push((format!("{prefix}.buffer/{k}"), &t.shape, &t.data));
    }
}

fn push_adam<'a>(out: &mut Vec<(String, &'a [usize], &'a [f32])>, prefix: &str, opt: &'a Adam, shapes: &'a ParamStore<f32>) {
    for (k, m) in &opt.m {
        out.push((format!("{prefix}.m/{k}"), &shapes.param(k).shape, m));
    }
    for (k, v) in &opt.v {
        out.push((format!("{prefix}.v/{k}"), &shapes.param(k).shape, v));
    }
}

/// Serializes the full training state.
pub fn to_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    push_store(&mut tensors, "g", &state.g);
    push_store(&mut tensors, "d", &state.d);
    push_store(&mut tensors, "ema", &state.ema);
    push_adam(&mut tensors, "g_opt", &state.g_opt, &state.g);
    push_adam(&mut tensors, "d_opt", &state.d_opt, &state.d);
    let header = Header {
        config: state.config.to_toml_string(),
        iteration: state.iteration,
        rng: RngSnapshot::capture(&state.rng),
        g_opt_step: state.g_opt.step,
        d_opt_step: state.d_opt.step,
        metrics_tail: state.metrics_tail.clone(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorEntry {
                name: name.clone(),
                shape: shape.to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let floats: usize = tensors.iter().map(|t| t.2.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &tensors {
        for v in data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Parses a checkpoint produced by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..).ok_or_else(|| corrupt("truncated"))?;
    if body.len() < hlen {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("header: {e}")))?;
    let data = &body[hlen..];
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if data.len() != 4 * expected {
        return Err(corrupt(format!("expected {} data bytes, found {}", 4 * expected, data.len())));
    }
    let config = Config::from_toml_str(&header.config).map_err(|e| corrupt(format!("embedded config: {e}")))?;

    let mut g = ParamStore::default();
    let mut d = ParamStore::default();
    let mut ema = ParamStore::default();
    let mut opt_m: [BTreeMap<String, Vec<f32>>; 2] = Default::default();
    let mut opt_v: [BTreeMap<String, Vec<f32>>; 2] = Default::default();
    let mut offset = 0;
    for entry in &header.tensors {
        let len: usize = entry.shape.iter().product();
        let values: Vec<f32> = data[offset..offset + 4 * len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += 4 * len;
        let (prefix, name) = entry
            .name
            .split_once('/')
            .ok_or_else(|| corrupt(format!("bad tensor name {}", entry.name)))?;
        let name = name.to_string();
        let t = NamedTensor {
            shape: entry.shape.clone(),
            data: values,
        };
        match prefix {
            "g.param" => {
                g.params.insert(name, t);
            }
            "g.buffer" => {
                g.buffers.insert(name, t);
            }
            "d.param" => {
                d.params.insert(name, t);
            }
            "d.buffer" => {
                d.buffers.insert(name, t);
            }
            "ema.param" => {
                ema.params.insert(name, t);
            }
            "ema.buffer" => {
                ema.buffers.insert(name, t);
            }
            "g_opt.m" => {
                opt_m[0].insert(name, t.data);
            }
            "g_opt.v" => {
                opt_v[0].insert(name, t.data);
            }
            "d_opt.m" => {
                opt_m[1].insert(name, t.data);
            }
            "d_opt.v" => {
                opt_v[1].insert(name, t.data);
            }
            other => return Err(corrupt(format!("unknown tensor group {other}"))),
        }
    }
    let t = &config.train;
    let [gm, dm] = opt_m;
    let [gv, dv] = opt_v;
    let adam = |lr: f64, step: u64, m, v| Adam {
        lr,
        beta1: t.adam_beta1,
        beta2: t.adam_beta2,
        eps: t.adam_eps,
        step,
        m,
        v,
    };
    let state = TrainState {
        g_opt: adam(t.lr_g, header.g_opt_step, gm, gv),
        d_opt: adam(t.lr_d, header.d_opt_step, dm, dv),
        config,
        iteration: header.iteration,
        g,
        d,
        ema,
        rng: header.rng.restore()?,
        metrics_tail: header.metrics_tail,
    };
    state.check_consistency().map_err(|e| corrupt(e.to_string()))?;
    Ok(state)
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(state)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
