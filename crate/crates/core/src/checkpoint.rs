//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `CANOPYCK` |
//! | 4     | format version (`u32`, currently 1) |
//! | 8     | header length `L` (`u64`) |
//! | L     | UTF-8 JSON [`Header`] |
//! | rest  | tensor payload: `f64` values, tensors back to back in header order |
//!
//! The header lists every tensor with its name, kind, shape and element
//! offset into the payload. Kinds are `param`, `bn_mean`, `bn_var`,
//! `adam_m` and `adam_v`; moment tensors share the name of their parameter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::ops::RunningStats;
use crate::tensor::Tensor;
use crate::trainer::AdamState;

pub const MAGIC: &[u8; 8] = b"CANOPYCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMetric {
    pub name: String,
    pub value: f64,
    pub epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    BnMean,
    BnVar,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Offset into the payload, in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub epoch: usize,
    pub step: usize,
    pub best: Option<BestMetric>,
    /// Adam update counter; absent when no optimizer state is stored.
    pub adam_t: Option<u64>,
    /// Free-form echo of the training configuration.
    #[serde(default)]
    pub train_config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub epoch: usize,
    pub step: usize,
    pub best: Option<BestMetric>,
    pub train_config: serde_json::Value,
}

impl Checkpoint {
    pub fn inference(model: Model) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            epoch: 0,
            step: 0,
            best: None,
            train_config: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        let mut push = |name: &str, kind: TensorKind, shape: &[usize], data: &[f64]| {
            entries.push(TensorEntry {
                name: name.to_string(),
                kind,
                shape: shape.to_vec(),
                offset: payload.len(),
            });
            payload.extend_from_slice(data);
        };
        let params = self.model.params();
        for (name, t) in params.iter() {
            push(name, TensorKind::Param, t.shape(), t.data());
        }
        for (name, s) in self.model.stat_names().iter().zip(self.model.stats()) {
            push(name, TensorKind::BnMean, &[s.mean.len()], &s.mean);
            push(name, TensorKind::BnVar, &[s.var.len()], &s.var);
        }
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != params.len() {
                return Err(Error::Checkpoint(
                    "optimizer state does not match parameters".into(),
                ));
            }
            for ((name, m), v) in params.names().iter().zip(&opt.m).zip(&opt.v) {
                push(name, TensorKind::AdamM, m.shape(), m.data());
                push(name, TensorKind::AdamV, v.shape(), v.data());
            }
        }
        let header = Header {
            model: self.model.config().clone(),
            epoch: self.epoch,
            step: self.step,
            best: self.best.clone(),
            adam_t: self.optimizer.as_ref().map(|o| o.t),
            train_config: self.train_config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = read_header(bytes)?;
        let start = 20 + header_len(bytes)?;
        let body = &bytes[start..];
        if body.len() % 8 != 0 {
            return Err(Error::Checkpoint(
                "payload is not a whole number of f64 values".into(),
            ));
        }
        let tensor = |e: &TensorEntry| -> Result<Tensor> {
            let n: usize = e.shape.iter().product();
            let (a, b) = (e.offset * 8, (e.offset + n) * 8);
            let raw = body.get(a..b).ok_or_else(|| {
                Error::Checkpoint(format!("tensor `{}` runs past the payload", e.name))
            })?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Tensor::new(e.shape.clone(), data)
        };
        let mut params = Vec::new();
        let mut means: Vec<(String, Vec<f64>)> = Vec::new();
        let mut vars: Vec<Vec<f64>> = Vec::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for e in &header.tensors {
            let t = tensor(e)?;
            match e.kind {
                TensorKind::Param => params.push((e.name.clone(), t)),
                TensorKind::BnMean => means.push((e.name.clone(), t.into_data())),
                TensorKind::BnVar => vars.push(t.into_data()),
                TensorKind::AdamM => m.push(t),
                TensorKind::AdamV => v.push(t),
            }
        }
        if means.len() != vars.len() {
            return Err(Error::Checkpoint("unpaired batch-norm statistics".into()));
        }
        let stats = means
            .into_iter()
            .zip(vars)
            .map(|((name, mean), var)| (name, RunningStats { mean, var }))
            .collect();
        let model = Model::from_parts(header.model.clone(), params, stats)?;
        let optimizer = match header.adam_t {
            Some(t) => {
                if m.len() != model.params().len() || v.len() != m.len() {
                    return Err(Error::Checkpoint("incomplete optimizer state".into()));
                }
                Some(AdamState { m, v, t })
            }
            None => None,
        };
        Ok(Checkpoint {
            model,
            optimizer,
            epoch: header.epoch,
            step: header.step,
            best: header.best,
            train_config: header.train_config,
        })
    }

    /// Writes atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn header_len(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 20 + len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    Ok(len)
}

/// Parses only the JSON header.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    let len = header_len(bytes)?;
    Ok(serde_json::from_slice(&bytes[20..20 + len])?)
}
