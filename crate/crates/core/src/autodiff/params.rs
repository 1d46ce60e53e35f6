use std::collections::HashMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameters with AdamW moment buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.5e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "rotavg-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    /// Base64 of the little-endian `f64` values, row-major.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub network: String,
    pub params: Vec<CheckpointParam>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate parameter name `{name}`")));
        }
        let n = value.data().len();
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(existing) => existing.add_assign(g),
            slot => *slot = Some(g.clone()),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Global L2 norm of the current gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// One AdamW update with decoupled weight decay; clears gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let g = p.grad.take().expect("checked above");
            for (((x, &gi), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(p.m.iter_mut())
                .zip(p.v.iter_mut())
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *x -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *x);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, network: &str) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            network: network.to_string(),
            params: self
                .params
                .iter()
                .map(|p| {
                    let bytes: Vec<u8> = p.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                    CheckpointParam {
                        name: p.name.clone(),
                        shape: p.value.shape().to_vec(),
                        data: B64.encode(bytes),
                    }
                })
                .collect(),
        }
    }

    pub fn to_checkpoint_json(&self, network: &str) -> String {
        serde_json::to_string(&self.to_checkpoint(network)).expect("checkpoint serialises")
    }

    /// Overwrites every parameter from `ckpt`; names, shapes and the network
    /// tag must match this store exactly. Moments and step count reset.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint, network: &str) -> Result<()> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", ckpt.format)));
        }
        if ckpt.network != network {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for `{}`, expected `{network}`",
                ckpt.network
            )));
        }
        if ckpt.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters in checkpoint, architecture has {}",
                ckpt.params.len(),
                self.params.len()
            )));
        }
        let mut values = Vec::with_capacity(self.params.len());
        for cp in &ckpt.params {
            let idx = *self
                .by_name
                .get(&cp.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", cp.name)))?;
            let expect = self.params[idx].value.shape();
            if cp.shape != expect {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    cp.name, cp.shape, expect
                )));
            }
            let bytes = B64
                .decode(&cp.data)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", cp.name)))?;
            if bytes.len() != 8 * expect[0] * expect[1] {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` holds {} bytes, expected {}",
                    cp.name,
                    bytes.len(),
                    8 * expect[0] * expect[1]
                )));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("parameter `{}` holds non-finite values", cp.name)));
            }
            values.push((idx, data));
        }
        for (idx, data) in values {
            let p = &mut self.params[idx];
            p.value.data_mut().copy_from_slice(&data);
            p.grad = None;
            p.m.iter_mut().for_each(|x| *x = 0.0);
            p.v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.step = 0;
        Ok(())
    }

    pub fn load_checkpoint_json(&mut self, text: &str, network: &str) -> Result<()> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        self.load_checkpoint(&ckpt, network)
    }
}
