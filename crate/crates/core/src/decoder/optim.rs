use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_shapes, DecoderConfig, DecoderParams};
use crate::diffengine::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut DecoderParams, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        check_shapes("gradients", params.config(), grads)?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (name, p) in params.tensors_mut() {
            let g = grads[name].data();
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()))
                .data_mut();
            m.iter_mut()
                .zip(g)
                .for_each(|(m, g)| *m = b1 * *m + (1.0 - b1) * g);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()))
                .data_mut();
            v.iter_mut()
                .zip(g)
                .for_each(|(v, g)| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (self.first[name].data(), self.second[name].data());
            for ((w, m), v) in p.data_mut().iter_mut().zip(m).zip(v) {
                *w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    fn check(&self, config: &DecoderConfig) -> Result<()> {
        for moments in [&self.first, &self.second] {
            if !moments.is_empty() {
                check_shapes("optimizer state", config, moments)?;
            }
        }
        Ok(())
    }
}

pub fn optimizer_update(params: &mut DecoderParams, grads: &BTreeMap<String, Tensor>, state: &mut Adam) -> Result<()> {
    state.update(params, grads)
}

/// Decoder weights, optimizer state and the hash of the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub decoder: DecoderConfig,
    pub config_hash: String,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: Adam,
}

pub fn save_checkpoint(path: &Path, params: &DecoderParams, optimizer: &Adam, config_hash: &str) -> Result<()> {
    let ck = Checkpoint {
        decoder: *params.config(),
        config_hash: config_hash.to_string(),
        params: params.tensors().clone(),
        optimizer: optimizer.clone(),
    };
    let text = serde_json::to_string(&ck)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint written for `expected`; any shape or config mismatch is an error.
pub fn load_checkpoint(path: &Path, expected: &DecoderConfig) -> Result<(DecoderParams, Adam, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    if ck.decoder != *expected {
        return Err(Error::Contract(format!(
            "checkpoint decoder {:?} does not match configured {:?}",
            ck.decoder, expected
        )));
    }
    let params = DecoderParams::from_tensors(ck.decoder, ck.params)?;
    ck.optimizer.check(expected)?;
    Ok((params, ck.optimizer, ck.config_hash))
}
