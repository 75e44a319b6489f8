//! Exponential moving average of a parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ema {
    decay: f64,
    /// Training steps before which the shadow simply copies the parameters.
    warmup: u64,
    shadow: Vec<f64>,
}

impl Ema {
    pub fn new(params: &[f64], decay: f64, warmup: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::config(format!("EMA decay {decay} outside [0, 1]")));
        }
        Ok(Self {
            decay,
            warmup,
            shadow: params.to_vec(),
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn warmup(&self) -> u64 {
        self.warmup
    }

    pub fn shadow(&self) -> &[f64] {
        &self.shadow
    }

    /// `shadow <- decay * shadow + (1 - decay) * params`, or a plain copy while
    /// `step < warmup`.
    pub fn update(&mut self, params: &[f64], step: u64) -> Result<()> {
        if params.len() != self.shadow.len() {
            return Err(Error::invalid(format!(
                "EMA shadow has {} entries, params have {}",
                self.shadow.len(),
                params.len()
            )));
        }
        if step < self.warmup {
            self.shadow.copy_from_slice(params);
            return Ok(());
        }
        let d = self.decay;
        for (s, &p) in self.shadow.iter_mut().zip(params) {
            *s = d * *s + (1.0 - d) * p;
        }
        Ok(())
    }
}
