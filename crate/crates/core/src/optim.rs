//! Adam with one learning rate per parameter group.

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub text: f64,
    pub audio: f64,
    pub visual: f64,
    pub fusion: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            text: 5e-4,
            audio: 1e-3,
            visual: 1e-3,
            fusion: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            text: lr,
            audio: lr,
            visual: lr,
            fusion: lr,
        }
    }

    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Text => self.text,
            ParamGroup::Audio => self.audio,
            ParamGroup::Visual => self.visual,
            ParamGroup::Fusion => self.fusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr_text", self.text),
            ("lr_audio", self.audio),
            ("lr_visual", self.visual),
            ("lr_fusion", self.fusion),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    lrs: LearningRates,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lrs: LearningRates) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lrs,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Applies one update from the gradients held in `store`. Every
    /// parameter must carry a gradient buffer.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(Error::contract("optimizer state does not match the parameter store"));
        }
        for p in store.iter() {
            let g =
                p.1.grad
                    .as_ref()
                    .ok_or_else(|| Error::contract(format!("parameter {} has no gradient", p.1.name)))?;
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.1.name)));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let lr = self.lrs.get(p.group);
            let g = p.grad.as_ref().expect("checked above");
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
