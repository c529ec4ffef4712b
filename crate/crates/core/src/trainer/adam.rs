use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

/// Adam with bias correction over a fixed list of named variables.
/// Moments are exposed so they can be checkpointed and restored exactly.
#[derive(Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: Vec<Slot>,
}

#[derive(Debug)]
struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

impl Adam {
    pub fn new(params: &[(String, Var)], beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let slots = params
            .iter()
            .map(|(name, var)| {
                Ok(Slot {
                    name: name.clone(),
                    var: var.clone(),
                    m: var.as_tensor().zeros_like()?,
                    v: var.as_tensor().zeros_like()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            beta1,
            beta2,
            eps,
            t: 0,
            slots,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `lr`. Variables without a gradient are
    /// left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for s in &mut self.slots {
            let Some(g) = grads.get(s.var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            s.m = ((&s.m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            s.v = ((&s.v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let denom = ((&s.v / bc2)?.sqrt()? + self.eps)?;
            let update = ((&s.m / bc1)? / denom)?;
            s.var.set(&(s.var.as_tensor().detach() - (update * lr)?)?)?;
        }
        Ok(())
    }

    /// `(name.m, tensor)` and `(name.v, tensor)` for every slot.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(self.slots.len() * 2);
        for s in &self.slots {
            out.push((format!("{prefix}{}.m", s.name), s.m.clone()));
            out.push((format!("{prefix}{}.v", s.name), s.v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, t: u64, lookup: impl Fn(&str) -> Option<Tensor>) -> Result<()> {
        for s in &mut self.slots {
            for (suffix, dst) in [("m", &mut s.m), ("v", &mut s.v)] {
                let key = format!("{prefix}{}.{suffix}", s.name);
                let src = lookup(&key).ok_or_else(|| Error::MalformedCheckpoint(format!("missing '{key}'")))?;
                if src.dims() != dst.dims() {
                    return Err(Error::MalformedCheckpoint(format!("'{key}' has wrong shape")));
                }
                *dst = src.to_dtype(dst.dtype())?;
            }
        }
        self.t = t;
        Ok(())
    }
}
