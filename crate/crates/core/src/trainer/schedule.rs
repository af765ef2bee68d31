use crate::error::{invalid, Result};
use crate::losses::GceConfig;
use crate::tensor::{ParamStore, Scalar};

/// Step decay: `base` before `decay_epoch`, `base·factor` from then on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub decay_epoch: usize,
}

impl LrSchedule {
    pub fn new(base: f64) -> Self {
        Self {
            base,
            factor: 0.1,
            decay_epoch: 50,
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.base
        } else {
            self.base * self.factor
        }
    }
}

/// Which classification loss an epoch uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossChoice {
    pub use_ce: bool,
    pub use_gce: bool,
}

pub fn loss_schedule(epoch: usize, gce: &GceConfig) -> LossChoice {
    let use_ce = epoch < gce.warmup_epochs;
    LossChoice {
        use_ce,
        use_gce: !use_ce,
    }
}

/// `buf ← μ·buf + grad; p ← p − lr·buf` for every parameter.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, lr: f64, momentum: f64) -> Result<()> {
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for p in params.iter_mut() {
        if p.grad.len() != p.value.len() {
            return invalid(format!("parameter {} has no gradient buffer", p.name));
        }
        let value = p.value.data_mut();
        for ((v, b), &g) in value.iter_mut().zip(p.momentum.iter_mut()).zip(&p.grad) {
            *b = mu * *b + g;
            *v = *v - lr * *b;
        }
    }
    Ok(())
}
