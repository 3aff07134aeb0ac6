use vssa_autodiff::{Real, Tensor};

use crate::nn::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum SGD: `v <- m v + g + wd p`, `p <- p - lr v`. Weight decay only
/// touches parameters flagged for it.
#[derive(Debug, Clone)]
pub struct Sgd<T: Real> {
    pub config: SgdConfig,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(config: SgdConfig, params: &ParamStore<T>) -> Self {
        Sgd { config, velocity: params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect() }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Tensor<T>>) -> Result<()> {
        if velocity.len() != self.velocity.len()
            || velocity.iter().zip(&self.velocity).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Format("momentum buffers do not match the model".into()));
        }
        self.velocity = velocity;
        Ok(())
    }

    /// Applies one update. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        for (p, g) in params.iter().zip(grads) {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        let (lr, m, wd) = (T::of(self.config.learning_rate), T::of(self.config.momentum), T::of(self.config.weight_decay));
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let decay = if p.decay { wd } else { T::zero() };
            for ((x, &gi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = m * *vi + gi + decay * *x;
                *x -= lr * *vi;
            }
        }
        Ok(())
    }
}
