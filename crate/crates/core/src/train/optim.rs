use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdadeltaConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig { lr: 1.0, rho: 0.95, eps: 1e-7 }
    }
}

/// Running averages of squared gradients and squared updates, one pair per
/// trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta<T: Scalar = f32> {
    pub config: AdadeltaConfig,
    grad_sq: Vec<Tensor<T>>,
    update_sq: Vec<Tensor<T>>,
}

impl<T: Scalar> Adadelta<T> {
    pub fn new(config: AdadeltaConfig, shapes: impl IntoIterator<Item = Shape>) -> Self {
        let zeros: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Adadelta { config, grad_sq: zeros.clone(), update_sq: zeros }
    }

    /// Slots follow the model's trainable parameters in order.
    pub fn for_model(config: AdadeltaConfig, model: &Model<T>) -> Self {
        Self::new(config, model.params().iter().filter(|p| p.kind.is_trainable()).map(|p| p.value.shape()))
    }

    pub fn slots(&self) -> usize {
        self.grad_sq.len()
    }

    pub fn accumulators(&self, slot: usize) -> (&Tensor<T>, &Tensor<T>) {
        (&self.grad_sq[slot], &self.update_sq[slot])
    }

    pub fn step(&mut self, slot: usize, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        let shape = self.grad_sq.get(slot).map(Tensor::shape).ok_or_else(|| {
            Error::invalid("adadelta", format!("slot {slot} out of range ({} slots)", self.grad_sq.len()))
        })?;
        param.expect_shape("adadelta", shape)?;
        grad.expect_shape("adadelta", shape)?;
        let (rho, eps, lr) = (T::of(self.config.rho), T::of(self.config.eps), T::of(self.config.lr));
        let one = T::one();
        let eg = self.grad_sq[slot].data_mut();
        let ex = self.update_sq[slot].data_mut();
        for (((x, &g), eg), ex) in param.data_mut().iter_mut().zip(grad.data()).zip(eg).zip(ex) {
            *eg = rho * *eg + (one - rho) * g * g;
            let dx = -((*ex + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *ex = rho * *ex + (one - rho) * dx * dx;
            *x += lr * dx;
        }
        Ok(())
    }

    /// `[E[g²]₀, E[Δx²]₀, E[g²]₁, …]` for checkpointing.
    pub fn to_tensors(&self) -> Vec<Tensor<f32>> {
        self.grad_sq.iter().zip(&self.update_sq).flat_map(|(a, b)| [a.cast(), b.cast()]).collect()
    }

    pub fn from_tensors(config: AdadeltaConfig, tensors: &[Tensor<f32>], model: &Model<T>) -> Result<Self> {
        let mut state = Self::for_model(config, model);
        if tensors.len() != 2 * state.slots() {
            return Err(Error::invalid(
                "adadelta",
                format!("{} accumulator tensors for {} parameters", tensors.len(), state.slots()),
            ));
        }
        for (slot, pair) in tensors.chunks_exact(2).enumerate() {
            let shape = state.grad_sq[slot].shape();
            pair[0].expect_shape("adadelta", shape)?;
            pair[1].expect_shape("adadelta", shape)?;
            state.grad_sq[slot] = pair[0].cast();
            state.update_sq[slot] = pair[1].cast();
        }
        Ok(state)
    }
}
