use super::tensor::ParamStore;
use super::Float;
use crate::error::{Error, Result};

/// Adam with bias correction, one moment pair per parameter of a store.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    names: Vec<String>,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(store: &ParamStore<T>, learning_rate: f64) -> Self {
        Self::with_betas(store, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(
        store: &ParamStore<T>,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        AdamState {
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            names: store.iter().map(|(n, _)| n.to_string()).collect(),
            first_moment: store.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect(),
            second_moment: store.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect(),
        }
    }

    /// Applies one update to every parameter of `store`, then clears the
    /// gradients. Fails without touching anything when a gradient is missing.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.names.len()
            || store.iter().zip(&self.names).any(|((n, _), m)| n != m)
        {
            return Err(Error::State(
                "optimizer state does not match the parameter store".into(),
            ));
        }
        if let Some((name, _)) = store.iter().find(|(_, t)| t.grad.is_none()) {
            return Err(Error::State(format!("parameter `{name}` has no gradient")));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step = T::of(self.learning_rate / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(self.epsilon);
        let tiny = T::min_positive_value();
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let g = p.grad.take().expect("checked above");
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            for (((x, m), v), &g) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&g) {
                *m = flush(b1 * *m + one_b1 * g, tiny);
                *v = flush(b2 * *v + one_b2 * g * g, tiny);
                *x -= step * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

/// Moments decay geometrically once gradients vanish; flushing subnormals to
/// zero keeps the update at full speed.
#[inline]
fn flush<T: Float>(x: T, tiny: T) -> T {
    if x.abs() < tiny {
        T::zero()
    } else {
        x
    }
}
