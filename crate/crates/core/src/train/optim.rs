//! SGD with momentum and coupled weight decay.

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::Element;

/// One update of a parameter array:
///
/// ```text
/// v ← momentum·v + (grad + weight_decay·param)
/// param ← param − lr·v
/// ```
pub fn sgd_step<T: Element>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::config(format!(
            "sgd_step: params {}, grads {}, velocity {} differ in length",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    let (lr, mu, wd) = (T::from_f64(lr), T::from_f64(momentum), T::from_f64(weight_decay));
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v + (g + wd * *p);
        *p = *p - lr * *v;
    }
    Ok(())
}

/// Optimizer state for a whole graph: one velocity buffer per parameter,
/// matched by qualified name.
#[derive(Clone, Debug)]
pub struct Sgd<T: Element> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<(String, Vec<T>)>,
}

impl<T: Element> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::config(format!("weight_decay must be >= 0, got {weight_decay}")));
        }
        Ok(Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// Apply the accumulated gradients of every parameter in `graph`.
    pub fn step(&mut self, graph: &mut ModelGraph<T>, lr: f64) -> Result<()> {
        let params = graph.params_mut();
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|(name, p)| (name.clone(), vec![T::zero(); p.len()]))
                .collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::State("graph parameters changed since the optimizer was created".into()));
        }
        for ((name, p), (vname, v)) in params.into_iter().zip(self.velocity.iter_mut()) {
            if name != *vname {
                return Err(Error::State(format!("optimizer state for {vname} applied to {name}")));
            }
            sgd_step(&mut p.value, &p.grad, v, lr, self.momentum, self.weight_decay)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_single_step() {
        // loss ½θ², gradient θ
        let mut theta = [1.0f64];
        let mut v = [0.0];
        sgd_step(&mut theta, &[1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert!((theta[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut p = [3.0f64, -2.0];
        let mut v = [1.0, 2.0];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.0, 0.9, 0.0).unwrap();
        assert_eq!(p, [3.0, -2.0]);
        assert_eq!(v, [0.9, 1.8]);
    }

    #[test]
    fn two_momentum_steps_on_constant_gradient() {
        let (lr, g) = (0.1, 0.5);
        let mut p = [2.0f64];
        let mut v = [0.0];
        for _ in 0..2 {
            sgd_step(&mut p, &[g], &mut v, lr, 0.9, 0.0).unwrap();
        }
        assert!((p[0] - (2.0 - lr * g * 2.9)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_with_zero_lr_is_inert() {
        let mut p = [1.5f32, -0.25];
        sgd_step(&mut p, &[0.3, 0.1], &mut [0.0; 2], 0.0, 0.9, 4e-5).unwrap();
        assert_eq!(p, [1.5, -0.25]);
    }

    #[test]
    fn length_mismatch() {
        assert!(sgd_step(&mut [0.0f64; 2], &[0.0], &mut [0.0; 2], 0.1, 0.9, 0.0).is_err());
    }
}
