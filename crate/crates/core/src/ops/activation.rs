use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Pointwise nonlinearity attached to a convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Relu6,
}

impl Activation {
    pub fn forward<T: Element>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::None => x.clone(),
            Activation::Relu => relu(x),
            Activation::Relu6 => relu6(x),
        }
    }

    /// Gradient given the pre-activation input.
    pub fn backward<T: Element>(self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::None => Ok(grad_out.clone()),
            Activation::Relu => relu_backward(input, grad_out),
            Activation::Relu6 => relu6_backward(input, grad_out),
        }
    }
}

fn zip_map<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "{op}: gradient shape {} != input shape {}",
            b.shape(),
            a.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &g)| f(x, g)).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(input, grad_out, "relu", |x, g| if x > T::zero() { g } else { T::zero() })
}

pub fn relu6<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let six = T::from_f64(6.0);
    x.map(|v| {
        if v <= T::zero() {
            T::zero()
        } else if v >= six {
            six
        } else {
            v
        }
    })
}

pub fn relu6_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let six = T::from_f64(6.0);
    zip_map(input, grad_out, "relu6", |x, g| {
        if x > T::zero() && x < six {
            g
        } else {
            T::zero()
        }
    })
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Gradient given the sigmoid *output*.
pub fn sigmoid_backward<T: Element>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(output, grad_out, "sigmoid", |y, g| g * y * (T::one() - y))
}

/// Softmax over the flattened (height, width) positions of a single-channel
/// map, independently per batch item. The per-item maximum is subtracted
/// before exponentiation.
pub fn spatial_softmax<T: Element>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let s = map.shape();
    if s.channels != 1 {
        return Err(Error::config(format!(
            "spatial softmax needs exactly one channel, got {}",
            s.channels
        )));
    }
    let mut out = Tensor::zeros(s);
    for b in 0..s.batch {
        let logits = map.plane(b, 0);
        let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let dst = out.plane_mut(b, 0);
        let mut total = T::zero();
        for (d, &z) in dst.iter_mut().zip(logits) {
            *d = (z - max).exp();
            total = total + *d;
        }
        dst.iter_mut().for_each(|d| *d = *d / total);
    }
    Ok(out)
}

/// Gradient of [`spatial_softmax`] given its output `y`:
/// `dz = y ⊙ (g − Σ y·g)` per batch item.
pub fn spatial_softmax_backward<T: Element>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = output.shape();
    if grad_out.shape() != s {
        return Err(Error::config(format!(
            "spatial softmax gradient shape {} != output shape {s}",
            grad_out.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(s);
    for b in 0..s.batch {
        let y = output.plane(b, 0);
        let g = grad_out.plane(b, 0);
        let inner = y.iter().zip(g).fold(T::zero(), |acc, (&y, &g)| acc + y * g);
        for ((d, &y), &g) in grad_in.plane_mut(b, 0).iter_mut().zip(y).zip(g) {
            *d = y * (g - inner);
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu6_clamps() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 3.0, 9.0]).unwrap();
        assert_eq!(relu6(&x).data(), &[0.0, 3.0, 6.0]);
        assert_eq!(relu(&x).data(), &[0.0, 3.0, 9.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 1, 1));
        assert_eq!(sigmoid(&x).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_uniform_on_zero_map() {
        let y = spatial_softmax(&Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2))).unwrap();
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_hand_evaluated() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 3f64.ln()]).unwrap();
        let y = spatial_softmax(&x).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_multichannel() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2));
        assert!(matches!(spatial_softmax(&x), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_normalizes_each_item() {
        let x = Tensor::<f64>::from_vec(
            Shape::new(2, 1, 2, 3),
            vec![1.0, -2.0, 0.5, 30.0, 4.0, 4.0, -100.0, 0.0, 7.0, 7.0, 1e-3, 2.0],
        )
        .unwrap();
        let y = spatial_softmax(&x).unwrap();
        for b in 0..2 {
            let sum: f64 = y.plane(b, 0).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(y.plane(b, 0).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
