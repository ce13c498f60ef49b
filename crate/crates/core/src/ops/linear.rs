use super::conv::gemm_acc;
use super::macs::MacKind;
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Dense layer geometry. Weights are `(out_features, in_features)` row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T: Element> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

fn check<T: Element>(input: Shape, spec: &LinearSpec, weight: &[T]) -> Result<()> {
    if input.item() != spec.in_features {
        return Err(Error::config(format!(
            "fully connected input has {} features per item ({input}), expected {}",
            input.item(),
            spec.in_features
        )));
    }
    if weight.len() != spec.in_features * spec.out_features {
        return Err(Error::config(format!(
            "fully connected weight length {} != {}x{}",
            weight.len(),
            spec.out_features,
            spec.in_features
        )));
    }
    Ok(())
}

/// Flattens each batch item and applies `W·x + b`; output is `(batch, out, 1, 1)`.
pub fn fully_connected<T: Element>(
    input: &Tensor<T>,
    spec: &LinearSpec,
    weight: &[T],
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let s = input.shape();
    check(s, spec, weight)?;
    match (spec.bias, bias) {
        (true, Some(b)) if b.len() == spec.out_features => {}
        (false, None) => {}
        _ => return Err(Error::config("fully connected bias does not match its spec")),
    }
    let mut out = Tensor::zeros(Shape::new(s.batch, spec.out_features, 1, 1));
    for b in 0..s.batch {
        let dst = out.item_mut(b);
        gemm_acc(weight, input.item(b), dst, spec.out_features, spec.in_features, 1, MacKind::FullyConnected);
        if let Some(bias) = bias {
            for (d, &bv) in dst.iter_mut().zip(bias) {
                *d = *d + bv;
            }
        }
    }
    Ok(out)
}

pub fn fully_connected_backward<T: Element>(
    input: &Tensor<T>,
    spec: &LinearSpec,
    weight: &[T],
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let s = input.shape();
    check(s, spec, weight)?;
    if grad_out.shape() != Shape::new(s.batch, spec.out_features, 1, 1) {
        return Err(Error::config(format!(
            "fully connected gradient shape {} != {}x{}x1x1",
            grad_out.shape(),
            s.batch,
            spec.out_features
        )));
    }
    let (nin, nout) = (spec.in_features, spec.out_features);
    let mut grads = LinearGrads {
        input: Tensor::zeros(s),
        weight: vec![T::zero(); weight.len()],
        bias: spec.bias.then(|| vec![T::zero(); nout]),
    };
    for b in 0..s.batch {
        let g = grad_out.item(b);
        let x = input.item(b);
        for (o, &go) in g.iter().enumerate() {
            let wrow = &weight[o * nin..(o + 1) * nin];
            let dwrow = &mut grads.weight[o * nin..(o + 1) * nin];
            for (dw, &xv) in dwrow.iter_mut().zip(x) {
                *dw = *dw + go * xv;
            }
            for (dx, &wv) in grads.input.item_mut(b).iter_mut().zip(wrow) {
                *dx = *dx + go * wv;
            }
        }
        if let Some(db) = grads.bias.as_mut() {
            for (d, &gv) in db.iter_mut().zip(g) {
                *d = *d + gv;
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattens_and_applies_affine_map() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = LinearSpec {
            in_features: 4,
            out_features: 2,
            bias: true,
        };
        let w = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let y = fully_connected(&x, &spec, &w, Some(&[0.5, -10.0])).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 1, 1));
        assert_eq!(y.data(), &[1.5, 0.0]);
    }

    #[test]
    fn rejects_feature_mismatch() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 1, 1));
        let spec = LinearSpec {
            in_features: 4,
            out_features: 1,
            bias: false,
        };
        assert!(fully_connected(&x, &spec, &[0.0; 4], None).is_err());
    }
}
