use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Output of [`maxpool_3x3_p1`] plus the flat in-plane index of each winner.
#[derive(Clone, Debug)]
pub struct MaxPoolOutput<T: Element> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

/// 3×3 max pooling with stride 1 and padding 1. Padded cells behave as −∞, so
/// output extents equal input extents. Ties resolve to the first maximum in
/// row-major window order.
pub fn maxpool_3x3_p1<T: Element>(input: &Tensor<T>) -> Result<MaxPoolOutput<T>> {
    let s = input.shape();
    if s.height == 0 || s.width == 0 {
        return Err(Error::config(format!(
            "maxpool needs spatial extents >= 1, got {}x{}",
            s.height, s.width
        )));
    }
    let mut output = Tensor::zeros(s);
    let mut argmax = vec![0u32; s.len()];
    let (h, w) = (s.height, s.width);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let plane = input.plane(b, c);
            let base = s.offset(b, c, 0, 0);
            let dst = output.plane_mut(b, c);
            for i in 0..h {
                let rows = i.saturating_sub(1)..(i + 2).min(h);
                for j in 0..w {
                    let cols = j.saturating_sub(1)..(j + 2).min(w);
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    let mut first = true;
                    for r in rows.clone() {
                        for q in cols.clone() {
                            let v = plane[r * w + q];
                            if first || v > best {
                                best = v;
                                best_at = r * w + q;
                                first = false;
                            }
                        }
                    }
                    dst[i * w + j] = best;
                    argmax[base + i * w + j] = best_at as u32;
                }
            }
        }
    }
    Ok(MaxPoolOutput { output, argmax })
}

/// Route each upstream gradient to the input position that won its window.
pub fn maxpool_3x3_p1_backward<T: Element>(
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = grad_out.shape();
    if argmax.len() != s.len() {
        return Err(Error::config(format!(
            "maxpool argmax length {} != gradient length {}",
            argmax.len(),
            s.len()
        )));
    }
    let mut grad_in = Tensor::zeros(s);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let base = s.offset(b, c, 0, 0);
            let g = grad_out.plane(b, c);
            let dst = grad_in.plane_mut(b, c);
            for (k, &gv) in g.iter().enumerate() {
                let at = argmax[base + k] as usize;
                dst[at] = dst[at] + gv;
            }
        }
    }
    Ok(grad_in)
}

/// Mean over (height, width): `(b, c, h, w) -> (b, c, 1, 1)`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.plane() == 0 {
        return Err(Error::config("global average pool over an empty plane"));
    }
    let scale = T::from_f64(1.0 / s.plane() as f64);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, 1, 1));
    for b in 0..s.batch {
        for c in 0..s.channels {
            let sum = input.plane(b, c).iter().fold(T::zero(), |acc, &v| acc + v);
            out.set(b, c, 0, 0, sum * scale);
        }
    }
    Ok(out)
}

pub fn global_avg_pool_backward<T: Element>(
    input_shape: Shape,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let expected = Shape::new(input_shape.batch, input_shape.channels, 1, 1);
    if grad_out.shape() != expected {
        return Err(Error::config(format!(
            "global average pool gradient shape {} != {expected}",
            grad_out.shape()
        )));
    }
    let scale = T::from_f64(1.0 / input_shape.plane() as f64);
    let mut grad_in = Tensor::zeros(input_shape);
    for b in 0..input_shape.batch {
        for c in 0..input_shape.channels {
            let g = grad_out.get(b, c, 0, 0) * scale;
            grad_in.plane_mut(b, c).iter_mut().for_each(|v| *v = g);
        }
    }
    Ok(grad_in)
}
