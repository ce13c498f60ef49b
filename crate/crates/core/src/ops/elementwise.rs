use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_broadcast<T: Element>(features: &Tensor<T>, attention: &Tensor<T>) -> Result<()> {
    let f = features.shape();
    let a = attention.shape();
    if a.channels != 1 {
        return Err(Error::config(format!(
            "attention map must have one channel, got {}",
            a.channels
        )));
    }
    if a.batch != f.batch || a.height != f.height || a.width != f.width {
        return Err(Error::config(format!(
            "attention map {a} does not match features {f} in batch/height/width"
        )));
    }
    Ok(())
}

/// `(A ⊗ F) ⊕ F` with the single-channel map `A` broadcast over channels.
pub fn broadcast_mul_add<T: Element>(features: &Tensor<T>, attention: &Tensor<T>) -> Result<Tensor<T>> {
    check_broadcast(features, attention)?;
    let s = features.shape();
    let mut out = Tensor::zeros(s);
    for b in 0..s.batch {
        let a = attention.plane(b, 0);
        for c in 0..s.channels {
            let f = features.plane(b, c);
            for ((d, &fv), &av) in out.plane_mut(b, c).iter_mut().zip(f).zip(a) {
                *d = av * fv + fv;
            }
        }
    }
    Ok(out)
}

/// Returns `(d features, d attention)`.
pub fn broadcast_mul_add_backward<T: Element>(
    features: &Tensor<T>,
    attention: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_broadcast(features, attention)?;
    let s = features.shape();
    if grad_out.shape() != s {
        return Err(Error::config(format!(
            "broadcast_mul_add gradient shape {} != {s}",
            grad_out.shape()
        )));
    }
    let mut df = Tensor::zeros(s);
    let mut da = Tensor::zeros(attention.shape());
    for b in 0..s.batch {
        let a = attention.plane(b, 0).to_vec();
        for c in 0..s.channels {
            let g = grad_out.plane(b, c);
            let f = features.plane(b, c);
            for ((d, &gv), &av) in df.plane_mut(b, c).iter_mut().zip(g).zip(&a) {
                *d = gv * (av + T::one());
            }
            for ((d, &gv), &fv) in da.plane_mut(b, 0).iter_mut().zip(g).zip(f) {
                *d = *d + gv * fv;
            }
        }
    }
    Ok((df, da))
}

/// Concatenate along channels, in argument order.
pub fn channel_concat<T: Element>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("channel_concat needs at least one part"))?
        .shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if s.batch != first.batch || s.height != first.height || s.width != first.width {
            return Err(Error::config(format!(
                "channel_concat part {s} does not match {first} in batch/height/width"
            )));
        }
        channels += s.channels;
    }
    let out_shape = first.with_channels(channels);
    let mut data = Vec::with_capacity(out_shape.len());
    for b in 0..first.batch {
        for p in parts {
            data.extend_from_slice(p.item(b));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Split into consecutive channel slices of the given sizes (the adjoint of
/// [`channel_concat`]).
pub fn split_channels<T: Element>(input: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = input.shape();
    let total: usize = sizes.iter().sum();
    if total != s.channels {
        return Err(Error::config(format!(
            "split sizes sum to {total}, input has {} channels",
            s.channels
        )));
    }
    let mut parts: Vec<Vec<T>> = sizes
        .iter()
        .map(|&c| Vec::with_capacity(s.batch * c * s.plane()))
        .collect();
    for b in 0..s.batch {
        let item = input.item(b);
        let mut start = 0;
        for (part, &c) in parts.iter_mut().zip(sizes) {
            let n = c * s.plane();
            part.extend_from_slice(&item[start..start + n]);
            start += n;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(data, &c)| Tensor::from_vec(s.with_channels(c), data))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn ramp(shape: Shape) -> Tensor<f64> {
        Tensor::from_vec(shape, (0..shape.len()).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn zero_map_is_identity_and_unit_map_doubles() {
        let f = ramp(Shape::new(2, 3, 2, 2));
        let zero = Tensor::zeros(Shape::new(2, 1, 2, 2));
        let one = Tensor::full(Shape::new(2, 1, 2, 2), 1.0);
        assert_eq!(broadcast_mul_add(&f, &zero).unwrap(), f);
        assert_eq!(broadcast_mul_add(&f, &one).unwrap(), f.map(|v| 2.0 * v));
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let f = ramp(Shape::new(1, 3, 2, 2));
        let a = Tensor::zeros(Shape::new(1, 1, 2, 3));
        assert!(matches!(broadcast_mul_add(&f, &a), Err(Error::Config(_))));
        let a = Tensor::zeros(Shape::new(1, 2, 2, 2));
        assert!(broadcast_mul_add(&f, &a).is_err());
    }

    #[test]
    fn concat_preserves_part_boundaries() {
        let a = ramp(Shape::new(2, 2, 1, 2));
        let b = ramp(Shape::new(2, 3, 1, 2)).map(|v| v + 100.0);
        let c = channel_concat(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 5, 1, 2));
        assert_eq!(c.plane(1, 0), a.plane(1, 0));
        assert_eq!(c.plane(1, 4), b.plane(1, 2));
        assert_eq!(channel_concat(std::slice::from_ref(&a)).unwrap(), a);
        let parts = split_channels(&c, &[2, 3]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = ramp(Shape::new(1, 2, 2, 2));
        let b = ramp(Shape::new(1, 2, 2, 1));
        assert!(channel_concat(&[a, b]).is_err());
        assert!(channel_concat::<f64>(&[]).is_err());
    }
}
