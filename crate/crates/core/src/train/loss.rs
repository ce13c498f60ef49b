use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_labels<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let s = logits.shape();
    if labels.len() != s.batch {
        return Err(Error::config(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.batch
        )));
    }
    let classes = s.item();
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::Data(format!(
            "label {y} of sample {i} is outside 0..{classes}"
        )));
    }
    Ok(classes)
}

/// Mean cross-entropy of softmax(logits) against `labels`, and its gradient
/// `(softmax − onehot) / batch` with the shape of `logits`.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    check_labels(logits, labels)?;
    let batch = labels.len();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let z = logits.item(b);
        let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let sum = exps.iter().fold(T::zero(), |a, &e| a + e);
        total += (sum.ln() - (z[y] - max)).as_f64();
        let scale = T::from_f64(1.0 / batch as f64);
        for (c, (g, &e)) in grad.item_mut(b).iter_mut().zip(&exps).enumerate() {
            let onehot = if c == y { T::one() } else { T::zero() };
            *g = (e / sum - onehot) * scale;
        }
    }
    Ok((total / batch as f64, grad))
}

/// Whether `label` ranks among the `k` largest entries of `scores`, ties
/// going to the lower class index.
pub fn in_top_k<T: Element>(scores: &[T], label: usize, k: usize) -> bool {
    let target = scores[label];
    let rank = scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count();
    rank < k
}

/// Number of samples whose label is in the top `k` logits.
pub fn topk_hits<T: Element>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<usize> {
    let classes = check_labels(logits, labels)?;
    if k == 0 || k > classes {
        return Err(Error::config(format!("k = {k} must be in 1..={classes}")));
    }
    Ok(labels
        .iter()
        .enumerate()
        .filter(|&(b, &y)| in_top_k(logits.item(b), y, k))
        .count())
}

/// Fraction of samples whose label is in the top `k` logits.
pub fn topk_accuracy<T: Element>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    let hits = topk_hits(logits, labels, k)?;
    Ok(hits as f64 / labels.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn logits(rows: &[&[f64]]) -> Tensor<f64> {
        let c = rows[0].len();
        Tensor::from_vec(Shape::new(rows.len(), c, 1, 1), rows.concat()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let (loss, grad) = cross_entropy(&logits(&[&[0.3; 5], &[0.3; 5]]), &[1, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-14);
        assert!((grad.item(0)[1] - (0.2 - 1.0) / 2.0).abs() < 1e-15);
        assert!((grad.item(0)[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_give_small_loss() {
        let (loss, _) = cross_entropy(&logits(&[&[40.0, 0.0, 0.0]]), &[0]).unwrap();
        assert!(loss < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(cross_entropy(&logits(&[&[0.0; 3]]), &[3]), Err(Error::Data(_))));
    }

    #[test]
    fn hand_built_top2() {
        let l = logits(&[
            &[0.9, 0.5, 0.1, 0.0],
            &[0.1, 0.2, 0.3, 0.4],
            &[1.0, 1.0, 1.0, 0.0],
            &[0.0, 0.5, 0.2, 0.3],
        ]);
        // label ranks: 1, 3, 1 (tied with class 0, which wins), 1
        let labels = [1, 0, 1, 3];
        assert_eq!(topk_accuracy(&l, &labels, 2).unwrap(), 0.75);
        assert_eq!(topk_accuracy(&l, &labels, 4).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&l, &labels, 1).unwrap(), 0.0);
        assert!(topk_accuracy(&l, &labels, 5).is_err());
    }
}
