use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Binary cross-entropy of one probability against a 0/1 target.
pub fn bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Cross-entropy of a probability vector against a class index.
pub fn xent(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or(Error::Label {
        label,
        classes: probs.len(),
    })?;
    Ok(-p.max(PROB_EPS).ln())
}

/// Mean binary cross-entropy over a batch of probabilities (any shape, one
/// target per element). Returns the loss and its gradient w.r.t. `p`.
pub fn bce_batch<T: Scalar>(p: &Tensor<T>, targets: &[T]) -> Result<(f64, Tensor<T>)> {
    if p.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            p.len(),
            targets.len()
        )));
    }
    let n = p.len() as f64;
    let eps = T::from_f64_lossy(PROB_EPS);
    let hi = T::one() - eps;
    let mut loss = 0.0;
    let grad = p
        .values()
        .iter()
        .zip(targets)
        .map(|(&pv, &t)| {
            loss += bce(pv.to_f64_lossy(), t.to_f64_lossy());
            if pv < eps || pv > hi {
                T::zero()
            } else {
                let g = -t / pv + (T::one() - t) / (T::one() - pv);
                g / T::from_f64_lossy(n)
            }
        })
        .collect();
    Ok((loss / n, Tensor::raw(p.shape().to_vec(), grad)))
}

/// Mean cross-entropy over rows of an `n x classes` probability tensor.
/// Returns the loss and its gradient w.r.t. the probabilities.
pub fn xent_batch<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    if probs.rank() != 2 || probs.batch() != labels.len() {
        return Err(Error::Shape(format!(
            "probabilities {:?} for {} labels",
            probs.shape(),
            labels.len()
        )));
    }
    let classes = probs.shape()[1];
    let n = labels.len();
    let eps = T::from_f64_lossy(PROB_EPS);
    let mut grad = vec![T::zero(); probs.len()];
    let mut loss = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label { label, classes });
        }
        let p = probs.values()[s * classes + label];
        loss += -p.to_f64_lossy().max(PROB_EPS).ln();
        if p >= eps {
            grad[s * classes + label] = -T::one() / (p * T::from_usize(n).unwrap());
        }
    }
    Ok((loss / n as f64, Tensor::raw(probs.shape().to_vec(), grad)))
}

/// Concatenates `n x f_i` feature tensors along the feature axis.
pub fn concat_features<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
    let n = first.batch();
    if parts.iter().any(|t| t.rank() != 2 || t.batch() != n) {
        return Err(Error::Shape("concat expects n x features tensors with equal n".into()));
    }
    let width: usize = parts.iter().map(|t| t.shape()[1]).sum();
    let mut values = Vec::with_capacity(n * width);
    for s in 0..n {
        for t in parts {
            values.extend_from_slice(t.sample(s));
        }
    }
    Ok(Tensor::raw(vec![n, width], values))
}

/// Splits the gradient of a concatenation back into per-part gradients.
pub fn split_features<T: Scalar>(grad: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let n = grad.batch();
    if grad.rank() != 2 || widths.iter().sum::<usize>() != grad.shape()[1] {
        return Err(Error::Shape(format!("cannot split {:?} into {widths:?}", grad.shape())));
    }
    let mut parts: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(n * w)).collect();
    for s in 0..n {
        let row = grad.sample(s);
        let mut off = 0;
        for (part, &w) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    Ok(parts
        .into_iter()
        .zip(widths)
        .map(|(v, &w)| Tensor::raw(vec![n, w], v))
        .collect())
}
