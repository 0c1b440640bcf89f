use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Rmse,
}

/// Row-wise softmax of `(N, K, 1, 1)` logits.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let k = logits.dims().sample_len().max(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Mean cross-entropy against target distributions (one-hot or soft), and
/// its gradient with respect to the logits.
pub fn softmax_cross_entropy_dense<T: Scalar>(logits: &Tensor4<T>, targets: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    if logits.dims() != targets.dims() {
        return Err(Error::DimMismatch { op: "cross entropy", left: logits.dims(), right: targets.dims() });
    }
    let d = logits.dims();
    let k = d.sample_len();
    let nf = T::of(d.n as f64);
    let mut loss = T::zero();
    let mut grad = softmax(logits);
    for s in 0..d.n {
        let row = logits.sample(s);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let t = targets.sample(s);
        loss += t.iter().zip(row).map(|(&tv, &v)| tv * (lse - v)).sum::<T>();
        for (g, &tv) in grad.data_mut()[s * k..(s + 1) * k].iter_mut().zip(t) {
            *g = (*g - tv) / nf;
        }
    }
    Ok((loss / nf, grad))
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor4<T>> {
    let mut t = Tensor4::zeros(crate::tensor::Dims::new(labels.len(), classes, 1, 1));
    for (s, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Shape(format!("label {l} out of range for {classes} classes")));
        }
        t.data_mut()[s * classes + l] = T::one();
    }
    Ok(t)
}

/// Mean cross-entropy with class-index labels.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(T, Tensor4<T>)> {
    let d = logits.dims();
    if labels.len() != d.n {
        return Err(Error::Shape(format!("{} labels for batch of {}", labels.len(), d.n)));
    }
    softmax_cross_entropy_dense(logits, &one_hot(labels, d.sample_len())?)
}

/// Root of the mean squared error over every element, with gradient
/// (zero when the error is zero).
pub fn rmse<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    let diff = pred.zip_map(target, |a, b| a - b)?;
    let m = T::of(diff.dims().len().max(1) as f64);
    let value = (diff.data().iter().map(|&v| v * v).sum::<T>() / m).sqrt();
    let grad = if value > T::zero() { diff.scale(T::one() / (m * value)) } else { Tensor4::zeros(diff.dims()) };
    Ok((value, grad))
}
