//! Class probabilities, loss and accuracy, optionally averaged over the four
//! quarter-turned copies of every input.

use cyclicnet::nn::{softmax, Network};
use cyclicnet::{Error, Scalar, Tensor4};
use serde::{Deserialize, Serialize};

use crate::error::Result;

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

/// Softmax outputs `(N,K,1,1)` in 64-bit. With `tta`, the mean of the
/// softmax over `x`, `r x`, `r^2 x` and `r^3 x`.
pub fn predict_proba<T: Scalar>(net: &Network<T>, images: &Tensor4<f64>, tta: bool) -> Result<Tensor4<f64>> {
    let out = net.arch().output_shape();
    if out.height != 1 || out.width != 1 {
        return Err(Error::Usage(format!("classification metrics need a Kx1x1 output, model gives {out}")).into());
    }
    let turns = if tta { 4 } else { 1 };
    let n = images.dims().n;
    let mut parts = Vec::new();
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..n.min(start + CHUNK)).collect();
        let x = images.select_batch(&idx).cast::<T>();
        let mut acc: Option<Tensor4<f64>> = None;
        for k in 0..turns {
            let p = softmax(&net.forward(&x.rotate90(k))?).cast::<f64>();
            match acc.as_mut() {
                Some(a) => a.add_assign(&p)?,
                None => acc = Some(p),
            }
        }
        parts.push(acc.expect("at least one turn").scale(1.0 / turns as f64));
    }
    Ok(Tensor4::concat_batch(&parts)?)
}

/// Mean negative log probability of the true class, and top-1 accuracy.
pub fn metrics_from_proba(proba: &Tensor4<f64>, labels: &[usize]) -> Result<EvalMetrics> {
    let d = proba.dims();
    if d.n != labels.len() || labels.iter().any(|&l| l >= d.c) {
        return Err(Error::Shape(format!("{} labels do not fit probabilities {d}", labels.len())).into());
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (n, &label) in labels.iter().enumerate() {
        let p = proba.sample(n);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        let best = (0..d.c).fold(0, |b, c| if p[c] > p[b] { c } else { b });
        correct += usize::from(best == label);
    }
    let samples = labels.len();
    Ok(EvalMetrics { loss: loss / samples as f64, accuracy: correct as f64 / samples as f64, samples })
}

pub fn evaluate<T: Scalar>(net: &Network<T>, images: &Tensor4<f64>, labels: &[usize], tta: bool) -> Result<EvalMetrics> {
    metrics_from_proba(&predict_proba(net, images, tta)?, labels)
}
