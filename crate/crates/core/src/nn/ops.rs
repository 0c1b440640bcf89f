//! Parameter-free per-pathway layers: ReLU, spatial max pooling, flatten.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient through ReLU given the layer's input; zero at the kink.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.zip_map(grad, |v, g| if v > T::zero() { g } else { T::zero() })
}

pub fn maxpool_output_size(input: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || window > input {
        return None;
    }
    Some((input - window) / stride + 1)
}

/// Max pooling without padding. Returns the output and, for every output
/// element, the flat input offset that produced it (first maximum in
/// row-major window order).
pub fn maxpool2d<T: Scalar>(x: &Tensor4<T>, window: usize, stride: usize) -> Result<(Tensor4<T>, Vec<usize>)> {
    let d = x.dims();
    let (Some(oh), Some(ow)) = (maxpool_output_size(d.h, window, stride), maxpool_output_size(d.w, window, stride))
    else {
        return Err(Error::Shape(format!("pool window {window}/stride {stride} does not fit {d}")));
    };
    let od = Dims::new(d.n, d.c, oh, ow);
    let mut out = Vec::with_capacity(od.len());
    let mut argmax = Vec::with_capacity(od.len());
    let xs = x.data();
    for n in 0..d.n {
        for c in 0..d.c {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = d.offset(n, c, oi * stride, oj * stride);
                    for di in 0..window {
                        for dj in 0..window {
                            let at = d.offset(n, c, oi * stride + di, oj * stride + dj);
                            if xs[at] > xs[best] {
                                best = at;
                            }
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor4::from_vec(od, out)?, argmax))
}

pub fn maxpool2d_backward<T: Scalar>(input: Dims, argmax: &[usize], grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    if argmax.len() != grad.dims().len() {
        return Err(Error::Shape("max pool gradient does not match recorded winners".into()));
    }
    let mut gx = Tensor4::zeros(input);
    let buf = gx.data_mut();
    for (&at, &g) in argmax.iter().zip(grad.data()) {
        buf[at] += g;
    }
    Ok(gx)
}

/// `(N, C, H, W)` to `(N, C*H*W, 1, 1)`, keeping row-major order.
pub fn flatten<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let d = x.dims();
    x.clone().reshape(Dims::new(d.n, d.sample_len(), 1, 1)).expect("same length")
}

pub fn flatten_backward<T: Scalar>(input: Dims, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad.clone().reshape(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps() {
        let x = Tensor4::<f64>::from_vec(Dims::new(3, 1, 1, 1), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor4::full(x.dims(), 1.0);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor4::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
        assert!(maxpool2d(&x, 3, 2).is_err());

        // overlapping 3/2 window over 5x5 gives 2x2
        let x = Tensor4::<f64>::from_fn(Dims::new(1, 1, 5, 5), |_, _, i, j| (i * 5 + j) as f64);
        let (y, _) = maxpool2d(&x, 3, 2).unwrap();
        assert_eq!(y.data(), &[12.0, 14.0, 22.0, 24.0]);
    }

    #[test]
    fn maxpool_ties_pick_first_in_scan_order() {
        let x = Tensor4::<f64>::full(Dims::new(1, 1, 2, 2), 1.0);
        let (_, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(idx, vec![0]);
        let g = maxpool2d_backward(x.dims(), &idx, &Tensor4::full(Dims::new(1, 1, 1, 1), 5.0)).unwrap();
        assert_eq!(g.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn flatten_layout() {
        let x = Tensor4::<f64>::from_fn(Dims::new(2, 2, 2, 2), |n, c, i, j| (n * 8 + c * 4 + i * 2 + j) as f64);
        let f = flatten(&x);
        assert_eq!(f.dims(), Dims::new(2, 8, 1, 1));
        assert_eq!(f.data(), x.data());
        assert_eq!(flatten_backward(x.dims(), &f).unwrap(), x);
    }
}
