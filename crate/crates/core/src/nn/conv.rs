//! Stride-1 2-D cross-correlation with `same` or `valid` zero padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

impl Padding {
    /// Zero rows/cols added on each side for a `kernel x kernel` filter.
    pub fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Same => kernel / 2,
            Padding::Valid => 0,
        }
    }

    /// Output side length, or `None` when the kernel does not fit.
    pub fn output_size(self, input: usize, kernel: usize) -> Option<usize> {
        match self {
            Padding::Same => Some(input),
            Padding::Valid => input.checked_sub(kernel).map(|d| d + 1),
        }
    }
}

/// Filters `(F, C_in, k, k)` and an optional bias `(F, 1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Option<Tensor4<T>>,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Option<Tensor4<T>>,
}

struct Geometry {
    x: Dims,
    out: Dims,
    filters: usize,
    kernel: usize,
    pad: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: Dims, p: &ConvParams<T>) -> Result<Self> {
        let w = p.weight.dims();
        if w.h != w.w {
            return Err(Error::Shape(format!("kernel {w} is not square")));
        }
        if w.c != x.c {
            return Err(Error::Shape(format!("conv expects {} input channels, got {}", w.c, x.c)));
        }
        if p.padding == Padding::Same && w.h.is_multiple_of(2) {
            return Err(Error::Shape(format!("'same' padding needs an odd kernel, got {}", w.h)));
        }
        if let Some(b) = &p.bias {
            if b.dims() != Dims::new(w.n, 1, 1, 1) {
                return Err(Error::Shape(format!("bias {} does not match {} filters", b.dims(), w.n)));
            }
        }
        let (Some(oh), Some(ow)) = (p.padding.output_size(x.h, w.h), p.padding.output_size(x.w, w.h)) else {
            return Err(Error::Shape(format!("kernel {} exceeds input {}x{}", w.h, x.h, x.w)));
        };
        Ok(Geometry {
            x,
            out: Dims::new(x.n, w.n, oh, ow),
            filters: w.n,
            kernel: w.h,
            pad: p.padding.amount(w.h),
        })
    }

    /// Output index range `[lo, hi)` whose tap `t` lands inside an input axis of `len`.
    #[inline]
    fn valid_range(&self, t: usize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(t);
        let hi = (len + self.pad).saturating_sub(t).min(out_len);
        (lo, hi.max(lo))
    }
}

pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, p: &ConvParams<T>) -> Result<Tensor4<T>> {
    let g = Geometry::new(x.dims(), p)?;
    let (xd, od, k) = (g.x, g.out, g.kernel);
    let mut out = Tensor4::zeros(od);
    let wdata = p.weight.data();
    let odata = out.data_mut();
    for n in 0..xd.n {
        for f in 0..g.filters {
            let plane = &mut odata[od.offset(n, f, 0, 0)..od.offset(n, f + 1, 0, 0)];
            if let Some(b) = &p.bias {
                plane.fill(b.data()[f]);
            }
            for c in 0..xd.c {
                let xplane = x.plane(n, c);
                for ki in 0..k {
                    let (i0, i1) = g.valid_range(ki, xd.h, od.h);
                    for kj in 0..k {
                        let wv = wdata[((f * xd.c + c) * k + ki) * k + kj];
                        let (j0, j1) = g.valid_range(kj, xd.w, od.w);
                        for oi in i0..i1 {
                            let xi = oi + ki - g.pad;
                            let src = &xplane[xi * xd.w + j0 + kj - g.pad..xi * xd.w + j1 + kj - g.pad];
                            let dst = &mut plane[oi * od.w + j0..oi * od.w + j1];
                            for (o, &v) in dst.iter_mut().zip(src) {
                                *o += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a conv layer at input `x` given the upstream gradient.
pub fn conv2d_backward<T: Scalar>(x: &Tensor4<T>, p: &ConvParams<T>, grad: &Tensor4<T>) -> Result<ConvGrads<T>> {
    let g = Geometry::new(x.dims(), p)?;
    if grad.dims() != g.out {
        return Err(Error::DimMismatch { op: "conv2d backward", left: g.out, right: grad.dims() });
    }
    let (xd, od, k) = (g.x, g.out, g.kernel);
    let mut gx = Tensor4::zeros(xd);
    let mut gw = Tensor4::zeros(p.weight.dims());
    let wdata = p.weight.data();
    for n in 0..xd.n {
        for f in 0..g.filters {
            let gplane = grad.plane(n, f);
            for c in 0..xd.c {
                let xplane = x.plane(n, c);
                let gx_start = xd.offset(n, c, 0, 0);
                for ki in 0..k {
                    let (i0, i1) = g.valid_range(ki, xd.h, od.h);
                    for kj in 0..k {
                        let widx = ((f * xd.c + c) * k + ki) * k + kj;
                        let wv = wdata[widx];
                        let (j0, j1) = g.valid_range(kj, xd.w, od.w);
                        let mut acc = T::zero();
                        for oi in i0..i1 {
                            let xrow = gx_start + (oi + ki - g.pad) * xd.w;
                            let grow = &gplane[oi * od.w + j0..oi * od.w + j1];
                            let xs = xrow + j0 + kj - g.pad;
                            let xsrc = &xplane[xs - gx_start..xs - gx_start + grow.len()];
                            for (&gv, &xv) in grow.iter().zip(xsrc) {
                                acc += gv * xv;
                            }
                            let dst = &mut gx.data_mut()[xs..xs + grow.len()];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    let gb = p.bias.as_ref().map(|b| {
        let mut gb = Tensor4::zeros(b.dims());
        for n in 0..od.n {
            for f in 0..g.filters {
                gb.data_mut()[f] += grad.plane(n, f).iter().copied().sum::<T>();
            }
        }
        gb
    });
    Ok(ConvGrads { input: gx, weight: gw, bias: gb })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(weight: Tensor4<f64>, padding: Padding) -> ConvParams<f64> {
        ConvParams { weight, bias: None, padding }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor4::<f64>::from_fn(Dims::new(2, 1, 3, 3), |n, _, i, j| (n * 9 + i * 3 + j) as f64);
        let p = params(Tensor4::full(Dims::new(1, 1, 1, 1), 1.0), Padding::Same);
        assert_eq!(conv2d_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn valid_ones_kernel_sums() {
        let x = Tensor4::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let p = params(Tensor4::full(Dims::new(1, 1, 2, 2), 1.0), Padding::Valid);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn same_padding_zero_fills_borders() {
        let x = Tensor4::<f64>::full(Dims::new(1, 1, 3, 3), 1.0);
        let p = params(Tensor4::full(Dims::new(1, 1, 3, 3), 1.0), Padding::Same);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn is_cross_correlation() {
        // an unmirrored kernel picks the right neighbour
        let x = Tensor4::<f64>::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
        let w = Tensor4::from_vec(Dims::new(1, 1, 1, 3), vec![0.0, 0.0, 1.0]).unwrap();
        let p = params(w, Padding::Valid);
        assert!(Geometry::new(x.dims(), &p).is_err());
        let w = Tensor4::from_rows(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]).unwrap();
        let y = conv2d_forward(&x, &params(w, Padding::Same)).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn bias_grad_is_channel_sum_and_zero_grad_is_zero() {
        let x = Tensor4::<f64>::from_fn(Dims::new(2, 2, 4, 4), |n, c, i, j| (n + c + i * j) as f64 * 0.1);
        let p = ConvParams {
            weight: Tensor4::full(Dims::new(3, 2, 3, 3), 0.5),
            bias: Some(Tensor4::zeros(Dims::new(3, 1, 1, 1))),
            padding: Padding::Same,
        };
        let y = conv2d_forward(&x, &p).unwrap();
        let g = Tensor4::from_fn(y.dims(), |n, f, i, j| (n + 2 * f + i + j) as f64);
        let grads = conv2d_backward(&x, &p, &g).unwrap();
        let gb = grads.bias.unwrap();
        for f in 0..3 {
            let want: f64 = (0..2).map(|n| g.plane(n, f).iter().sum::<f64>()).sum();
            assert_eq!(gb.data()[f], want);
        }
        let zero = conv2d_backward(&x, &p, &Tensor4::zeros(y.dims())).unwrap();
        assert!(zero.input.data().iter().chain(zero.weight.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let x = Tensor4::<f64>::zeros(Dims::new(1, 2, 3, 3));
        let wrong_c = params(Tensor4::zeros(Dims::new(1, 3, 3, 3)), Padding::Same);
        assert!(conv2d_forward(&x, &wrong_c).is_err());
        let too_big = params(Tensor4::zeros(Dims::new(1, 2, 5, 5)), Padding::Valid);
        assert!(conv2d_forward(&x, &too_big).is_err());
        let even_same = params(Tensor4::zeros(Dims::new(1, 2, 2, 2)), Padding::Same);
        assert!(conv2d_forward(&x, &even_same).is_err());
    }
}
