use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Fully connected layer: weight `(out, in, 1, 1)`, optional bias `(out, 1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Option<Tensor4<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Option<Tensor4<T>>,
}

fn check<T: Scalar>(x: &Tensor4<T>, p: &DenseParams<T>) -> Result<(usize, usize)> {
    let (xd, wd) = (x.dims(), p.weight.dims());
    if xd.h != 1 || xd.w != 1 {
        return Err(Error::Shape(format!("dense layer needs flattened input, got {xd}")));
    }
    if wd.c != xd.c || wd.h != 1 || wd.w != 1 {
        return Err(Error::Shape(format!("dense weight {wd} does not accept input {xd}")));
    }
    Ok((wd.n, wd.c))
}

pub fn dense_forward<T: Scalar>(x: &Tensor4<T>, p: &DenseParams<T>) -> Result<Tensor4<T>> {
    let (outs, ins) = check(x, p)?;
    let n = x.dims().n;
    let mut y = Tensor4::zeros(Dims::new(n, outs, 1, 1));
    let w = p.weight.data();
    for (s, row) in y.data_mut().chunks_exact_mut(outs).enumerate() {
        let xs = x.sample(s);
        for (o, out) in row.iter_mut().enumerate() {
            let dot: T = w[o * ins..(o + 1) * ins].iter().zip(xs).map(|(&a, &b)| a * b).sum();
            *out = dot + p.bias.as_ref().map_or(T::zero(), |b| b.data()[o]);
        }
    }
    Ok(y)
}

pub fn dense_backward<T: Scalar>(x: &Tensor4<T>, p: &DenseParams<T>, grad: &Tensor4<T>) -> Result<DenseGrads<T>> {
    let (outs, ins) = check(x, p)?;
    let n = x.dims().n;
    if grad.dims() != Dims::new(n, outs, 1, 1) {
        return Err(Error::DimMismatch { op: "dense backward", left: Dims::new(n, outs, 1, 1), right: grad.dims() });
    }
    let w = p.weight.data();
    let mut gx = Tensor4::zeros(x.dims());
    let mut gw = Tensor4::zeros(p.weight.dims());
    for s in 0..n {
        let xs = x.sample(s);
        let gs = grad.sample(s);
        let gxs = &mut gx.data_mut()[s * ins..(s + 1) * ins];
        for (o, &g) in gs.iter().enumerate() {
            let wrow = &w[o * ins..(o + 1) * ins];
            for (d, &wv) in gxs.iter_mut().zip(wrow) {
                *d += g * wv;
            }
            let gwrow = &mut gw.data_mut()[o * ins..(o + 1) * ins];
            for (d, &xv) in gwrow.iter_mut().zip(xs) {
                *d += g * xv;
            }
        }
    }
    let gb = p.bias.as_ref().map(|b| {
        let mut gb = Tensor4::zeros(b.dims());
        for s in 0..n {
            for (d, &g) in gb.data_mut().iter_mut().zip(grad.sample(s)) {
                *d += g;
            }
        }
        gb
    });
    Ok(DenseGrads { input: gx, weight: gw, bias: gb })
}
