//! Dense `(N, C, H, W)` tensors and the interpolation-free spatial symmetries.
//!
//! Storage is row-major with the batch axis outermost, so a run of batch
//! entries (a pathway block) is one contiguous slice of the buffer.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub mod dump;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch entry.
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub const fn is_square(&self) -> bool {
        self.h == self.w
    }

    #[inline]
    pub const fn offset(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.c + c) * self.h + i) * self.w + j
    }

    pub const fn with_batch(self, n: usize) -> Self {
        Dims { n, ..self }
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Dims { c, ..self }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Four-dimensional real tensor in `(batch, channel, row, col)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "buffer of {} elements cannot hold {dims}",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor4 { dims, data: vec![T::zero(); dims.len()] }
    }

    pub fn full(dims: Dims, value: T) -> Self {
        Tensor4 { dims, data: vec![value; dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for i in 0..dims.h {
                    for j in 0..dims.w {
                        data.push(f(n, c, i, j));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    /// Builds a `(1, 1, H, W)` tensor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::of(v))).collect();
        Tensor4::from_vec(Dims::new(1, 1, h, w), data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, i: usize, j: usize) -> T {
        self.data[self.dims.offset(n, c, i, j)]
    }

    /// Same buffer under new dims of equal length.
    pub fn reshape(self, dims: Dims) -> Result<Self> {
        if dims.len() != self.dims.len() {
            return Err(Error::Shape(format!("cannot reshape {} into {dims}", self.dims)));
        }
        Ok(Tensor4 { dims, data: self.data })
    }

    /// Contiguous view of batch entries `start..start + count`.
    pub fn batch_slice(&self, start: usize, count: usize) -> &[T] {
        let s = self.dims.sample_len();
        &self.data[start * s..(start + count) * s]
    }

    pub fn sample(&self, n: usize) -> &[T] {
        self.batch_slice(n, 1)
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.dims.plane_len();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    /// Gathers the listed batch entries into a new tensor.
    pub fn select_batch(&self, indices: &[usize]) -> Tensor4<T> {
        let mut data = Vec::with_capacity(indices.len() * self.dims.sample_len());
        for &n in indices {
            data.extend_from_slice(self.sample(n));
        }
        Tensor4 { dims: self.dims.with_batch(indices.len()), data }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor4<T> {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor4<T>, f: impl Fn(T, T) -> T) -> Result<Tensor4<T>> {
        self.expect_dims("zip_map", other.dims)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor4 { dims: self.dims, data })
    }

    pub fn add_assign(&mut self, other: &Tensor4<T>) -> Result<()> {
        self.expect_dims("add_assign", other.dims)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Tensor4<T> {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Tensor4<T>) -> Result<T> {
        self.expect_dims("dot", other.dims)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    /// Largest absolute elementwise difference, as `f64`.
    pub fn max_abs_diff(&self, other: &Tensor4<T>) -> Result<f64> {
        self.expect_dims("max_abs_diff", other.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    fn expect_dims(&self, op: &'static str, other: Dims) -> Result<()> {
        if self.dims != other {
            return Err(Error::DimMismatch { op, left: self.dims, right: other });
        }
        Ok(())
    }

    /// Clockwise rotation by `k` quarter turns on the two spatial axes:
    /// `(r x)[n, c, i, j] = x[n, c, H - 1 - j, i]`.
    pub fn rotate90(&self, k: i32) -> Tensor4<T> {
        let k = k.rem_euclid(4);
        let Dims { n, c, h, w } = self.dims;
        let out_dims = if k % 2 == 1 { Dims::new(n, c, w, h) } else { self.dims };
        let mut data = Vec::with_capacity(self.data.len());
        for plane in self.data.chunks_exact(h * w) {
            let at = |i: usize, j: usize| plane[i * w + j];
            for i in 0..out_dims.h {
                for j in 0..out_dims.w {
                    data.push(match k {
                        0 => at(i, j),
                        1 => at(h - 1 - j, i),
                        2 => at(h - 1 - i, w - 1 - j),
                        _ => at(j, w - 1 - i),
                    });
                }
            }
        }
        Tensor4 { dims: out_dims, data }
    }

    /// Horizontal flip: `(f x)[n, c, i, j] = x[n, c, i, W - 1 - j]`.
    pub fn fliph(&self) -> Tensor4<T> {
        let w = self.dims.w;
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(w.max(1)) {
            row.reverse();
        }
        Tensor4 { dims: self.dims, data }
    }

    pub fn concat_batch(xs: &[Tensor4<T>]) -> Result<Tensor4<T>> {
        let first = xs.first().ok_or_else(|| Error::Shape("concat of no tensors".into()))?;
        let mut n = 0;
        for x in xs {
            if x.dims.with_batch(0) != first.dims.with_batch(0) {
                return Err(Error::DimMismatch { op: "concat_batch", left: first.dims, right: x.dims });
            }
            n += x.dims.n;
        }
        let mut data = Vec::with_capacity(n * first.dims.sample_len());
        for x in xs {
            data.extend_from_slice(&x.data);
        }
        Ok(Tensor4 { dims: first.dims.with_batch(n), data })
    }

    pub fn concat_channel(xs: &[Tensor4<T>]) -> Result<Tensor4<T>> {
        let first = xs.first().ok_or_else(|| Error::Shape("concat of no tensors".into()))?;
        let mut c = 0;
        for x in xs {
            if x.dims.with_channels(0) != first.dims.with_channels(0) {
                return Err(Error::DimMismatch { op: "concat_channel", left: first.dims, right: x.dims });
            }
            c += x.dims.c;
        }
        let dims = first.dims.with_channels(c);
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for x in xs {
                data.extend_from_slice(x.sample(n));
            }
        }
        Ok(Tensor4 { dims, data })
    }

    /// Splits along the batch axis into consecutive blocks of the given sizes.
    pub fn split_batch(&self, sizes: &[usize]) -> Result<Vec<Tensor4<T>>> {
        if sizes.iter().sum::<usize>() != self.dims.n {
            return Err(Error::Shape(format!(
                "batch split {sizes:?} does not cover batch of {}",
                self.dims.n
            )));
        }
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&s| {
                let block = Tensor4 {
                    dims: self.dims.with_batch(s),
                    data: self.batch_slice(start, s).to_vec(),
                };
                start += s;
                block
            })
            .collect())
    }

    pub fn split_channel(&self, sizes: &[usize]) -> Result<Vec<Tensor4<T>>> {
        if sizes.iter().sum::<usize>() != self.dims.c {
            return Err(Error::Shape(format!(
                "channel split {sizes:?} does not cover {} channels",
                self.dims.c
            )));
        }
        let p = self.dims.plane_len();
        let mut outs: Vec<Tensor4<T>> = sizes
            .iter()
            .map(|&s| Tensor4 {
                dims: self.dims.with_channels(s),
                data: Vec::with_capacity(self.dims.n * s * p),
            })
            .collect();
        for sample in self.data.chunks_exact(self.dims.sample_len().max(1)) {
            let mut start = 0;
            for (out, &s) in outs.iter_mut().zip(sizes) {
                out.data.extend_from_slice(&sample[start * p..(start + s) * p]);
                start += s;
            }
        }
        Ok(outs)
    }

    /// Splits the batch axis into `parts` equal blocks.
    pub fn split_batch_even(&self, parts: usize) -> Result<Vec<Tensor4<T>>> {
        if parts == 0 || !self.dims.n.is_multiple_of(parts) {
            return Err(Error::Shape(format!(
                "batch of {} does not split into {parts} equal blocks",
                self.dims.n
            )));
        }
        self.split_batch(&vec![self.dims.n / parts; parts])
    }

    pub fn split_channel_even(&self, parts: usize) -> Result<Vec<Tensor4<T>>> {
        if parts == 0 || !self.dims.c.is_multiple_of(parts) {
            return Err(Error::Shape(format!(
                "{} channels do not split into {parts} equal blocks",
                self.dims.c
            )));
        }
        self.split_channel(&vec![self.dims.c / parts; parts])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t22() -> Tensor4<f64> {
        Tensor4::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap()
    }

    fn rows(t: &Tensor4<f64>) -> Vec<Vec<f64>> {
        t.data().chunks(t.dims().w).map(|r| r.to_vec()).collect()
    }

    #[test]
    fn rotate90_pins_clockwise_direction() {
        let x = t22();
        assert_eq!(x.rotate90(0), x);
        assert_eq!(rows(&x.rotate90(1)), vec![vec![3.0, 1.0], vec![4.0, 2.0]]);
        assert_eq!(rows(&x.rotate90(2)), vec![vec![4.0, 3.0], vec![2.0, 1.0]]);
        assert_eq!(rows(&x.rotate90(3)), vec![vec![2.0, 4.0], vec![1.0, 3.0]]);
        assert_eq!(x.rotate90(-1), x.rotate90(3));
        assert_eq!(x.rotate90(5), x.rotate90(1));
    }

    #[test]
    fn rotate90_swaps_dims_on_odd_turns() {
        let x = Tensor4::<f64>::from_fn(Dims::new(2, 3, 2, 5), |n, c, i, j| (n * 1000 + c * 100 + i * 10 + j) as f64);
        let r = x.rotate90(1);
        assert_eq!(r.dims(), Dims::new(2, 3, 5, 2));
        assert_eq!(r.rotate90(3), x);
        assert_eq!(x.rotate90(2).dims(), x.dims());
        // first column read bottom-up becomes the first row
        assert_eq!(r.get(1, 2, 0, 0), x.get(1, 2, 1, 0));
        assert_eq!(r.get(1, 2, 0, 1), x.get(1, 2, 0, 0));
    }

    #[test]
    fn fliph_reverses_columns() {
        let x = t22();
        assert_eq!(rows(&x.fliph()), vec![vec![2.0, 1.0], vec![4.0, 3.0]]);
        assert_eq!(x.fliph().fliph(), x);
        let one = Tensor4::<f64>::full(Dims::new(1, 1, 1, 1), 7.0);
        assert_eq!(one.fliph(), one);
    }

    #[test]
    fn concat_and_split() {
        let a = t22();
        let b = t22().scale(-1.0);
        let cat = Tensor4::concat_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cat.dims(), Dims::new(2, 1, 2, 2));
        assert_eq!(cat.split_batch(&[1, 1]).unwrap(), vec![a.clone(), b.clone()]);

        let parts: Vec<_> = (0..4)
            .map(|k| Tensor4::<f64>::full(Dims::new(2, 8, 5, 5), k as f64))
            .collect();
        let ch = Tensor4::concat_channel(&parts).unwrap();
        assert_eq!(ch.dims(), Dims::new(2, 32, 5, 5));
        assert_eq!(ch.get(1, 17, 2, 2), 2.0);
        assert_eq!(ch.split_channel_even(4).unwrap(), parts);
    }

    #[test]
    fn concat_rejects_mismatched_dims() {
        let a = Tensor4::<f64>::zeros(Dims::new(1, 1, 2, 2));
        let b = Tensor4::<f64>::zeros(Dims::new(1, 2, 2, 2));
        assert!(matches!(Tensor4::concat_batch(&[a.clone(), b.clone()]), Err(Error::DimMismatch { .. })));
        let c = Tensor4::<f64>::zeros(Dims::new(2, 1, 2, 2));
        assert!(Tensor4::concat_channel(&[a.clone(), c]).is_err());
        assert!(Tensor4::concat_channel(&[a.clone(), b]).is_ok());
        assert!(a.split_batch(&[2]).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::<f32>::from_vec(Dims::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }
}
