//! Cyclic slice, pool, stack and roll layers.
//!
//! A sliced batch stores `|G|` pathway blocks contiguously along the batch
//! axis, block `p` holding data seen through group element `g_p` (in
//! [`GroupKind::elements`] order). All four layers have no parameters; each
//! forward function has a matching adjoint used during backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupElement, GroupKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// A tensor together with its pathway layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwayBatch<T> {
    tensor: Tensor4<T>,
    kind: GroupKind,
    pathways: usize,
}

impl<T: Scalar> PathwayBatch<T> {
    /// An ordinary (unsliced) batch.
    pub fn plain(tensor: Tensor4<T>, kind: GroupKind) -> Self {
        PathwayBatch { tensor, kind, pathways: 1 }
    }

    /// Wraps a tensor whose batch already holds `|G|` pathway blocks.
    pub fn sliced(tensor: Tensor4<T>, kind: GroupKind) -> Result<Self> {
        if !tensor.dims().n.is_multiple_of(kind.order()) {
            return Err(Error::Shape(format!(
                "batch of {} is not a multiple of |{kind}| = {}",
                tensor.dims().n,
                kind.order()
            )));
        }
        Ok(PathwayBatch { tensor, kind, pathways: kind.order() })
    }

    pub fn tensor(&self) -> &Tensor4<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor4<T> {
        self.tensor
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn pathways(&self) -> usize {
        self.pathways
    }

    pub fn is_sliced(&self) -> bool {
        self.pathways > 1
    }

    /// Batch size before slicing.
    pub fn base_batch(&self) -> usize {
        self.tensor.dims().n / self.pathways
    }

    pub fn blocks(&self) -> Vec<Tensor4<T>> {
        self.tensor.split_batch_even(self.pathways).expect("pathway layout invariant")
    }

    fn expect_sliced(&self, op: &str) -> Result<()> {
        if self.pathways != self.kind.order() {
            return Err(Error::Shape(format!(
                "{op} needs {} pathways, got {}",
                self.kind.order(),
                self.pathways
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    #[default]
    Mean,
    Max,
    Rms,
}

/// Permutation-invariant reduction over the realigned pathway blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PoolFunction {
    pub kind: PoolKind,
    /// Apply `max(0, .)` to every realigned block before reducing.
    pub pre_relu: bool,
}

impl PoolFunction {
    pub const MEAN: PoolFunction = PoolFunction { kind: PoolKind::Mean, pre_relu: false };

    pub fn new(kind: PoolKind, pre_relu: bool) -> Self {
        PoolFunction { kind, pre_relu }
    }

    /// Reduces one element across pathways.
    pub fn reduce<T: Scalar>(self, values: &[T]) -> T {
        let g = T::of(values.len() as f64);
        let relu = |v: T| if self.pre_relu { v.max(T::zero()) } else { v };
        match self.kind {
            PoolKind::Mean => values.iter().map(|&v| relu(v)).sum::<T>() / g,
            PoolKind::Max => values.iter().map(|&v| relu(v)).fold(T::neg_infinity(), T::max),
            PoolKind::Rms => (values.iter().map(|&v| relu(v) * relu(v)).sum::<T>() / g).sqrt(),
        }
    }
}

fn square_check<T: Scalar>(x: &Tensor4<T>, op: &str) -> Result<()> {
    if !x.dims().is_square() {
        return Err(Error::Shape(format!("{op} needs square feature maps, got {}", x.dims())));
    }
    Ok(())
}

/// `S(x) = [g_0 x, g_1 x, ...]` stacked along the batch axis.
pub fn slice<T: Scalar>(x: &PathwayBatch<T>) -> Result<PathwayBatch<T>> {
    if x.is_sliced() {
        return Err(Error::Usage("input is already sliced".into()));
    }
    square_check(&x.tensor, "slice")?;
    let blocks: Vec<_> = x.kind.elements().into_iter().map(|g| g.apply_unchecked(&x.tensor)).collect();
    PathwayBatch::sliced(Tensor4::concat_batch(&blocks)?, x.kind)
}

/// Adjoint of [`slice`]: `sum_p g_p^-1 (grad_p)`.
pub fn slice_backward<T: Scalar>(kind: GroupKind, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    square_check(grad, "slice backward")?;
    let blocks = grad.split_batch_even(kind.order())?;
    let mut acc = Tensor4::zeros(blocks[0].dims());
    for (g, block) in kind.elements().into_iter().zip(&blocks) {
        acc.add_assign(&g.inverse().apply_unchecked(block))?;
    }
    Ok(acc)
}

/// Values kept from a pool forward pass.
#[derive(Debug, Clone)]
pub struct PoolCache<T> {
    kind: GroupKind,
    func: PoolFunction,
    realign: bool,
    /// Realigned blocks before the optional ReLU.
    aligned: Vec<Tensor4<T>>,
    output: Tensor4<T>,
}

fn realign<T: Scalar>(kind: GroupKind, blocks: Vec<Tensor4<T>>) -> Vec<Tensor4<T>> {
    kind.elements()
        .into_iter()
        .zip(blocks)
        .map(|(g, b)| g.inverse().apply_unchecked(&b))
        .collect()
}

/// `P(x) = p(g_0^-1 x_0, g_1^-1 x_1, ...)`, or `p(x_0, x_1, ...)` without realignment.
pub fn pool<T: Scalar>(
    x: &PathwayBatch<T>,
    func: PoolFunction,
    realign_blocks: bool,
) -> Result<(PathwayBatch<T>, PoolCache<T>)> {
    x.expect_sliced("pool")?;
    if realign_blocks {
        square_check(&x.tensor, "realigning pool")?;
    }
    let blocks = x.blocks();
    let aligned = if realign_blocks { realign(x.kind, blocks) } else { blocks };
    let dims = aligned[0].dims();
    let mut lane = vec![T::zero(); aligned.len()];
    let data = (0..dims.len())
        .map(|i| {
            for (slot, b) in lane.iter_mut().zip(&aligned) {
                *slot = b.data()[i];
            }
            func.reduce(&lane)
        })
        .collect();
    let output = Tensor4::from_vec(dims, data)?;
    let cache = PoolCache { kind: x.kind, func, realign: realign_blocks, aligned, output: output.clone() };
    Ok((PathwayBatch::plain(output, x.kind), cache))
}

/// Adjoint of [`pool`] at the cached point.
///
/// Max routes the gradient to the first maximal pathway; RMS has zero
/// subgradient where the output is zero; the optional ReLU masks
/// non-positive realigned inputs.
pub fn pool_backward<T: Scalar>(cache: &PoolCache<T>, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad.dims() != cache.output.dims() {
        return Err(Error::DimMismatch { op: "pool backward", left: cache.output.dims(), right: grad.dims() });
    }
    let g_count = cache.aligned.len();
    let gf = T::of(g_count as f64);
    let relu_on = cache.func.pre_relu;
    let act = |v: T| if relu_on { v.max(T::zero()) } else { v };
    let mut grads: Vec<Tensor4<T>> = cache.aligned.iter().map(|b| Tensor4::zeros(b.dims())).collect();
    let mut bufs: Vec<&mut [T]> = grads.iter_mut().map(|t| t.data_mut()).collect();
    for (i, (&g, &y)) in grad.data().iter().zip(cache.output.data()).enumerate() {
        match cache.func.kind {
            PoolKind::Mean => {
                for buf in bufs.iter_mut() {
                    buf[i] = g / gf;
                }
            }
            PoolKind::Max => {
                let winner = (0..g_count)
                    .find(|&p| act(cache.aligned[p].data()[i]) == y)
                    .expect("max is attained");
                bufs[winner][i] = g;
            }
            PoolKind::Rms => {
                if y > T::zero() {
                    for (p, buf) in bufs.iter_mut().enumerate() {
                        buf[i] = g * act(cache.aligned[p].data()[i]) / (gf * y);
                    }
                }
            }
        }
        if relu_on {
            for (p, buf) in bufs.iter_mut().enumerate() {
                if cache.aligned[p].data()[i] <= T::zero() {
                    buf[i] = T::zero();
                }
            }
        }
    }
    let blocks: Vec<_> = if cache.realign {
        cache.kind.elements().into_iter().zip(&grads).map(|(g, b)| g.apply_unchecked(b)).collect()
    } else {
        grads
    };
    Tensor4::concat_batch(&blocks)
}

/// `T(x) = [g_0^-1 x_0, g_1^-1 x_1, ...]` concatenated along channels.
pub fn stack<T: Scalar>(x: &PathwayBatch<T>) -> Result<PathwayBatch<T>> {
    x.expect_sliced("stack")?;
    square_check(&x.tensor, "stack")?;
    let aligned = realign(x.kind, x.blocks());
    Ok(PathwayBatch::plain(Tensor4::concat_channel(&aligned)?, x.kind))
}

/// Adjoint of [`stack`].
pub fn stack_backward<T: Scalar>(kind: GroupKind, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    square_check(grad, "stack backward")?;
    let parts = grad.split_channel_even(kind.order())?;
    let blocks: Vec<_> = kind.elements().into_iter().zip(&parts).map(|(g, b)| g.apply_unchecked(b)).collect();
    Tensor4::concat_batch(&blocks)
}

/// Input block feeding output pathway `g`, channel block `h`: the block of `h g`.
#[inline]
fn roll_source(g: GroupElement, h: GroupElement) -> usize {
    h.mul(g).index()
}

/// Roll: output pathway `g`, channel block `h` is `h^-1 x[h g]`.
///
/// For C4 this is `R(x) = [T(x), T(sigma x), T(sigma^2 x), T(sigma^3 x)]`. The
/// source index `h g` (rather than `g h`) keeps the layer equivariant under
/// every slice permutation, including the non-cyclic ones of D4.
pub fn roll<T: Scalar>(x: &PathwayBatch<T>) -> Result<PathwayBatch<T>> {
    x.expect_sliced("roll")?;
    square_check(&x.tensor, "roll")?;
    let blocks = x.blocks();
    let elems = x.kind.elements();
    let mut rows = Vec::with_capacity(elems.len());
    for &g in &elems {
        let parts: Vec<_> = elems
            .iter()
            .map(|&h| h.inverse().apply_unchecked(&blocks[roll_source(g, h)]))
            .collect();
        rows.push(Tensor4::concat_channel(&parts)?);
    }
    PathwayBatch::sliced(Tensor4::concat_batch(&rows)?, x.kind)
}

/// Adjoint of [`roll`]: every input block collects its `|G|` appearances.
pub fn roll_backward<T: Scalar>(kind: GroupKind, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    square_check(grad, "roll backward")?;
    let elems = kind.elements();
    let rows = grad.split_batch_even(elems.len())?;
    let mut acc: Vec<Option<Tensor4<T>>> = vec![None; elems.len()];
    for (&g, row) in elems.iter().zip(&rows) {
        for (&h, part) in elems.iter().zip(row.split_channel_even(elems.len())?) {
            let contrib = h.apply_unchecked(&part);
            match &mut acc[roll_source(g, h)] {
                Some(sum) => sum.add_assign(&contrib)?,
                slot @ None => *slot = Some(contrib),
            }
        }
    }
    let blocks: Vec<_> = acc.into_iter().map(|b| b.expect("every block is a source")).collect();
    Tensor4::concat_batch(&blocks)
}
