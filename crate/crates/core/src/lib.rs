//! Convolutional networks with built-in cyclic (C4) or dihedral (D4)
//! rotation symmetry.
//!
//! The four pathway layers in [`cyclic`] (slice, pool, stack, roll) turn an
//! ordinary CNN into one that is invariant or same-equivariant to
//! interpolation-free rotations and flips, while sharing each filter across
//! orientations. Everything numeric is generic over [`Scalar`] (`f32`/`f64`).

pub mod cyclic;
pub mod error;
pub mod group;
pub mod nn;
pub mod oracle;
pub mod scalar;
pub mod tensor;

pub use cyclic::{PathwayBatch, PoolFunction, PoolKind};
pub use error::{Error, Result};
pub use group::{GroupElement, GroupKind, PathwayPermutation};
pub use scalar::{DType, Scalar};
pub use tensor::{Dims, Tensor4};

pub type Tensor4F32 = Tensor4<f32>;
pub type Tensor4F64 = Tensor4<f64>;
pub type NetworkF32 = nn::Network<f32>;
pub type NetworkF64 = nn::Network<f64>;
pub type PathwayBatchF32 = PathwayBatch<f32>;
pub type PathwayBatchF64 = PathwayBatch<f64>;
