//! The cyclic group C4 and dihedral group D4 acting on square feature maps.
//!
//! Elements are kept in the normal form `r^k f^m`: the action on a tensor is
//! flip first (if `m = 1`), then `k` clockwise quarter turns. With `f r f = r^-1`
//! the product is `(m1, k1)(m2, k2) = (m1 ^ m2, k1 + (-1)^m1 k2 mod 4)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    #[default]
    C4,
    D4,
}

impl GroupKind {
    pub const fn order(self) -> usize {
        match self {
            GroupKind::C4 => 4,
            GroupKind::D4 => 8,
        }
    }

    pub const fn identity(self) -> GroupElement {
        GroupElement { kind: self, flip: false, rot: 0 }
    }

    /// Canonical enumeration; for D4 unflipped elements come first.
    pub fn elements(self) -> Vec<GroupElement> {
        (0..self.order()).map(|i| self.element(i)).collect()
    }

    /// Element at position `index` of the enumeration.
    pub fn element(self, index: usize) -> GroupElement {
        assert!(index < self.order(), "group index {index} out of range for {self}");
        GroupElement { kind: self, flip: index >= 4, rot: (index % 4) as u8 }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupKind::C4 => "c4",
            GroupKind::D4 => "d4",
        })
    }
}

impl std::str::FromStr for GroupKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c4" => Ok(GroupKind::C4),
            "d4" => Ok(GroupKind::D4),
            other => Err(Error::Usage(format!("unknown group {other:?}, expected c4 or d4"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupElement {
    kind: GroupKind,
    flip: bool,
    rot: u8,
}

impl GroupElement {
    pub fn new(kind: GroupKind, flip: bool, rot: i32) -> Result<Self> {
        if flip && kind == GroupKind::C4 {
            return Err(Error::Usage("C4 has no flipped elements".into()));
        }
        Ok(GroupElement { kind, flip, rot: rot.rem_euclid(4) as u8 })
    }

    /// Quarter turn `r^k` in the given group.
    pub fn rotation(kind: GroupKind, k: i32) -> Self {
        GroupElement { kind, flip: false, rot: k.rem_euclid(4) as u8 }
    }

    pub fn kind(self) -> GroupKind {
        self.kind
    }

    pub fn flip(self) -> bool {
        self.flip
    }

    pub fn rot(self) -> u8 {
        self.rot
    }

    /// Position in [`GroupKind::elements`].
    pub fn index(self) -> usize {
        usize::from(self.flip) * 4 + self.rot as usize
    }

    pub fn is_identity(self) -> bool {
        !self.flip && self.rot == 0
    }

    pub fn compose(self, other: GroupElement) -> Result<GroupElement> {
        if self.kind != other.kind {
            return Err(Error::Usage(format!(
                "cannot compose elements of {} and {}",
                self.kind, other.kind
            )));
        }
        Ok(self.mul(other))
    }

    // Product for elements already known to share a group.
    pub(crate) fn mul(self, other: GroupElement) -> GroupElement {
        debug_assert_eq!(self.kind, other.kind);
        let k2 = if self.flip { 4 - other.rot } else { other.rot };
        GroupElement { kind: self.kind, flip: self.flip ^ other.flip, rot: (self.rot + k2) % 4 }
    }

    pub fn inverse(self) -> GroupElement {
        // flips are involutions: (r^k f)^-1 = r^k f
        if self.flip {
            self
        } else {
            GroupElement { rot: (4 - self.rot) % 4, ..self }
        }
    }

    /// `r^k (f^m x)` on the spatial axes.
    pub fn apply<T: Scalar>(self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if self.rot % 2 == 1 && !x.dims().is_square() {
            return Err(Error::Shape(format!(
                "odd rotation {self} needs square feature maps, got {}",
                x.dims()
            )));
        }
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked<T: Scalar>(self, x: &Tensor4<T>) -> Tensor4<T> {
        match (self.flip, self.rot) {
            (false, 0) => x.clone(),
            (false, k) => x.rotate90(k as i32),
            (true, 0) => x.fliph(),
            (true, k) => x.fliph().rotate90(k as i32),
        }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.flip, self.rot) {
            (false, 0) => f.write_str("e"),
            (false, k) => write!(f, "r{k}"),
            (true, 0) => f.write_str("f"),
            (true, k) => write!(f, "r{k}f"),
        }
    }
}

/// A bijection on pathway slots; `apply` sends block `perm[i]` to slot `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathwayPermutation {
    perm: Vec<usize>,
}

impl PathwayPermutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Usage(format!("{perm:?} is not a permutation")));
            }
        }
        Ok(PathwayPermutation { perm })
    }

    pub fn identity(len: usize) -> Self {
        PathwayPermutation { perm: (0..len).collect() }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// The permutation equal to applying `inner` first, then `self`.
    pub fn after(&self, inner: &PathwayPermutation) -> PathwayPermutation {
        PathwayPermutation { perm: self.perm.iter().map(|&i| inner.perm[i]).collect() }
    }

    /// Reorders the equal batch blocks of `x`: output block `i` is input block `perm[i]`.
    pub fn apply_blocks<T: Scalar>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let blocks = x.split_batch_even(self.perm.len())?;
        let permuted: Vec<_> = self.perm.iter().map(|&i| blocks[i].clone()).collect();
        Tensor4::concat_batch(&permuted)
    }
}

/// Permutation `P_g` with `slice(g x) = P_g slice(x)`.
///
/// The slot of `h` in `slice(g x)` holds `h (g x) = (h g) x`, which sits in the
/// slot of `h g` in `slice(x)`.
pub fn slice_permutation(g: GroupElement) -> PathwayPermutation {
    let perm = g.kind.elements().into_iter().map(|h| h.mul(g).index()).collect();
    PathwayPermutation { perm }
}

/// Full multiplication table, row `a`, column `b` holding `a b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CayleyTable {
    kind: GroupKind,
    products: Vec<GroupElement>,
}

impl CayleyTable {
    pub fn new(kind: GroupKind) -> Self {
        let elems = kind.elements();
        let products = elems.iter().flat_map(|&a| elems.iter().map(move |&b| a.mul(b))).collect();
        CayleyTable { kind, products }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn product(&self, a: usize, b: usize) -> GroupElement {
        self.products[a * self.kind.order() + b]
    }

    pub fn is_abelian(&self) -> bool {
        let n = self.kind.order();
        (0..n).all(|a| (0..n).all(|b| self.product(a, b) == self.product(b, a)))
    }

    /// Checks closure, identity, inverses and associativity; returns the
    /// first violated axiom.
    pub fn check_axioms(&self) -> std::result::Result<(), String> {
        let n = self.kind.order();
        let e = self.kind.identity().index();
        for a in 0..n {
            let row: std::collections::HashSet<_> = (0..n).map(|b| self.product(a, b)).collect();
            let col: std::collections::HashSet<_> = (0..n).map(|b| self.product(b, a)).collect();
            if row.len() != n || col.len() != n {
                return Err(format!("row/column {a} is not a permutation"));
            }
            if self.product(a, e).index() != a || self.product(e, a).index() != a {
                return Err(format!("identity fails at {a}"));
            }
            if !(0..n).any(|b| self.product(a, b).index() == e && self.product(b, a).index() == e) {
                return Err(format!("element {a} has no inverse"));
            }
            for b in 0..n {
                for c in 0..n {
                    let left = self.product(self.product(a, b).index(), c);
                    let right = self.product(a, self.product(b, c).index());
                    if left != right {
                        return Err(format!("associativity fails at ({a}, {b}, {c})"));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn cayley_table(kind: GroupKind) -> CayleyTable {
    CayleyTable::new(kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d4(flip: bool, rot: i32) -> GroupElement {
        GroupElement::new(GroupKind::D4, flip, rot).unwrap()
    }

    fn random_square(n: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(Dims::new(2, 2, n, n), |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn compose_examples() {
        let c4 = |k| GroupElement::rotation(GroupKind::C4, k);
        assert!(c4(1).compose(c4(3)).unwrap().is_identity());
        assert_eq!(d4(true, 0).compose(d4(false, 1)).unwrap(), d4(true, 3));
        assert_eq!(d4(false, 1).compose(d4(true, 0)).unwrap(), d4(true, 1));
        for g in GroupKind::D4.elements() {
            assert!(g.compose(g.inverse()).unwrap().is_identity());
            assert!(g.inverse().compose(g).unwrap().is_identity());
        }
    }

    #[test]
    fn compose_rejects_mixed_groups() {
        let a = GroupElement::rotation(GroupKind::C4, 1);
        let b = GroupElement::rotation(GroupKind::D4, 1);
        assert!(matches!(a.compose(b), Err(Error::Usage(_))));
        assert!(GroupElement::new(GroupKind::C4, true, 0).is_err());
    }

    #[test]
    fn composition_law_matches_action_on_tensors() {
        // witnesses non-commutativity on actual data
        let x = random_square(3, 1);
        let (f, r) = (d4(true, 0), d4(false, 1));
        let fr = f.apply(&r.apply(&x).unwrap()).unwrap();
        let rf = r.apply(&f.apply(&x).unwrap()).unwrap();
        assert_eq!(fr, d4(true, 3).apply(&x).unwrap());
        assert_eq!(rf, d4(true, 1).apply(&x).unwrap());
        assert_ne!(fr, rf);

        for a in GroupKind::D4.elements() {
            for b in GroupKind::D4.elements() {
                let lhs = a.compose(b).unwrap().apply(&x).unwrap();
                let rhs = a.apply(&b.apply(&x).unwrap()).unwrap();
                assert_eq!(lhs, rhs, "{a} * {b}");
            }
        }
    }

    #[test]
    fn apply_examples() {
        let x = Tensor4::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(GroupKind::C4.identity().apply(&x).unwrap(), x);
        assert_eq!(d4(false, 1).apply(&x).unwrap().data(), &[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(d4(true, 1).apply(&x).unwrap().data(), &[4.0, 2.0, 3.0, 1.0]);
        let wide = Tensor4::<f64>::zeros(Dims::new(1, 1, 2, 3));
        assert!(matches!(d4(false, 1).apply(&wide), Err(Error::Shape(_))));
        assert!(d4(true, 2).apply(&wide).is_ok());
    }

    #[test]
    fn flip_conjugates_rotation_to_its_inverse() {
        let x = random_square(4, 2);
        assert_eq!(x.fliph().rotate90(1).fliph(), x.rotate90(3));
    }

    #[test]
    fn slice_permutations_for_c4() {
        let sigma = slice_permutation(GroupElement::rotation(GroupKind::C4, 1));
        assert_eq!(sigma.as_slice(), &[1, 2, 3, 0]);
        assert_eq!(slice_permutation(GroupKind::C4.identity()), PathwayPermutation::identity(4));
        let mut power = PathwayPermutation::identity(4);
        for k in 0..4 {
            assert_eq!(slice_permutation(GroupElement::rotation(GroupKind::C4, k)), power);
            power = sigma.after(&power);
        }
    }

    #[test]
    fn slice_permutation_is_a_homomorphism() {
        for kind in [GroupKind::C4, GroupKind::D4] {
            for a in kind.elements() {
                for b in kind.elements() {
                    let ab = slice_permutation(a.mul(b));
                    assert_eq!(ab, slice_permutation(a).after(&slice_permutation(b)), "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn cayley_tables() {
        let c4 = cayley_table(GroupKind::C4);
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(c4.product(a, b).index(), (a + b) % 4);
            }
        }
        assert!(c4.is_abelian());
        let d4 = cayley_table(GroupKind::D4);
        d4.check_axioms().unwrap();
        c4.check_axioms().unwrap();
        assert!(!d4.is_abelian());
    }

    #[test]
    fn permutation_validation() {
        assert!(PathwayPermutation::new(vec![0, 0, 1]).is_err());
        assert!(PathwayPermutation::new(vec![0, 3]).is_err());
        assert!(PathwayPermutation::new(vec![2, 0, 1]).is_ok());
    }
}
