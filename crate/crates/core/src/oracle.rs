//! Brute-force references for testing: direct convolution, central finite
//! differences, and exhaustive group-equivariance checks.
//!
//! Nothing here shares index arithmetic with `nn`; agreement between the
//! two is what the tests assert.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cyclic::{self, PathwayBatch};
use crate::error::{Error, Result};
use crate::group::GroupKind;
use crate::nn::conv::{conv2d_forward, ConvParams, Padding};
use crate::nn::network::Network;
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Direct evaluation of `out[n,f,y,x] = b[f] + sum_{c,u,v} w[f,c,u,v] * in[n,c,y+u-p,x+v-p]`
/// with out-of-range input reads taken as zero.
pub fn naive_conv2d<T: Scalar>(x: &Tensor4<T>, p: &ConvParams<T>) -> Result<Tensor4<T>> {
    let xd = x.dims();
    let wd = p.weight.dims();
    if wd.c != xd.c || wd.h != wd.w {
        return Err(Error::Shape(format!("filters {wd} do not fit input {xd}")));
    }
    let k = wd.h as isize;
    let pad: isize = match p.padding {
        Padding::Same if k % 2 == 1 => k / 2,
        Padding::Same => return Err(Error::Shape("'same' padding needs an odd kernel".into())),
        Padding::Valid => 0,
    };
    let oh = xd.h as isize + 2 * pad - k + 1;
    let ow = xd.w as isize + 2 * pad - k + 1;
    if oh <= 0 || ow <= 0 {
        return Err(Error::Shape(format!("kernel {k} exceeds input {xd}")));
    }
    let out_dims = Dims::new(xd.n, wd.n, oh as usize, ow as usize);
    let read = |n: usize, c: usize, y: isize, x_: isize| -> T {
        if y < 0 || x_ < 0 || y >= xd.h as isize || x_ >= xd.w as isize {
            T::zero()
        } else {
            x.get(n, c, y as usize, x_ as usize)
        }
    };
    Ok(Tensor4::from_fn(out_dims, |n, f, y, xx| {
        let mut acc = p.bias.as_ref().map_or(T::zero(), |b| b.get(f, 0, 0, 0));
        for c in 0..xd.c {
            for u in 0..k {
                for v in 0..k {
                    let w = p.weight.get(f, c, u as usize, v as usize);
                    acc += w * read(n, c, y as isize + u - pad, xx as isize + v - pad);
                }
            }
        }
        acc
    }))
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(max|a|, max|b|, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared vectors differ in length");
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    num / inf(a).max(inf(b)).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivarianceMode {
    /// `f(g x) == f(x)`.
    Invariant,
    /// `f(g x) == g f(x)`.
    SameEquivariant,
}

impl std::str::FromStr for EquivarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariant" => Ok(EquivarianceMode::Invariant),
            "same-equivariant" | "same_equivariant" => Ok(EquivarianceMode::SameEquivariant),
            other => Err(Error::Usage(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementDeviation {
    pub element: String,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub check: String,
    pub group: GroupKind,
    pub tolerance: f64,
    pub deviations: Vec<ElementDeviation>,
    pub max_deviation: f64,
    pub passed: bool,
}

impl EquivarianceReport {
    fn new(check: impl Into<String>, group: GroupKind, tolerance: f64, deviations: Vec<ElementDeviation>) -> Self {
        let max_deviation = deviations.iter().map(|d| d.max_abs_deviation).fold(0.0, f64::max);
        let passed = deviations.iter().all(|d| d.max_abs_deviation <= tolerance);
        EquivarianceReport { check: check.into(), group, tolerance, deviations, max_deviation, passed }
    }
}

/// Checks that rotating the filter equals inversely rotating the image,
/// `g^-1 (x * g w) == (g^-1 x) * w`, for every `g` in `group`, and that
/// the realigned slice pathways of `x * w` equal `x` convolved with the
/// transformed filters, `h^-1 ((h x) * w) == x * (h^-1 w)`.
pub fn check_filter_rotation_equivalence<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    group: GroupKind,
    tolerance: f64,
) -> Result<EquivarianceReport> {
    if !x.dims().is_square() || !w.dims().is_square() {
        return Err(Error::Shape("filter rotation check needs square input and filter".into()));
    }
    let conv = |input: &Tensor4<T>, filt: Tensor4<T>| {
        naive_conv2d(input, &ConvParams { weight: filt, bias: None, padding: Padding::Same })
    };
    let mut deviations = Vec::new();
    for g in group.elements() {
        let lhs = g.inverse().apply(&conv(x, g.apply(w)?)?)?;
        let rhs = conv(&g.inverse().apply(x)?, w.clone())?;
        deviations.push(ElementDeviation { element: format!("distributive:{g}"), max_abs_deviation: lhs.max_abs_diff(&rhs)? });
    }
    // framework route: slice, one shared filter bank, realign
    let sliced = cyclic::slice(&PathwayBatch::plain(x.clone(), group))?;
    let shared = conv2d_forward(sliced.tensor(), &ConvParams { weight: w.clone(), bias: None, padding: Padding::Same })?;
    let blocks = shared.split_batch_even(group.order())?;
    for (h, block) in group.elements().into_iter().zip(blocks) {
        let realigned = h.inverse().apply(&block)?;
        let direct = conv(x, h.inverse().apply(w)?)?;
        deviations.push(ElementDeviation { element: format!("pathway:{h}"), max_abs_deviation: realigned.max_abs_diff(&direct)? });
    }
    Ok(EquivarianceReport::new("filter-rotation", group, tolerance, deviations))
}

/// Uniform `[-1, 1)` tensor for randomized checks.
pub fn random_tensor<T: Scalar>(dims: Dims, seed: u64) -> Tensor4<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(dims, |_, _, _, _| T::of(rng.random_range(-1.0..1.0)))
}

/// Runs `net` on `trials` random inputs and each of their transforms under
/// every element of `group`, reporting the worst deviation per element.
pub fn check_model_equivariance<T: Scalar>(
    net: &Network<T>,
    group: GroupKind,
    mode: EquivarianceMode,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<EquivarianceReport> {
    let s = net.arch().input_shape();
    let x = random_tensor::<T>(Dims::new(trials, s.channels, s.height, s.width), seed);
    let base = net.forward(&x)?;
    let mut deviations = Vec::new();
    for g in group.elements() {
        let y = net.forward(&g.apply(&x)?)?;
        let want = match mode {
            EquivarianceMode::Invariant => base.clone(),
            EquivarianceMode::SameEquivariant => g.apply(&base)?,
        };
        if y.dims() != want.dims() {
            return Err(Error::Shape(format!("output {} cannot be compared with {}", y.dims(), want.dims())));
        }
        deviations.push(ElementDeviation { element: g.to_string(), max_abs_deviation: y.max_abs_diff(&want)? });
    }
    let check = match mode {
        EquivarianceMode::Invariant => "model-invariance",
        EquivarianceMode::SameEquivariant => "model-same-equivariance",
    };
    Ok(EquivarianceReport::new(check, group, tolerance, deviations))
}

/// Tape gradients versus central differences for the scalar loss
/// `<c, net(x)>` with a fixed random `c`, over every parameter and the input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    /// Relative error per parameter buffer, in [`Network::buffers`] order.
    pub params: Vec<f64>,
    pub input: f64,
}

impl GradientCheck {
    pub fn worst(&self) -> f64 {
        self.params.iter().copied().fold(self.input, f64::max)
    }
}

pub fn check_network_gradients(net: &Network<f64>, x: &Tensor4<f64>, seed: u64, h: f64) -> Result<GradientCheck> {
    let y = net.forward(x)?;
    let c = random_tensor::<f64>(y.dims(), seed);
    let (_, tape) = net.forward_with_tape(x)?;
    let (grads, gx) = net.backward(&tape, &c)?;
    let loss = |n: &Network<f64>, input: &Tensor4<f64>| n.forward(input).and_then(|out| out.dot(&c)).expect("forward");

    let mut params = Vec::new();
    let analytic = grads.buffers();
    for (b, an) in analytic.iter().enumerate() {
        let mut probe = net.clone();
        let base = net.buffers()[b].data().to_vec();
        let fd = finite_diff_grad(
            |v| {
                probe.buffers_mut()[b].data_mut().copy_from_slice(v);
                loss(&probe, x)
            },
            &base,
            h,
        );
        params.push(relative_error(an.data(), &fd));
    }
    let fd_x = finite_diff_grad(
        |v| loss(net, &Tensor4::from_vec(x.dims(), v.to_vec()).expect("same dims")),
        x.data(),
        h,
    );
    Ok(GradientCheck { params, input: relative_error(gx.data(), &fd_x) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_basics() {
        let g = finite_diff_grad(|v| v[0] * v[0], &[3.0], FD_STEP);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|v| v.iter().sum(), &[1.0, -2.0, 0.5], FD_STEP);
        for v in g {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn naive_conv_examples() {
        let x = Tensor4::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let ones = ConvParams { weight: Tensor4::full(Dims::new(1, 1, 2, 2), 1.0), bias: None, padding: Padding::Valid };
        assert_eq!(naive_conv2d(&x, &ones).unwrap().data(), &[10.0]);
        let unit = ConvParams { weight: Tensor4::full(Dims::new(1, 1, 1, 1), 1.0), bias: None, padding: Padding::Same };
        assert_eq!(naive_conv2d(&x, &unit).unwrap(), x);
    }

    #[test]
    fn filter_rotation_trivial_cases() {
        let x = random_tensor::<f64>(Dims::new(1, 2, 5, 5), 1);
        let pointwise = random_tensor::<f64>(Dims::new(3, 2, 1, 1), 2);
        let r = check_filter_rotation_equivalence(&x, &pointwise, GroupKind::D4, 1e-12).unwrap();
        assert!(r.passed && r.max_deviation < 1e-15, "{r:?}");
        let flat = Tensor4::<f64>::full(Dims::new(1, 2, 3, 3), 0.25);
        let r = check_filter_rotation_equivalence(&x, &flat, GroupKind::C4, 1e-12).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.002]) - 0.002 / 2.002).abs() < 1e-12);
    }
}
