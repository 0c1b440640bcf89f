//! An instantiated [`Architecture`] with parameters, and reverse-mode
//! differentiation through a recorded tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cyclic::{self, PathwayBatch, PoolCache, PoolFunction};
use crate::error::{Error, Result};
use crate::group::GroupKind;
use crate::nn::conv::{conv2d_backward, conv2d_forward, ConvParams, Padding};
use crate::nn::dense::{dense_backward, dense_forward, DenseParams};
use crate::nn::model::{Architecture, LayerSpec};
use crate::nn::ops;
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Weight and optional bias of a conv or dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Option<Tensor4<T>>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros_like(&self) -> Self {
        LayerParams {
            weight: Tensor4::zeros(self.weight.dims()),
            bias: self.bias.as_ref().map(|b| Tensor4::zeros(b.dims())),
        }
    }

    fn buffers(&self) -> impl Iterator<Item = &Tensor4<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref())
    }

    fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Tensor4<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut())
    }
}

/// One recorded forward operation.
#[derive(Debug, Clone)]
pub enum TapeNode<T> {
    Conv { layer: usize, input: Tensor4<T> },
    Dense { layer: usize, input: Tensor4<T> },
    Relu { input: Tensor4<T> },
    Maxpool { input: Dims, argmax: Vec<usize> },
    Flatten { input: Dims },
    Slice { kind: GroupKind },
    Pool(PoolCache<T>),
    Stack { kind: GroupKind },
    Roll { kind: GroupKind },
}

/// Forward record in execution order; backward walks it in reverse.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<TapeNode<T>>,
}

impl<T> Tape<T> {
    pub fn nodes(&self) -> &[TapeNode<T>] {
        &self.nodes
    }
}

/// Parameter gradients, shaped like [`Network`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    layers: Vec<Option<LayerParams<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn buffers(&self) -> Vec<&Tensor4<T>> {
        self.layers.iter().flatten().flat_map(LayerParams::buffers).collect()
    }

    pub fn layer(&self, i: usize) -> Option<&LayerParams<T>> {
        self.layers[i].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    params: Vec<Option<LayerParams<T>>>,
}

impl<T: Scalar> Network<T> {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..arch.spec().layers.len())
            .map(|i| {
                arch.param_dims(i).map(|([o, c, kh, kw], bias)| {
                    let bound = 1.0 / ((c * kh * kw) as f64).sqrt();
                    let weight = Tensor4::from_fn(Dims::new(o, c, kh, kw), |_, _, _, _| {
                        T::of(rng.random_range(-bound..bound))
                    });
                    LayerParams { weight, bias: bias.then(|| Tensor4::zeros(Dims::new(o, 1, 1, 1))) }
                })
            })
            .collect();
        Network { arch, params }
    }

    /// Builds a network from explicit parameter buffers in [`Network::buffers`] order.
    pub fn from_buffers(arch: Architecture, buffers: Vec<Tensor4<T>>) -> Result<Self> {
        let mut net = Network::init(arch, 0);
        let expected = net.buffers().len();
        if buffers.len() != expected {
            return Err(Error::Shape(format!("expected {expected} parameter buffers, got {}", buffers.len())));
        }
        for (slot, b) in net.params.iter_mut().flatten().flat_map(LayerParams::buffers_mut).zip(buffers) {
            if slot.dims() != b.dims() {
                return Err(Error::DimMismatch { op: "load parameters", left: slot.dims(), right: b.dims() });
            }
            *slot = b;
        }
        Ok(net)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layer_params(&self, i: usize) -> Option<&LayerParams<T>> {
        self.params[i].as_ref()
    }

    pub fn layer_params_mut(&mut self, i: usize) -> Option<&mut LayerParams<T>> {
        self.params[i].as_mut()
    }

    /// All parameter buffers: per parametrised layer, weight then bias.
    pub fn buffers(&self) -> Vec<&Tensor4<T>> {
        self.params.iter().flatten().flat_map(LayerParams::buffers).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        self.params.iter_mut().flatten().flat_map(LayerParams::buffers_mut).collect()
    }

    /// Names matching [`Network::buffers`], e.g. `layer3_conv_weight`.
    pub fn buffer_names(&self) -> Vec<String> {
        let layers = &self.arch.spec().layers;
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
            .flat_map(|(i, p)| {
                let kind = layers[i].name();
                let mut names = vec![format!("layer{i}_{kind}_weight")];
                if p.bias.is_some() {
                    names.push(format!("layer{i}_{kind}_bias"));
                }
                names
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.buffers().iter().map(|b| b.dims().len()).sum()
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = self.arch.input_shape();
        let d = x.dims();
        if (d.c, d.h, d.w) != (s.channels, s.height, s.width) {
            return Err(Error::Shape(format!("model expects inputs {s}, got {d}")));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.run(x, None)
    }

    pub fn forward_with_tape(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Tape<T>)> {
        let mut tape = Tape { nodes: Vec::with_capacity(self.arch.spec().layers.len()) };
        let y = self.run(x, Some(&mut tape))?;
        Ok((y, tape))
    }

    fn run(&self, x: &Tensor4<T>, mut tape: Option<&mut Tape<T>>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut act = PathwayBatch::plain(x.clone(), self.arch.group());
        for (i, layer) in self.arch.spec().layers.iter().enumerate() {
            let kind = act.kind();
            let sliced = act.is_sliced();
            let rewrap = |t: Tensor4<T>| -> Result<PathwayBatch<T>> {
                if sliced {
                    PathwayBatch::sliced(t, kind)
                } else {
                    Ok(PathwayBatch::plain(t, kind))
                }
            };
            let (next, node) = match *layer {
                LayerSpec::Conv { padding, .. } => {
                    let p = self.params[i].as_ref().expect("conv has params");
                    let cp = conv_view(p, padding);
                    let y = conv2d_forward(act.tensor(), &cp)?;
                    (rewrap(y)?, TapeNode::Conv { layer: i, input: act.into_tensor() })
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[i].as_ref().expect("dense has params");
                    let dp = DenseParams { weight: p.weight.clone(), bias: p.bias.clone() };
                    let y = dense_forward(act.tensor(), &dp)?;
                    (rewrap(y)?, TapeNode::Dense { layer: i, input: act.into_tensor() })
                }
                LayerSpec::Relu {} => {
                    let y = ops::relu(act.tensor());
                    (rewrap(y)?, TapeNode::Relu { input: act.into_tensor() })
                }
                LayerSpec::Maxpool { window, stride } => {
                    let (y, argmax) = ops::maxpool2d(act.tensor(), window, stride)?;
                    (rewrap(y)?, TapeNode::Maxpool { input: act.tensor().dims(), argmax })
                }
                LayerSpec::Flatten {} => {
                    let dims = act.tensor().dims();
                    (rewrap(ops::flatten(act.tensor()))?, TapeNode::Flatten { input: dims })
                }
                LayerSpec::Slice { group } => {
                    let plain = PathwayBatch::plain(act.into_tensor(), group);
                    (cyclic::slice(&plain)?, TapeNode::Slice { kind: group })
                }
                LayerSpec::Pool { function, relu, realign } => {
                    let (y, cache) = cyclic::pool(&act, PoolFunction::new(function, relu), realign)?;
                    (y, TapeNode::Pool(cache))
                }
                LayerSpec::Stack {} => (cyclic::stack(&act)?, TapeNode::Stack { kind }),
                LayerSpec::Roll {} => (cyclic::roll(&act)?, TapeNode::Roll { kind }),
            };
            if let Some(t) = tape.as_deref_mut() {
                t.nodes.push(node);
            }
            act = next;
        }
        Ok(act.into_tensor())
    }

    /// Propagates `grad` (w.r.t. the output) back through the tape, returning
    /// parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, tape: &Tape<T>, grad: &Tensor4<T>) -> Result<(Gradients<T>, Tensor4<T>)> {
        let mut grads: Vec<Option<LayerParams<T>>> =
            self.params.iter().map(|p| p.as_ref().map(LayerParams::zeros_like)).collect();
        let mut g = grad.clone();
        for node in tape.nodes.iter().rev() {
            g = match node {
                TapeNode::Conv { layer, input } => {
                    let p = self.params[*layer].as_ref().expect("conv has params");
                    let LayerSpec::Conv { padding, .. } = self.arch.spec().layers[*layer] else {
                        unreachable!("tape node matches layer kind")
                    };
                    let cg = conv2d_backward(input, &conv_view(p, padding), &g)?;
                    let slot = grads[*layer].as_mut().expect("grad slot");
                    slot.weight = cg.weight;
                    slot.bias = cg.bias;
                    cg.input
                }
                TapeNode::Dense { layer, input } => {
                    let p = self.params[*layer].as_ref().expect("dense has params");
                    let dp = DenseParams { weight: p.weight.clone(), bias: p.bias.clone() };
                    let dg = dense_backward(input, &dp, &g)?;
                    let slot = grads[*layer].as_mut().expect("grad slot");
                    slot.weight = dg.weight;
                    slot.bias = dg.bias;
                    dg.input
                }
                TapeNode::Relu { input } => ops::relu_backward(input, &g)?,
                TapeNode::Maxpool { input, argmax } => ops::maxpool2d_backward(*input, argmax, &g)?,
                TapeNode::Flatten { input } => ops::flatten_backward(*input, &g)?,
                TapeNode::Slice { kind } => cyclic::slice_backward(*kind, &g)?,
                TapeNode::Pool(cache) => cyclic::pool_backward(cache, &g)?,
                TapeNode::Stack { kind } => cyclic::stack_backward(*kind, &g)?,
                TapeNode::Roll { kind } => cyclic::roll_backward(*kind, &g)?,
            };
        }
        Ok((Gradients { layers: grads }, g))
    }
}

fn conv_view<T: Scalar>(p: &LayerParams<T>, padding: Padding) -> ConvParams<T> {
    ConvParams { weight: p.weight.clone(), bias: p.bias.clone(), padding }
}
