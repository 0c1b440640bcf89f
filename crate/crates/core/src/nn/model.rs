//! Declarative layer stacks: validation, shape inference and parameter counts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cyclic::PoolKind;
use crate::error::{Error, Result};
use crate::group::GroupKind;
use crate::nn::conv::Padding;
use crate::nn::loss::LossKind;
use crate::nn::ops::maxpool_output_size;
use crate::scalar::DType;

fn yes() -> bool {
    true
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default)]
        padding: Padding,
        #[serde(default = "yes")]
        bias: bool,
    },
    Dense {
        units: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu {},
    Maxpool {
        window: usize,
        #[serde(default = "two")]
        stride: usize,
    },
    Flatten {},
    Slice {
        #[serde(default)]
        group: GroupKind,
    },
    Pool {
        #[serde(default)]
        function: PoolKind,
        #[serde(default)]
        relu: bool,
        #[serde(default)]
        realign: bool,
    },
    Stack {},
    Roll {},
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu {} => "relu",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Flatten {} => "flatten",
            LayerSpec::Slice { .. } => "slice",
            LayerSpec::Pool { .. } => "pool",
            LayerSpec::Stack {} => "stack",
            LayerSpec::Roll {} => "roll",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub channels: usize,
    /// Side of the square input images.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
}

fn default_dtype() -> DType {
    DType::F32
}

/// Per-sample activation shape plus the pathway layout it lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Group whose pathways the batch is sliced into, if any.
    pub sliced: Option<GroupKind>,
}

impl Shape {
    /// Batch multiplier relative to the input batch.
    pub fn pathways(&self) -> usize {
        self.sliced.map_or(1, GroupKind::order)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)?;
        if let Some(g) = self.sliced {
            write!(f, " [{g} x{}]", g.order())?;
        }
        Ok(())
    }
}

/// A validated spec with the inferred shape before and after every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    spec: ModelSpec,
    shapes: Vec<Shape>,
}

impl Architecture {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("at least the input shape")
    }

    /// Shape entering layer `i`.
    pub fn layer_input(&self, i: usize) -> Shape {
        self.shapes[i]
    }

    pub fn layer_output(&self, i: usize) -> Shape {
        self.shapes[i + 1]
    }

    /// Group the model is built around: the sliced group, else C4.
    pub fn group(&self) -> GroupKind {
        self.spec
            .layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::Slice { group } => Some(*group),
                _ => None,
            })
            .unwrap_or_default()
    }

    pub fn has_slice(&self) -> bool {
        self.spec.layers.iter().any(|l| matches!(l, LayerSpec::Slice { .. }))
    }

    /// Whether the model pools with realignment (same-equivariant) rather than
    /// without it (invariant).
    pub fn realigning_pool(&self) -> bool {
        self.spec.layers.iter().any(|l| matches!(l, LayerSpec::Pool { realign: true, .. }))
    }

    /// Weight dims `(out, in, k, k)` and bias presence for a parametrised layer.
    pub fn param_dims(&self, i: usize) -> Option<([usize; 4], bool)> {
        let input = self.shapes[i];
        match self.spec.layers[i] {
            LayerSpec::Conv { filters, kernel, bias, .. } => Some(([filters, input.channels, kernel, kernel], bias)),
            LayerSpec::Dense { units, bias } => Some(([units, input.channels, 1, 1], bias)),
            _ => None,
        }
    }
}

impl ModelSpec {
    /// Checks composition rules and infers shapes, collecting every violation.
    pub fn validate(&self) -> Result<Architecture> {
        let mut errors = Vec::new();
        if self.layers.is_empty() {
            errors.push("model has no layers".to_string());
        }
        if self.input.channels == 0 || self.input.size == 0 {
            errors.push("input channels and size must be positive".to_string());
        }
        let mut shape = Some(Shape {
            channels: self.input.channels,
            height: self.input.size,
            width: self.input.size,
            sliced: None,
        });
        let mut shapes = vec![shape.unwrap()];
        let mut slice_at: Option<usize> = None;
        let mut realign_pool_at: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let tag = format!("layer {i} ({})", layer.name());
            match layer {
                LayerSpec::Slice { .. } => {
                    if let Some(j) = slice_at {
                        errors.push(format!("{tag}: a model may contain only one slice layer (first at layer {j})"));
                    }
                    slice_at.get_or_insert(i);
                }
                LayerSpec::Pool { .. } | LayerSpec::Stack {} | LayerSpec::Roll {} => {
                    if slice_at.is_none() {
                        errors.push(format!("{tag}: must come after a slice layer"));
                    }
                }
                LayerSpec::Conv { .. } | LayerSpec::Maxpool { .. } => {
                    if let Some(j) = realign_pool_at {
                        errors.push(format!(
                            "{tag}: convolutional and spatial pooling layers may not follow the realigning \
                             pool at layer {j}; the pooled maps rotate with the input, so later filters \
                             would see them at a different relative orientation and equivariance is lost"
                        ));
                    }
                }
                _ => {}
            }
            if let LayerSpec::Pool { realign: true, .. } = layer {
                realign_pool_at.get_or_insert(i);
            }
            shape = match shape.map(|s| infer(layer, s)) {
                Some(Ok(next)) => Some(next),
                Some(Err(msg)) => {
                    errors.push(format!("{tag}: {msg}"));
                    None
                }
                None => None,
            };
            if let Some(s) = shape {
                shapes.push(s);
            }
        }
        if let Some(out) = shape {
            if out.sliced.is_some() {
                errors.push(format!("model output is still sliced into {} pathways; add a pool or stack", out.pathways()));
            }
            if self.loss == LossKind::CrossEntropy && (out.height != 1 || out.width != 1 || out.channels < 2) {
                errors.push(format!("cross-entropy needs class logits of shape Kx1x1 with K >= 2, got {out}"));
            }
        }
        if errors.is_empty() {
            Ok(Architecture { spec: self.clone(), shapes })
        } else {
            Err(Error::Validation(errors))
        }
    }
}

fn infer(layer: &LayerSpec, s: Shape) -> std::result::Result<Shape, String> {
    let need_square = |what: &str| {
        if s.height != s.width {
            Err(format!("{what} needs square feature maps, got {s}"))
        } else {
            Ok(())
        }
    };
    let need_sliced = || s.sliced.ok_or_else(|| "input is not sliced".to_string());
    match *layer {
        LayerSpec::Conv { filters, kernel, padding, .. } => {
            if filters == 0 || kernel == 0 {
                return Err("filters and kernel must be positive".into());
            }
            if padding == Padding::Same && kernel % 2 == 0 {
                return Err(format!("'same' padding needs an odd kernel, got {kernel}"));
            }
            let h = padding.output_size(s.height, kernel);
            let w = padding.output_size(s.width, kernel);
            match (h, w) {
                (Some(height), Some(width)) => Ok(Shape { channels: filters, height, width, ..s }),
                _ => Err(format!("kernel {kernel} exceeds input {s}")),
            }
        }
        LayerSpec::Dense { units, .. } => {
            if units == 0 {
                return Err("units must be positive".into());
            }
            if s.height != 1 || s.width != 1 {
                return Err(format!("dense needs flattened input, got {s}; insert a flatten layer"));
            }
            Ok(Shape { channels: units, ..s })
        }
        LayerSpec::Relu {} => Ok(s),
        LayerSpec::Maxpool { window, stride } => {
            match (maxpool_output_size(s.height, window, stride), maxpool_output_size(s.width, window, stride)) {
                (Some(height), Some(width)) => Ok(Shape { height, width, ..s }),
                _ => Err(format!("window {window} / stride {stride} does not fit {s}")),
            }
        }
        LayerSpec::Flatten {} => Ok(Shape { channels: s.channels * s.height * s.width, height: 1, width: 1, ..s }),
        LayerSpec::Slice { group } => {
            if s.sliced.is_some() {
                return Err("input is already sliced".into());
            }
            need_square("slice")?;
            Ok(Shape { sliced: Some(group), ..s })
        }
        LayerSpec::Pool { realign, .. } => {
            need_sliced()?;
            if realign {
                need_square("realigning pool")?;
            }
            Ok(Shape { sliced: None, ..s })
        }
        LayerSpec::Stack {} => {
            let g = need_sliced()?;
            need_square("stack")?;
            Ok(Shape { channels: s.channels * g.order(), sliced: None, ..s })
        }
        LayerSpec::Roll {} => {
            let g = need_sliced()?;
            need_square("roll")?;
            Ok(Shape { channels: s.channels * g.order(), ..s })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamRow {
    pub layer: usize,
    pub kind: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub rows: Vec<ParamRow>,
    pub total: usize,
}

impl ParamReport {
    /// Parameters of the `index`-th convolution (counting convs only).
    pub fn conv(&self, index: usize) -> Option<usize> {
        self.rows.iter().filter(|r| r.kind == "conv").nth(index).map(|r| r.params)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,in_channels,out_channels,params\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.layer, r.kind, r.in_channels, r.out_channels, r.params));
        }
        out.push_str(&format!("total,,,,{}\n", self.total));
        out
    }
}

/// Per-layer and total parameter counts (bias included where enabled).
pub fn count_params(spec: &ModelSpec) -> Result<ParamReport> {
    let arch = spec.validate()?;
    Ok(count_arch_params(&arch))
}

pub fn count_arch_params(arch: &Architecture) -> ParamReport {
    let rows: Vec<ParamRow> = arch
        .spec()
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let params = arch.param_dims(i).map_or(0, |(d, bias)| d.iter().product::<usize>() + if bias { d[0] } else { 0 });
            ParamRow {
                layer: i,
                kind: layer.name(),
                in_channels: arch.layer_input(i).channels,
                out_channels: arch.layer_output(i).channels,
                params,
            }
        })
        .collect();
    let total = rows.iter().map(|r| r.params).sum();
    ParamReport { rows, total }
}
