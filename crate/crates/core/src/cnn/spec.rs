use std::fmt::Write as _;

use super::tensor::{ParamRole, ParamSet, Scalar, Tensor};
use super::CnnError;
use crate::datamodel::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv3x3(out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel: (3, 3),
            stride: 1,
            padding: 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layered network description. Construction validates the shape chain.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    classes: usize,
    shapes: Vec<Shape>,
}

fn spec_err(msg: impl Into<String>) -> CnnError {
    CnnError::InvalidSpec(msg.into())
}

impl NetworkSpec {
    pub fn new(input: (usize, usize, usize), layers: Vec<LayerSpec>, classes: usize) -> Result<Self, CnnError> {
        let (c, h, w) = input;
        if c == 0 || h == 0 || w == 0 {
            return Err(spec_err(format!("input shape {c}x{h}x{w} must be positive")));
        }
        if classes != NUM_CLASSES {
            return Err(spec_err(format!("class count must be {NUM_CLASSES}, got {classes}")));
        }
        let mut shapes = vec![Shape::Image { c, h, w }];
        for (i, layer) in layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (*layer, cur) {
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel: (kh, kw),
                        stride,
                        padding,
                    },
                    Shape::Image { h, w, .. },
                ) => {
                    if out_channels == 0 || kh == 0 || kw == 0 || stride == 0 {
                        return Err(spec_err(format!("layer {i}: conv2d sizes must be positive")));
                    }
                    if h + 2 * padding < kh || w + 2 * padding < kw {
                        return Err(spec_err(format!("layer {i}: kernel larger than padded input")));
                    }
                    Shape::Image {
                        c: out_channels,
                        h: (h + 2 * padding - kh) / stride + 1,
                        w: (w + 2 * padding - kw) / stride + 1,
                    }
                }
                (LayerSpec::MaxPool2d { window, stride }, Shape::Image { c, h, w }) => {
                    if window == 0 || stride == 0 || window > h || window > w {
                        return Err(spec_err(format!("layer {i}: invalid pooling window {window}")));
                    }
                    Shape::Image {
                        c,
                        h: (h - window) / stride + 1,
                        w: (w - window) / stride + 1,
                    }
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Flatten, s) => Shape::Flat(s.len()),
                (LayerSpec::Dense { out_features }, Shape::Flat(_)) => {
                    if out_features == 0 {
                        return Err(spec_err(format!("layer {i}: dense needs outputs")));
                    }
                    Shape::Flat(out_features)
                }
                (LayerSpec::Softmax, Shape::Flat(n)) => {
                    if i + 1 != layers.len() {
                        return Err(spec_err(format!("layer {i}: softmax must be the final layer")));
                    }
                    Shape::Flat(n)
                }
                (l, s) => {
                    return Err(spec_err(format!(
                        "layer {i}: {} cannot take input of shape {s:?}",
                        l.kind()
                    )))
                }
            };
            shapes.push(next);
        }
        match (layers.last(), shapes.last()) {
            (Some(LayerSpec::Softmax), Some(&Shape::Flat(n))) if n == classes => {}
            _ => return Err(spec_err(format!("network must end in softmax over {classes} classes"))),
        }
        Ok(Self {
            input,
            layers,
            classes,
            shapes,
        })
    }

    /// The default small network for 32×32 slices: four 3×3 conv layers
    /// (8, 16, 16, 32 channels) with pooling after the second and fourth,
    /// then dense 64 → 3.
    pub fn desk_default() -> Self {
        Self::desk(32, 32)
    }

    /// Desk architecture for an arbitrary slice size (each side divisible by 4).
    pub fn desk(height: usize, width: usize) -> Self {
        use LayerSpec::*;
        let pool = MaxPool2d { window: 2, stride: 2 };
        Self::new(
            (1, height, width),
            vec![
                LayerSpec::conv3x3(8),
                Relu,
                LayerSpec::conv3x3(16),
                Relu,
                pool,
                LayerSpec::conv3x3(16),
                Relu,
                LayerSpec::conv3x3(32),
                Relu,
                pool,
                Flatten,
                Dense { out_features: 64 },
                Relu,
                Dense { out_features: NUM_CLASSES },
                Softmax,
            ],
            NUM_CLASSES,
        )
        .expect("desk architecture is valid")
    }

    pub fn input(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Input shape of layer `i`; `shape(layers().len())` is the output shape.
    pub fn shape(&self, i: usize) -> Shape {
        self.shapes[i]
    }

    /// Weight and bias dimensions for every parameterized layer, in order.
    pub fn param_shapes(&self) -> Vec<(usize, ParamRole, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match (*layer, self.shapes[i]) {
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel: (kh, kw),
                        ..
                    },
                    Shape::Image { c, .. },
                ) => {
                    out.push((i, ParamRole::Weight, vec![out_channels, c, kh, kw]));
                    out.push((i, ParamRole::Bias, vec![out_channels]));
                }
                (LayerSpec::Dense { out_features }, Shape::Flat(n)) => {
                    out.push((i, ParamRole::Weight, vec![out_features, n]));
                    out.push((i, ParamRole::Bias, vec![out_features]));
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_params<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .param_shapes()
                .into_iter()
                .map(|(layer, role, dims)| Tensor::zeros(layer, role, dims))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, _, d)| d.iter().product::<usize>())
            .sum()
    }

    /// Canonical `key=value` text form; one `layer=` line per layer, in order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (c, h, w) = self.input;
        let _ = writeln!(s, "input_channels={c}");
        let _ = writeln!(s, "input_height={h}");
        let _ = writeln!(s, "input_width={w}");
        let _ = writeln!(s, "classes={}", self.classes);
        for layer in &self.layers {
            let _ = match *layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel: (kh, kw),
                    stride,
                    padding,
                } => writeln!(
                    s,
                    "layer=conv2d out_channels={out_channels} kernel={kh}x{kw} stride={stride} padding={padding}"
                ),
                LayerSpec::MaxPool2d { window, stride } => {
                    writeln!(s, "layer=maxpool2d window={window} stride={stride}")
                }
                LayerSpec::Dense { out_features } => writeln!(s, "layer=dense out_features={out_features}"),
                other => writeln!(s, "layer={}", other.kind()),
            };
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CnnError> {
        let mut c = None;
        let mut h = None;
        let mut w = None;
        let mut classes = None;
        let mut layers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| spec_err(format!("line {}: expected key=value", n + 1)))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| spec_err(format!("line {}: bad integer {v:?}", n + 1)))
            };
            match key.trim() {
                "input_channels" => c = Some(num(value)?),
                "input_height" => h = Some(num(value)?),
                "input_width" => w = Some(num(value)?),
                "classes" => classes = Some(num(value)?),
                "layer" => layers.push(parse_layer(value).map_err(|m| spec_err(format!("line {}: {m}", n + 1)))?),
                other => return Err(spec_err(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        let need = |v: Option<usize>, name: &str| v.ok_or_else(|| spec_err(format!("missing {name}")));
        Self::new(
            (need(c, "input_channels")?, need(h, "input_height")?, need(w, "input_width")?),
            layers,
            need(classes, "classes")?,
        )
    }
}

fn parse_layer(value: &str) -> Result<LayerSpec, String> {
    let mut tokens = value.split_whitespace();
    let kind = tokens.next().ok_or("empty layer")?;
    let mut fields = std::collections::HashMap::new();
    for tok in tokens {
        let (k, v) = tok.split_once('=').ok_or(format!("bad layer field {tok:?}"))?;
        fields.insert(k, v);
    }
    let int = |name: &str| -> Result<usize, String> {
        fields
            .get(name)
            .ok_or(format!("{kind} needs {name}"))?
            .parse()
            .map_err(|_| format!("bad {name}"))
    };
    Ok(match kind {
        "conv2d" => {
            let kernel = fields.get("kernel").ok_or("conv2d needs kernel")?;
            let (kh, kw) = kernel.split_once('x').ok_or("kernel must be HxW")?;
            LayerSpec::Conv2d {
                out_channels: int("out_channels")?,
                kernel: (
                    kh.parse().map_err(|_| "bad kernel")?,
                    kw.parse().map_err(|_| "bad kernel")?,
                ),
                stride: int("stride")?,
                padding: int("padding")?,
            }
        }
        "maxpool2d" => LayerSpec::MaxPool2d {
            window: int("window")?,
            stride: int("stride")?,
        },
        "dense" => LayerSpec::Dense {
            out_features: int("out_features")?,
        },
        "relu" => LayerSpec::Relu,
        "flatten" => LayerSpec::Flatten,
        "softmax" => LayerSpec::Softmax,
        other => return Err(format!("unknown layer kind {other:?}")),
    })
}
