//! Network description: layer specs, architecture validation, shape
//! inference, and the parameter store.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BnAffine, ConvKernel, FcParams, PoolWindow};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Shape, Tensor};

/// Reserved id naming the network input.
pub const INPUT: &str = "input";

/// Tag marking a 1×1 shortcut projection; such convs are never pruned.
pub const PROJECTION_TAG: &str = "projection";

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default, skip_serializing_if = "is_zero")]
        pad: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
        #[serde(default, skip_serializing_if = "is_zero")]
        pad: usize,
    },
    Gap,
    Fc {
        outputs: usize,
    },
    BnAffine,
    AddJunction,
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool { .. } => "maxpool",
            LayerKind::Gap => "gap",
            LayerKind::Fc { .. } => "fc",
            LayerKind::BnAffine => "bn_affine",
            LayerKind::AddJunction => "add_junction",
            LayerKind::Softmax => "softmax",
        }
    }

    fn arity(&self) -> usize {
        match self {
            LayerKind::AddJunction => 2,
            _ => 1,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Fc { .. } | LayerKind::BnAffine)
    }

    /// Layers that map channel `c` of their input to channel `c` of their
    /// output and nothing else.
    pub fn is_channelwise(&self) -> bool {
        matches!(self, LayerKind::Relu | LayerKind::Maxpool { .. } | LayerKind::BnAffine)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            tags: Vec::new(),
        }
    }

    pub fn tagged(mut self, tag: &str) -> Self {
        self.tags.push(tag.to_string());
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

/// Where a layer reads from: the network input or an earlier layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Input,
    Layer(usize),
}

/// Layer list plus input geometry, without weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    /// `(C, H, W)` of one input sample.
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], classes: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Architecture {
            name: name.into(),
            input_shape,
            classes,
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn input(&self, batch: usize) -> Shape {
        let [c, h, w] = self.input_shape;
        Shape::new(batch, c, h, w)
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.id == id)
            .ok_or_else(|| Error::UnknownLayer(id.to_string()))
    }

    pub fn layer(&self, id: &str) -> Result<&LayerSpec> {
        Ok(&self.layers[self.index_of(id)?])
    }

    /// Resolved sources of layer `idx`. Valid only on a validated graph.
    pub fn sources(&self, idx: usize) -> Vec<Source> {
        self.layers[idx]
            .inputs
            .iter()
            .map(|id| {
                if id == INPUT {
                    Source::Input
                } else {
                    Source::Layer(self.index_of(id).expect("validated graph"))
                }
            })
            .collect()
    }

    /// Indices of layers that read layer `idx`.
    pub fn consumers(&self, idx: usize) -> Vec<usize> {
        let id = &self.layers[idx].id;
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.inputs.iter().any(|i| i == id))
            .map(|(j, _)| j)
            .collect()
    }

    pub fn output_index(&self) -> usize {
        self.layers.len() - 1
    }

    /// Checks id uniqueness, arity, topological order and the single-output
    /// property, then runs shape inference.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Graph("no layers".into()));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Graph(format!("bad input shape {:?}", self.input_shape)));
        }
        if self.classes < 2 {
            return Err(Error::Graph(format!("class count {} < 2", self.classes)));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        let mut consumed: HashSet<&str> = HashSet::new();
        for l in &self.layers {
            if l.id == INPUT || l.id.is_empty() {
                return Err(Error::Graph(format!("reserved or empty layer id `{}`", l.id)));
            }
            if l.inputs.len() != l.kind.arity() {
                return Err(Error::Graph(format!(
                    "layer `{}` ({}) takes {} input(s), got {}",
                    l.id,
                    l.kind.name(),
                    l.kind.arity(),
                    l.inputs.len()
                )));
            }
            for i in &l.inputs {
                if i != INPUT && !seen.contains(i.as_str()) {
                    return Err(Error::Graph(format!(
                        "layer `{}` reads `{i}`, which is not an earlier layer",
                        l.id
                    )));
                }
                consumed.insert(i.as_str());
            }
            if !seen.insert(l.id.as_str()) {
                return Err(Error::Graph(format!("duplicate layer id `{}`", l.id)));
            }
        }
        let dangling: Vec<&str> = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.id.as_str())
            .filter(|id| !consumed.contains(id))
            .collect();
        if !dangling.is_empty() {
            return Err(Error::Graph(format!(
                "graph must have a single output; unused layers: {dangling:?}"
            )));
        }
        self.infer_shapes()?;
        Ok(())
    }

    /// Output shape of every layer for a batch of one.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        let input = self.input(1);
        let lookup = |shapes: &Vec<Shape>, id: &str| -> Result<Shape> {
            if id == INPUT {
                return Ok(input);
            }
            let idx = self.index_of(id)?;
            shapes
                .get(idx)
                .copied()
                .ok_or_else(|| Error::Graph(format!("`{id}` used before definition")))
        };
        for l in &self.layers {
            let ins: Vec<Shape> = l
                .inputs
                .iter()
                .map(|i| lookup(&shapes, i))
                .collect::<Result<_>>()?;
            let x = ins[0];
            let out = match &l.kind {
                LayerKind::Conv {
                    filters,
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    if *filters == 0 || *kernel == 0 || *stride == 0 {
                        return Err(Error::Graph(format!("conv `{}` has a zero hyperparameter", l.id)));
                    }
                    let e = |s| crate::nn::conv::output_extent("conv2d", s, *kernel, *stride, *pad);
                    Shape::new(1, *filters, e(x.h())?, e(x.w())?)
                }
                LayerKind::Maxpool { window, stride, pad } => PoolWindow {
                    window: *window,
                    stride: *stride,
                    pad: *pad,
                }
                .output_shape(x)?,
                LayerKind::Gap => Shape::new(1, x.c(), 1, 1),
                LayerKind::Fc { outputs } => {
                    if *outputs == 0 {
                        return Err(Error::Graph(format!("fc `{}` has no outputs", l.id)));
                    }
                    Shape::new(1, *outputs, 1, 1)
                }
                LayerKind::Relu | LayerKind::BnAffine | LayerKind::Softmax => x,
                LayerKind::AddJunction => {
                    if ins[0] != ins[1] {
                        return Err(Error::ShapeMismatch {
                            op: "add_junction",
                            left: format!("`{}` {}", l.inputs[0], ins[0]),
                            right: format!("`{}` {}", l.inputs[1], ins[1]),
                        });
                    }
                    x
                }
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    /// Input shape (batch of one) of every layer's first input.
    pub fn input_shapes(&self) -> Result<Vec<Shape>> {
        let out = self.infer_shapes()?;
        Ok((0..self.layers.len())
            .map(|i| match self.sources(i)[0] {
                Source::Input => self.input(1),
                Source::Layer(j) => out[j],
            })
            .collect())
    }

    /// Blob shapes `(name, extents)` a layer must carry.
    pub fn param_shapes(&self, idx: usize, input: Shape) -> Vec<(&'static str, Vec<usize>)> {
        match &self.layers[idx].kind {
            LayerKind::Conv {
                filters,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![("weight", vec![*filters, input.c(), *kernel, *kernel])];
                if *bias {
                    v.push(("bias", vec![*filters]));
                }
                v
            }
            LayerKind::Fc { outputs } => vec![
                ("weight", vec![input.sample_len(), *outputs]),
                ("bias", vec![*outputs]),
            ],
            LayerKind::BnAffine => vec![("scale", vec![input.c()]), ("shift", vec![input.c()])],
            _ => Vec::new(),
        }
    }
}

/// Trainable parameters of one layer. Also used as the container for their
/// gradients.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T = f32> {
    Conv(ConvKernel<T>),
    Fc(FcParams<T>),
    Bn(BnAffine<T>),
}

impl<T: Scalar> LayerParams<T> {
    /// `(name, shape, values)` for each blob, in storage order.
    pub fn blobs(&self) -> Vec<(&'static str, Vec<usize>, &[T])> {
        match self {
            LayerParams::Conv(k) => {
                let s = k.weights.shape();
                let mut v = vec![("weight", s.0.to_vec(), k.weights.data())];
                if let Some(b) = &k.bias {
                    v.push(("bias", vec![b.len()], b.as_slice()));
                }
                v
            }
            LayerParams::Fc(f) => vec![
                ("weight", vec![f.inputs, f.outputs], f.weights.as_slice()),
                ("bias", vec![f.bias.len()], f.bias.as_slice()),
            ],
            LayerParams::Bn(b) => vec![
                ("scale", vec![b.scale.len()], b.scale.as_slice()),
                ("shift", vec![b.shift.len()], b.shift.as_slice()),
            ],
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            LayerParams::Conv(k) => {
                let mut v = vec![k.weights.data_mut()];
                if let Some(b) = &mut k.bias {
                    v.push(b.as_mut_slice());
                }
                v
            }
            LayerParams::Fc(f) => vec![f.weights.as_mut_slice(), f.bias.as_mut_slice()],
            LayerParams::Bn(b) => vec![b.scale.as_mut_slice(), b.shift.as_mut_slice()],
        }
    }

    pub fn count(&self) -> usize {
        self.blobs().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.slices_mut().into_iter().for_each(|s| s.fill(T::zero()));
        z
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        match self {
            LayerParams::Conv(k) => LayerParams::Conv(ConvKernel {
                weights: k.weights.cast(),
                bias: k.bias.as_deref().map(c),
                stride: k.stride,
                pad: k.pad,
            }),
            LayerParams::Fc(f) => LayerParams::Fc(FcParams {
                inputs: f.inputs,
                outputs: f.outputs,
                weights: c(&f.weights),
                bias: c(&f.bias),
            }),
            LayerParams::Bn(b) => LayerParams::Bn(BnAffine {
                scale: c(&b.scale),
                shift: c(&b.shift),
            }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blobs().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }
}

/// An architecture together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T = f32> {
    pub arch: Architecture,
    /// Layer id → parameters, for every conv, fc and bn_affine layer.
    pub params: BTreeMap<String, LayerParams<T>>,
}

impl<T: Scalar> ModelGraph<T> {
    pub fn new(arch: Architecture, params: BTreeMap<String, LayerParams<T>>) -> Result<Self> {
        let m = ModelGraph { arch, params };
        m.validate()?;
        Ok(m)
    }

    /// Validates the architecture and that every parameterized layer carries
    /// blobs of the inferred shapes.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let inputs = self.arch.input_shapes()?;
        let mut expected = 0usize;
        for (i, l) in self.arch.layers.iter().enumerate() {
            let want = self.arch.param_shapes(i, inputs[i]);
            if want.is_empty() {
                continue;
            }
            expected += 1;
            let p = self.params.get(&l.id).ok_or_else(|| Error::Blob {
                blob: format!("{}.{}", l.id, want[0].0),
                reason: "missing".into(),
            })?;
            let have = p.blobs();
            let kind_ok = matches!(
                (&l.kind, p),
                (LayerKind::Conv { .. }, LayerParams::Conv(_))
                    | (LayerKind::Fc { .. }, LayerParams::Fc(_))
                    | (LayerKind::BnAffine, LayerParams::Bn(_))
            );
            if !kind_ok || have.len() != want.len() {
                return Err(Error::Blob {
                    blob: l.id.clone(),
                    reason: format!("parameters do not match a {} layer", l.kind.name()),
                });
            }
            for ((wn, ws), (hn, hs, hv)) in want.iter().zip(&have) {
                if wn != hn || ws != hs || hv.len() != ws.iter().product::<usize>() {
                    return Err(Error::Blob {
                        blob: format!("{}.{}", l.id, wn),
                        reason: format!("expected shape {ws:?}, found {hn} {hs:?}"),
                    });
                }
            }
            if let (LayerKind::Conv { stride, pad, .. }, LayerParams::Conv(k)) = (&l.kind, p) {
                if k.stride != *stride || k.pad != *pad {
                    return Err(Error::Blob {
                        blob: l.id.clone(),
                        reason: "kernel stride/pad disagree with layer spec".into(),
                    });
                }
            }
        }
        if self.params.len() != expected {
            let known: HashSet<&str> = self.arch.layers.iter().map(|l| l.id.as_str()).collect();
            let stray: Vec<&String> = self.params.keys().filter(|k| !known.contains(k.as_str())).collect();
            return Err(Error::Graph(format!("parameters for unknown or parameterless layers: {stray:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(LayerParams::count).sum()
    }

    pub fn conv(&self, id: &str) -> Result<&ConvKernel<T>> {
        match self.params.get(id) {
            Some(LayerParams::Conv(k)) => Ok(k),
            _ => Err(Error::Graph(format!("`{id}` is not a conv layer"))),
        }
    }

    pub fn conv_mut(&mut self, id: &str) -> Result<&mut ConvKernel<T>> {
        match self.params.get_mut(id) {
            Some(LayerParams::Conv(k)) => Ok(k),
            _ => Err(Error::Graph(format!("`{id}` is not a conv layer"))),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            arch: self.arch.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(LayerParams::is_finite)
    }

    /// Bitwise parameter equality (distinguishes `-0.0`/`0.0`, equal NaNs).
    pub fn bit_eq(&self, other: &ModelGraph<T>) -> bool
    where
        T: BitPattern,
    {
        self.arch == other.arch
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((ka, a), (kb, b))| {
                ka == kb && {
                    let (ba, bb) = (a.blobs(), b.blobs());
                    ba.len() == bb.len()
                        && ba.iter().zip(&bb).all(|((na, sa, va), (nb, sb, vb))| {
                            na == nb
                                && sa == sb
                                && va.iter().zip(vb.iter()).all(|(x, y)| x.bits() == y.bits())
                        })
                }
            })
    }
}

/// Raw bit pattern access used by bit-exact comparisons.
pub trait BitPattern {
    fn bits(&self) -> u64;
}

impl BitPattern for f32 {
    fn bits(&self) -> u64 {
        self.to_bits() as u64
    }
}

impl BitPattern for f64 {
    fn bits(&self) -> u64 {
        self.to_bits()
    }
}

fn he_normal<T: Scalar>(len: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0f64, std).expect("positive std");
    (0..len).map(|_| T::from_f64(dist.sample(rng))).collect()
}

impl ModelGraph<f32> {
    /// Random initialization: He-normal weights, zero biases, identity
    /// bn_affine.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let inputs = arch.input_shapes()?;
        let mut params = BTreeMap::new();
        for (i, l) in arch.layers.iter().enumerate() {
            let input = inputs[i];
            let mut rng = stream_rng(seed, Stream::Init, &[i as u64]);
            let p = match &l.kind {
                LayerKind::Conv {
                    filters,
                    kernel,
                    stride,
                    pad,
                    bias,
                } => {
                    let shape = Shape::new(*filters, input.c(), *kernel, *kernel);
                    let w = he_normal(shape.len(), shape.sample_len(), &mut rng);
                    LayerParams::Conv(ConvKernel::new(
                        Tensor::from_vec(shape, w)?,
                        bias.then(|| vec![0.0; *filters]),
                        *stride,
                        *pad,
                    )?)
                }
                LayerKind::Fc { outputs } => {
                    let n = input.sample_len();
                    LayerParams::Fc(FcParams::new(
                        n,
                        *outputs,
                        he_normal(n * outputs, n, &mut rng),
                        vec![0.0; *outputs],
                    )?)
                }
                LayerKind::BnAffine => LayerParams::Bn(BnAffine::identity(input.c())),
                _ => continue,
            };
            params.insert(l.id.clone(), p);
        }
        Ok(ModelGraph { arch, params })
    }
}

/// Per-layer lookup of id → index, for repeated queries.
pub fn id_index(arch: &Architecture) -> HashMap<&str, usize> {
    arch.layers
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.as_str(), i))
        .collect()
}
