use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{self, conv_output_dims, Dims3};
use super::Tensor;
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv3d {
        out_channels: usize,
        kernel: Dims3,
        stride: Dims3,
    },
    #[serde(rename = "maxpool3d")]
    MaxPool3d {
        window: Dims3,
    },
    Relu,
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub trainable: bool,
}

impl LayerSpec {
    fn of(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            trainable: true,
        }
    }

    pub fn conv3d(out_channels: usize, kernel: Dims3) -> Self {
        Self::of(LayerKind::Conv3d {
            out_channels,
            kernel,
            stride: Dims3::ones(),
        })
    }

    pub fn maxpool3d(window: Dims3) -> Self {
        Self::of(LayerKind::MaxPool3d { window })
    }

    pub fn relu() -> Self {
        Self::of(LayerKind::Relu)
    }

    pub fn flatten() -> Self {
        Self::of(LayerKind::Flatten)
    }

    pub fn dense(units: usize) -> Self {
        Self::of(LayerKind::Dense { units })
    }

    pub fn softmax() -> Self {
        Self::of(LayerKind::Softmax)
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv3d { .. } | LayerKind::Dense { .. }
        )
    }
}

/// A layer with resolved shapes and its parameters (empty for parameter-free
/// kinds).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn as_dims(shape: &[usize], what: &str) -> Result<(usize, Dims3)> {
    match *shape {
        [c, t, i, j] => Ok((c, Dims3::new(t, i, j))),
        _ => Err(Error::Shape(format!(
            "{what} needs a [C, T, I, J] input, got {shape:?}"
        ))),
    }
}

impl Layer {
    /// Resolves shapes; parameters are zero until initialised.
    pub fn build(spec: LayerSpec, input_shape: &[usize]) -> Result<Self> {
        let (output_shape, n_w, n_b) = match spec.kind {
            LayerKind::Conv3d {
                out_channels,
                kernel,
                stride,
            } => {
                let (c, d) = as_dims(input_shape, "conv3d")?;
                if out_channels == 0 {
                    return Err(Error::Config("conv3d needs at least one channel".into()));
                }
                let o = conv_output_dims(d, kernel, stride)?;
                (
                    vec![out_channels, o.time, o.rows, o.cols],
                    out_channels * c * kernel.volume(),
                    out_channels,
                )
            }
            LayerKind::MaxPool3d { window } => {
                let (c, d) = as_dims(input_shape, "maxpool3d")?;
                if window.volume() == 0
                    || d.time % window.time != 0
                    || d.rows % window.rows != 0
                    || d.cols % window.cols != 0
                {
                    return Err(Error::Shape(format!(
                        "maxpool3d window {window:?} does not divide input {input_shape:?}"
                    )));
                }
                (
                    vec![
                        c,
                        d.time / window.time,
                        d.rows / window.rows,
                        d.cols / window.cols,
                    ],
                    0,
                    0,
                )
            }
            LayerKind::Relu | LayerKind::Softmax => (input_shape.to_vec(), 0, 0),
            LayerKind::Flatten => (vec![input_shape.iter().product()], 0, 0),
            LayerKind::Dense { units } => {
                if input_shape.len() != 1 {
                    return Err(Error::Shape(format!(
                        "dense needs a flat input, got {input_shape:?}"
                    )));
                }
                if units == 0 {
                    return Err(Error::Config("dense needs at least one unit".into()));
                }
                (vec![units], units * input_shape[0], units)
            }
        };
        Ok(Layer {
            spec,
            input_shape: input_shape.to_vec(),
            output_shape,
            weight: vec![0.0; n_w],
            bias: vec![0.0; n_b],
        })
    }

    pub fn fan_in(&self) -> usize {
        if self.bias.is_empty() {
            0
        } else {
            self.weight.len() / self.bias.len()
        }
    }

    fn init(&mut self, seed: u64, path: &[u64]) {
        if !self.spec.has_params() {
            return;
        }
        let bound = 1.0 / (self.fan_in() as f64).sqrt();
        let mut rng = rng_from(seed, path);
        for w in &mut self.weight {
            *w = rng.random_range(-bound..bound);
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        Ok(match self.spec.kind {
            LayerKind::Conv3d {
                out_channels,
                kernel,
                stride,
            } => (
                layers::conv3d_forward(x, &self.weight, &self.bias, out_channels, kernel, stride)?,
                None,
            ),
            LayerKind::MaxPool3d { window } => {
                let (y, arg) = layers::maxpool3d_forward(x, window)?;
                (y, Some(arg))
            }
            LayerKind::Relu => (
                Tensor::new(x.shape().to_vec(), layers::relu_forward(x.data()))?,
                None,
            ),
            LayerKind::Flatten => (x.clone().reshape(self.output_shape.clone())?, None),
            LayerKind::Dense { .. } => (
                Tensor::new(
                    self.output_shape.clone(),
                    layers::dense_forward(x.data(), &self.weight, &self.bias)?,
                )?,
                None,
            ),
            LayerKind::Softmax => (
                Tensor::new(x.shape().to_vec(), layers::softmax(x.data()))?,
                None,
            ),
        })
    }

    fn backward(
        &self,
        x: &Tensor,
        y: &Tensor,
        argmax: Option<&Vec<usize>>,
        g: &Tensor,
        want_input: bool,
    ) -> Result<(Option<Tensor>, Option<ParamGrad>)> {
        let shape = || x.shape().to_vec();
        Ok(match self.spec.kind {
            LayerKind::Conv3d {
                out_channels,
                kernel,
                stride,
            } => {
                let c = layers::conv3d_backward(
                    x,
                    &self.weight,
                    out_channels,
                    kernel,
                    stride,
                    g,
                    want_input,
                )?;
                (
                    c.input,
                    Some(ParamGrad {
                        weight: c.weight,
                        bias: c.bias,
                    }),
                )
            }
            LayerKind::Dense { .. } => {
                let d = layers::dense_backward(x.data(), &self.weight, g.data(), want_input)?;
                let gin = d.input.map(|v| Tensor::new(shape(), v)).transpose()?;
                (
                    gin,
                    Some(ParamGrad {
                        weight: d.weight,
                        bias: d.bias,
                    }),
                )
            }
            LayerKind::MaxPool3d { .. } => {
                let arg = argmax.ok_or_else(|| {
                    Error::Contract("maxpool3d backward without recorded argmax".into())
                })?;
                (Some(layers::maxpool3d_backward(x.shape(), arg, g)?), None)
            }
            LayerKind::Relu => (
                Some(Tensor::new(
                    shape(),
                    layers::relu_backward(x.data(), g.data()),
                )?),
                None,
            ),
            LayerKind::Flatten => (Some(g.clone().reshape(shape())?), None),
            LayerKind::Softmax => (
                Some(Tensor::new(
                    shape(),
                    layers::softmax_backward(y.data(), g.data()),
                )?),
                None,
            ),
        })
    }
}

/// Gradient of one parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrad {
    fn zeros_like(layer: &Layer) -> Self {
        ParamGrad {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn add(&mut self, other: &ParamGrad) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Where a parameter lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    Backbone(usize),
    HeadL,
    HeadU,
}

/// Address of a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamRef {
    pub slot: Slot,
    pub bias: bool,
    pub index: usize,
}

/// Gradients for every trainable layer. Frozen and parameter-free layers are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub backbone: Vec<Option<ParamGrad>>,
    pub head_l: Option<ParamGrad>,
    pub head_u: Option<ParamGrad>,
}

impl Gradients {
    pub fn get(&self, slot: Slot) -> Option<&ParamGrad> {
        match slot {
            Slot::Backbone(k) => self.backbone.get(k).and_then(Option::as_ref),
            Slot::HeadL => self.head_l.as_ref(),
            Slot::HeadU => self.head_u.as_ref(),
        }
    }

    /// Scalar entry; zero when the parameter has no gradient (frozen).
    pub fn value(&self, p: ParamRef) -> f64 {
        self.get(p.slot)
            .map(|g| {
                if p.bias {
                    g.bias[p.index]
                } else {
                    g.weight[p.index]
                }
            })
            .unwrap_or(0.0)
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.backbone.iter_mut().zip(&other.backbone) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.add(b);
            }
        }
        if let (Some(a), Some(b)) = (self.head_l.as_mut(), other.head_l.as_ref()) {
            a.add(b);
        }
        if let (Some(a), Some(b)) = (self.head_u.as_mut(), other.head_u.as_ref()) {
            a.add(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.backbone
            .iter()
            .flatten()
            .chain(self.head_l.iter())
            .chain(self.head_u.iter())
            .all(ParamGrad::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSelect {
    pub l: bool,
    pub u: bool,
}

impl HeadSelect {
    pub const NONE: HeadSelect = HeadSelect { l: false, u: false };
    pub const L: HeadSelect = HeadSelect { l: true, u: false };
    pub const U: HeadSelect = HeadSelect { l: false, u: true };
    pub const BOTH: HeadSelect = HeadSelect { l: true, u: true };
}

/// Per-sample network outputs: features `h` and the selected heads' softmax
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub features: Vec<Vec<f64>>,
    pub head_l: Option<Vec<Vec<f64>>>,
    pub head_u: Option<Vec<Vec<f64>>>,
}

/// Loss gradients with respect to [`Outputs`]. Missing parts count as zero.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub features: Option<Vec<Vec<f64>>>,
    pub head_l: Option<Vec<Vec<f64>>>,
    pub head_u: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
struct SampleTrace {
    acts: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

/// Activations recorded by [`Network::forward_train`].
#[derive(Debug, Clone)]
pub struct Trace {
    samples: Vec<SampleTrace>,
    outputs: Outputs,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Hash of every relu on/off pattern and pooling winner. Two traces with
    /// equal signatures lie in the same piecewise-smooth region.
    pub fn kink_signature(&self, net: &Network) -> u64 {
        let mut h = DefaultHasher::new();
        for s in &self.samples {
            for (k, layer) in net.backbone.iter().enumerate() {
                match layer.spec.kind {
                    LayerKind::Relu => {
                        for v in s.acts[k].data() {
                            (*v > 0.0).hash(&mut h);
                        }
                    }
                    LayerKind::MaxPool3d { .. } => s.argmax[k].hash(&mut h),
                    _ => {}
                }
            }
        }
        h.finish()
    }
}

/// Which backbone layers to freeze.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezeSelector {
    None,
    AllBackbone,
    /// The first `n` backbone layers.
    Prefix(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    backbone: Vec<Layer>,
    head_l: Option<Layer>,
    head_u: Option<Layer>,
    seed: u64,
    heads_created: u64,
}

const HEAD_STREAM: u64 = 0x4845_4144;

impl Network {
    /// Builds and initialises a backbone. The last layer must produce a flat
    /// feature vector.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("backbone needs at least one layer".into()));
        }
        let mut shape = input_shape.to_vec();
        let mut backbone = Vec::with_capacity(specs.len());
        for (k, spec) in specs.iter().enumerate() {
            let mut layer = Layer::build(*spec, &shape)?;
            layer.init(seed, &[0, k as u64]);
            shape = layer.output_shape.clone();
            backbone.push(layer);
        }
        if shape.len() != 1 {
            return Err(Error::Shape(format!(
                "backbone must end in a flat feature vector, got {shape:?}"
            )));
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            backbone,
            head_l: None,
            head_u: None,
            seed,
            heads_created: 0,
        })
    }

    pub(crate) fn from_parts(
        input_shape: Vec<usize>,
        backbone: Vec<Layer>,
        head_l: Option<Layer>,
        head_u: Option<Layer>,
        seed: u64,
        heads_created: u64,
    ) -> Self {
        Network {
            input_shape,
            backbone,
            head_l,
            head_u,
            seed,
            heads_created,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn backbone(&self) -> &[Layer] {
        &self.backbone
    }

    pub fn head_l(&self) -> Option<&Layer> {
        self.head_l.as_ref()
    }

    pub fn head_u(&self) -> Option<&Layer> {
        self.head_u.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of heads initialised so far; drives fresh head seeds.
    pub fn heads_created(&self) -> u64 {
        self.heads_created
    }

    /// Feature dimension F.
    pub fn feature_dim(&self) -> usize {
        self.backbone.last().map_or(0, |l| l.output_shape[0])
    }

    pub fn head_l_units(&self) -> usize {
        self.head_l.as_ref().map_or(0, |h| h.bias.len())
    }

    pub fn head_u_units(&self) -> usize {
        self.head_u.as_ref().map_or(0, |h| h.bias.len())
    }

    fn fresh_head(&mut self, units: usize) -> Result<Layer> {
        let mut layer = Layer::build(LayerSpec::dense(units), &[self.feature_dim()])?;
        layer.init(self.seed, &[HEAD_STREAM, self.heads_created]);
        self.heads_created += 1;
        Ok(layer)
    }

    /// Replaces the classification head with a freshly initialised one.
    pub fn attach_head_l(&mut self, units: usize) -> Result<()> {
        self.head_l = Some(self.fresh_head(units)?);
        Ok(())
    }

    /// Replaces the clustering head with a freshly initialised one.
    pub fn attach_head_u(&mut self, units: usize) -> Result<()> {
        self.head_u = Some(self.fresh_head(units)?);
        Ok(())
    }

    pub fn detach_head_l(&mut self) {
        self.head_l = None;
    }

    /// Appends `extra` freshly initialised output units to the classification
    /// head, keeping the existing rows.
    pub fn extend_head_l(&mut self, extra: usize) -> Result<()> {
        if self.head_l.is_none() {
            return Err(Error::Contract("no classification head to extend".into()));
        }
        if extra == 0 {
            return Ok(());
        }
        let add = self.fresh_head(extra)?;
        let head = self.head_l.as_mut().expect("checked above");
        head.weight.extend_from_slice(&add.weight);
        head.bias.extend_from_slice(&add.bias);
        let units = head.bias.len();
        head.spec = LayerSpec::dense(units);
        head.output_shape = vec![units];
        Ok(())
    }

    pub fn set_frozen(&mut self, selector: FreezeSelector) -> Result<()> {
        let n = match selector {
            FreezeSelector::None => 0,
            FreezeSelector::AllBackbone => self.backbone.len(),
            FreezeSelector::Prefix(n) if n <= self.backbone.len() => n,
            FreezeSelector::Prefix(n) => {
                return Err(Error::Config(format!(
                    "cannot freeze {n} layers of a {}-layer backbone",
                    self.backbone.len()
                )))
            }
        };
        for (k, layer) in self.backbone.iter_mut().enumerate() {
            layer.spec.trainable = k >= n;
        }
        Ok(())
    }

    pub fn layer(&self, slot: Slot) -> Option<&Layer> {
        match slot {
            Slot::Backbone(k) => self.backbone.get(k),
            Slot::HeadL => self.head_l.as_ref(),
            Slot::HeadU => self.head_u.as_ref(),
        }
    }

    pub(crate) fn layer_mut(&mut self, slot: Slot) -> Option<&mut Layer> {
        match slot {
            Slot::Backbone(k) => self.backbone.get_mut(k),
            Slot::HeadL => self.head_l.as_mut(),
            Slot::HeadU => self.head_u.as_mut(),
        }
    }

    /// Slots of all parameterised layers that currently train.
    pub fn trainable_slots(&self) -> Vec<Slot> {
        let mut out: Vec<Slot> = self
            .backbone
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec.has_params() && l.spec.trainable)
            .map(|(k, _)| Slot::Backbone(k))
            .collect();
        if self.head_l.is_some() {
            out.push(Slot::HeadL);
        }
        if self.head_u.is_some() {
            out.push(Slot::HeadU);
        }
        out
    }

    pub fn trainable_params(&self) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for slot in self.trainable_slots() {
            let layer = self.layer(slot).expect("slot listed by trainable_slots");
            for index in 0..layer.weight.len() {
                out.push(ParamRef {
                    slot,
                    bias: false,
                    index,
                });
            }
            for index in 0..layer.bias.len() {
                out.push(ParamRef {
                    slot,
                    bias: true,
                    index,
                });
            }
        }
        out
    }

    pub fn param(&self, p: ParamRef) -> Option<f64> {
        let l = self.layer(p.slot)?;
        if p.bias {
            l.bias.get(p.index).copied()
        } else {
            l.weight.get(p.index).copied()
        }
    }

    pub fn set_param(&mut self, p: ParamRef, value: f64) -> Result<()> {
        let l = self
            .layer_mut(p.slot)
            .ok_or_else(|| Error::InvalidInput(format!("no layer at {:?}", p.slot)))?;
        let v = if p.bias {
            l.bias.get_mut(p.index)
        } else {
            l.weight.get_mut(p.index)
        };
        *v.ok_or_else(|| Error::InvalidInput(format!("parameter {p:?} out of range")))? = value;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.backbone
            .iter()
            .chain(self.head_l.iter())
            .chain(self.head_u.iter())
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_batch(&self, batch: &[Tensor], heads: HeadSelect) -> Result<()> {
        if let Some(bad) = batch.iter().find(|x| x.shape() != self.input_shape) {
            return Err(Error::Shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                bad.shape()
            )));
        }
        if heads.l && self.head_l.is_none() {
            return Err(Error::Contract(
                "classification head requested but absent".into(),
            ));
        }
        if heads.u && self.head_u.is_none() {
            return Err(Error::Contract(
                "clustering head requested but absent".into(),
            ));
        }
        Ok(())
    }

    fn head_probs(head: &Layer, h: &[f64]) -> Result<Vec<f64>> {
        Ok(layers::softmax(&layers::dense_forward(
            h,
            &head.weight,
            &head.bias,
        )?))
    }

    fn features_one(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut a = x.clone();
        for layer in &self.backbone {
            a = layer.forward(&a)?.0;
        }
        Ok(a.into_data())
    }

    fn outputs_from_features(&self, features: Vec<Vec<f64>>, heads: HeadSelect) -> Result<Outputs> {
        let run = |head: &Option<Layer>, on: bool| -> Result<Option<Vec<Vec<f64>>>> {
            if !on {
                return Ok(None);
            }
            let head = head.as_ref().expect("checked by check_batch");
            features
                .iter()
                .map(|h| Self::head_probs(head, h))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        };
        let head_l = run(&self.head_l, heads.l)?;
        let head_u = run(&self.head_u, heads.u)?;
        Ok(Outputs {
            features,
            head_l,
            head_u,
        })
    }

    /// Inference pass. Samples are processed in parallel; results keep batch
    /// order.
    pub fn forward(&self, batch: &[Tensor], heads: HeadSelect) -> Result<Outputs> {
        self.check_batch(batch, heads)?;
        let features = batch
            .par_iter()
            .map(|x| self.features_one(x))
            .collect::<Result<Vec<_>>>()?;
        let out = self.outputs_from_features(features, heads)?;
        if !out.features.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite network features".into()));
        }
        Ok(out)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_train(&self, batch: &[Tensor], heads: HeadSelect) -> Result<(Outputs, Trace)> {
        self.check_batch(batch, heads)?;
        let samples = batch
            .par_iter()
            .map(|x| -> Result<SampleTrace> {
                let mut acts = Vec::with_capacity(self.backbone.len() + 1);
                let mut argmax = Vec::with_capacity(self.backbone.len());
                acts.push(x.clone());
                for layer in &self.backbone {
                    let (y, arg) = layer.forward(acts.last().expect("non-empty"))?;
                    acts.push(y);
                    argmax.push(arg);
                }
                Ok(SampleTrace { acts, argmax })
            })
            .collect::<Result<Vec<_>>>()?;
        let features = samples
            .iter()
            .map(|s| s.acts.last().expect("non-empty").data().to_vec())
            .collect();
        let outputs = self.outputs_from_features(features, heads)?;
        if !outputs.features.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite network features".into()));
        }
        Ok((outputs.clone(), Trace { samples, outputs }))
    }

    fn empty_gradients(&self) -> Gradients {
        Gradients {
            backbone: self
                .backbone
                .iter()
                .map(|l| {
                    (l.spec.has_params() && l.spec.trainable).then(|| ParamGrad::zeros_like(l))
                })
                .collect(),
            head_l: self.head_l.as_ref().map(ParamGrad::zeros_like),
            head_u: self.head_u.as_ref().map(ParamGrad::zeros_like),
        }
    }

    /// Backpropagates output gradients through the recorded trace. The result
    /// sums over samples (losses already carry their own batch mean).
    pub fn backward(&self, trace: &Trace, grads: &OutputGrads) -> Result<Gradients> {
        let n = trace.samples.len();
        let check = |g: &Option<Vec<Vec<f64>>>, what: &str| -> Result<()> {
            match g {
                Some(g) if g.len() != n => Err(Error::Shape(format!(
                    "{what} gradient covers {} samples, trace has {n}",
                    g.len()
                ))),
                _ => Ok(()),
            }
        };
        check(&grads.features, "feature")?;
        check(&grads.head_l, "classification head")?;
        check(&grads.head_u, "clustering head")?;
        if grads.head_l.is_some() && trace.outputs.head_l.is_none() {
            return Err(Error::Contract(
                "head_l gradient without head_l outputs".into(),
            ));
        }
        if grads.head_u.is_some() && trace.outputs.head_u.is_none() {
            return Err(Error::Contract(
                "head_u gradient without head_u outputs".into(),
            ));
        }
        let first_trainable = self
            .backbone
            .iter()
            .position(|l| l.spec.has_params() && l.spec.trainable);

        let per_sample = (0..n)
            .into_par_iter()
            .map(|s| self.backward_one(trace, grads, s, first_trainable))
            .collect::<Result<Vec<_>>>()?;
        let mut total = self.empty_gradients();
        for g in &per_sample {
            total.add(g);
        }
        Ok(total)
    }

    fn backward_one(
        &self,
        trace: &Trace,
        grads: &OutputGrads,
        s: usize,
        first_trainable: Option<usize>,
    ) -> Result<Gradients> {
        let st = &trace.samples[s];
        let feat = st.acts.last().expect("non-empty").data();
        let f = feat.len();
        let mut out = self.empty_gradients();
        let mut gh = match &grads.features {
            Some(g) if g[s].len() != f => {
                return Err(Error::Shape(format!(
                    "feature gradient of width {} for {f} features",
                    g[s].len()
                )))
            }
            Some(g) => g[s].clone(),
            None => vec![0.0; f],
        };
        let need_h = first_trainable.is_some();
        let heads = [
            (
                &self.head_l,
                &trace.outputs.head_l,
                &grads.head_l,
                &mut out.head_l,
            ),
            (
                &self.head_u,
                &trace.outputs.head_u,
                &grads.head_u,
                &mut out.head_u,
            ),
        ];
        for (head, probs, gprobs, slot) in heads {
            let (Some(head), Some(probs), Some(gprobs)) = (head, probs, gprobs) else {
                continue;
            };
            let p = &probs[s];
            if gprobs[s].len() != p.len() {
                return Err(Error::Shape(format!(
                    "head gradient of width {} for {} outputs",
                    gprobs[s].len(),
                    p.len()
                )));
            }
            let gz = layers::softmax_backward(p, &gprobs[s]);
            let d = layers::dense_backward(feat, &head.weight, &gz, need_h)?;
            if let Some(gi) = d.input {
                for (a, b) in gh.iter_mut().zip(&gi) {
                    *a += b;
                }
            }
            *slot = Some(ParamGrad {
                weight: d.weight,
                bias: d.bias,
            });
        }
        let Some(first) = first_trainable else {
            return Ok(out);
        };
        let mut g = Tensor::new(vec![f], gh)?;
        for k in (first..self.backbone.len()).rev() {
            let layer = &self.backbone[k];
            let (gin, pg) = layer.backward(
                &st.acts[k],
                &st.acts[k + 1],
                st.argmax[k].as_ref(),
                &g,
                k > first,
            )?;
            if layer.spec.trainable {
                if let Some(pg) = pg {
                    out.backbone[k] = Some(pg);
                }
            }
            if k > first {
                g = gin.expect("input gradient requested");
            }
        }
        Ok(out)
    }
}

/// Picks a kernel extent so that the convolved length divides by `pool`,
/// preferring `want`.
fn fit_kernel(n: usize, want: usize, pool: usize) -> Result<usize> {
    (1..=want)
        .rev()
        .find(|&k| k <= n && (n - k + 1).is_multiple_of(pool))
        .ok_or_else(|| {
            Error::Config(format!(
                "no kernel up to {want} makes length {n} divisible by pool {pool}"
            ))
        })
}

/// Two conv blocks and a dense feature layer:
/// `conv(8, 3x3x2) relu pool(2x2x1) conv(16, 3x3x2) relu pool(2x2x2) flatten dense(F) relu`.
///
/// Kernel extents shrink where needed so every pooling window divides its
/// input; pooling along an axis of length 1 is skipped.
pub fn default_backbone(input_shape: &[usize], features: usize) -> Result<Vec<LayerSpec>> {
    let (_, d) = as_dims(input_shape, "backbone")?;
    if d.volume() == 0 || features == 0 {
        return Err(Error::Config(format!(
            "cannot build a backbone for input {input_shape:?} with {features} features"
        )));
    }
    let pool_for = |n: usize, p: usize| if n > p { p } else { 1 };
    let p1 = Dims3::new(1, pool_for(d.rows - 1, 2), pool_for(d.cols - 1, 2));
    let k1 = Dims3::new(
        fit_kernel(d.time, 2, p1.time)?,
        fit_kernel(d.rows, 3, p1.rows)?,
        fit_kernel(d.cols, 3, p1.cols)?,
    );
    let c1 = Dims3::new(
        (d.time - k1.time + 1) / p1.time,
        (d.rows - k1.rows + 1) / p1.rows,
        (d.cols - k1.cols + 1) / p1.cols,
    );
    let p2 = Dims3::new(
        pool_for(c1.time, 2),
        pool_for(c1.rows, 2),
        pool_for(c1.cols, 2),
    );
    let k2 = Dims3::new(
        fit_kernel(c1.time, 2, p2.time)?,
        fit_kernel(c1.rows, 3, p2.rows)?,
        fit_kernel(c1.cols, 3, p2.cols)?,
    );
    Ok(vec![
        LayerSpec::conv3d(8, k1),
        LayerSpec::relu(),
        LayerSpec::maxpool3d(p1),
        LayerSpec::conv3d(16, k2),
        LayerSpec::relu(),
        LayerSpec::maxpool3d(p2),
        LayerSpec::flatten(),
        LayerSpec::dense(features),
        LayerSpec::relu(),
    ])
}
