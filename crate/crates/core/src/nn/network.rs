//! The U-shaped encoder-decoder and its training step.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    concat_backward, concat_forward, conv3d_backward, conv3d_forward, dropout_forward,
    maxpool3d_backward, maxpool3d_forward, relu_backward, relu_forward, upsample3d_backward,
    upsample3d_forward, Conv3d, Mode, UpsampleMode,
};
use super::loss::{mean_cross_entropy, softmax_voxels};
use super::tensor::{Shape, Tensor4};
use crate::error::{Error, Result};
use crate::volume::LabelMap;

/// Builder settings for [`Network::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub in_channels: usize,
    /// Output classes including background (class 0).
    pub num_classes: usize,
    /// Number of pooling levels.
    pub depth: usize,
    /// Channels at the first level; doubled at every level below it.
    pub base_channels: usize,
    pub kernel: usize,
    /// Dropout probability applied after the bottleneck.
    pub dropout: f64,
    pub upsample: UpsampleMode,
    /// Spatial dims the network is built for; each must be divisible by `2^depth`.
    pub input_dims: [usize; 3],
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 21,
            depth: 3,
            base_channels: 8,
            kernel: 3,
            dropout: 0.5,
            upsample: UpsampleMode::Nearest,
            input_dims: [64, 64, 64],
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// The small network used for gradient checks: 8³ input, two levels,
    /// four base channels, no dropout.
    pub fn toy() -> Self {
        Self {
            depth: 2,
            base_channels: 4,
            dropout: 0.0,
            input_dims: [8, 8, 8],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.depth < 1 {
            return bad("network depth must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad("network needs at least two classes".into());
        }
        if self.base_channels < 1 || self.in_channels < 1 {
            return bad("channel counts must be >= 1".into());
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel size {} must be odd", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        let m = 1usize << self.depth;
        if self.input_dims.iter().any(|&d| d == 0 || d % m != 0) {
            return bad(format!(
                "input dims {:?} must be positive multiples of {m}",
                self.input_dims
            ));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Parameter count of the network this config builds, from the layer
    /// formula alone.
    pub fn analytic_param_count(&self) -> usize {
        let k3 = self.kernel.pow(3);
        let conv = |i: usize, o: usize, taps: usize| o * i * taps + o;
        let mut total = 0;
        let mut prev = self.in_channels;
        for l in 0..self.depth {
            let w = self.width(l);
            total += conv(prev, w, k3) + conv(w, w, k3);
            prev = w;
        }
        let wb = self.width(self.depth);
        total += conv(prev, wb, k3) + conv(wb, wb, k3);
        prev = wb;
        for l in (0..self.depth).rev() {
            let w = self.width(l);
            total += conv(prev + w, w, k3) + conv(w, w, k3);
            prev = w;
        }
        total + conv(prev, self.num_classes, 1)
    }
}

/// One step of the layer list.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv(Conv3d),
    Relu,
    MaxPool,
    Upsample(UpsampleMode),
    Dropout(f64),
    /// Stores the current activation for a later skip merge.
    Save(usize),
    /// Concatenates the current activation with a saved one.
    Concat(usize),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Conv(_) => "conv",
            Op::Relu => "relu",
            Op::MaxPool => "maxpool",
            Op::Upsample(_) => "upsample",
            Op::Dropout(_) => "dropout",
            Op::Save(_) => "save",
            Op::Concat(_) => "concat",
        }
    }

    /// Convolution, pooling, upsampling, dropout and merge layers; activations
    /// and skip bookkeeping are not counted.
    fn is_structural(&self) -> bool {
        !matches!(self, Op::Relu | Op::Save(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: Op,
    pub input: Shape,
    pub output: Shape,
}

/// A named, flat view of one parameter array.
#[derive(Debug, Clone, Copy)]
pub struct ParamView<'a> {
    pub name: &'a str,
    pub kind: ParamKind,
    pub shape: [usize; 5],
    pub data: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Gradients for every convolution, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub convs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    /// Flattened in registry order (weight then bias per convolution).
    pub fn flat(&self) -> Vec<f64> {
        self.convs
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        self.convs
            .iter_mut()
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
            .collect()
    }
}

enum Trace {
    Conv(Tensor4),
    Relu(Tensor4),
    Pool(Vec<u32>, [usize; 3]),
    Upsample,
    Dropout(Option<Vec<f64>>),
    Save,
    Concat(usize),
}

/// Everything a backward pass needs from the forward pass.
pub struct ForwardTrace {
    traces: Vec<Trace>,
    /// Per-voxel class probabilities.
    pub probs: Tensor4,
}

impl ForwardTrace {
    /// Whether two passes took the same linear piece of the network: every
    /// ReLU in the same on/off state and every pooling window won by the
    /// same voxel.
    pub fn same_pieces(&self, other: &ForwardTrace) -> bool {
        self.traces.len() == other.traces.len()
            && self.traces.iter().zip(&other.traces).all(|pair| match pair {
                (Trace::Relu(a), Trace::Relu(b)) => {
                    a.data().iter().zip(b.data()).all(|(x, y)| (*x > 0.0) == (*y > 0.0))
                }
                (Trace::Pool(a, _), Trace::Pool(b, _)) => a == b,
                _ => true,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
}

fn conv_layer(name: String, input: Shape, out_channels: usize, kernel: usize) -> Layer {
    Layer {
        name,
        op: Op::Conv(Conv3d::zeros(input.channels, out_channels, kernel)),
        input,
        output: Shape {
            channels: out_channels,
            dims: input.dims,
        },
    }
}

fn simple(name: String, op: Op, input: Shape, output: Shape) -> Layer {
    Layer {
        name,
        op,
        input,
        output,
    }
}

impl Network {
    /// Builds the encoder-decoder with He-initialised weights drawn from `config.seed`.
    ///
    /// Each encoder level is conv-relu-conv-relu followed by 2³ max pooling,
    /// the bottleneck is conv-relu-conv-relu-dropout, each decoder level is
    /// upsample, skip merge, conv-relu-conv-relu, and a 1³ convolution maps
    /// to class scores.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let mut layers = Vec::new();
        let mut cur = Shape {
            channels: config.in_channels,
            dims: config.input_dims,
        };
        let block = |layers: &mut Vec<Layer>, cur: &mut Shape, prefix: &str, width: usize| {
            for i in 1..=2 {
                let l = conv_layer(format!("{prefix}.conv{i}"), *cur, width, k);
                *cur = l.output;
                layers.push(l);
                layers.push(simple(format!("{prefix}.relu{i}"), Op::Relu, *cur, *cur));
            }
        };
        for level in 0..config.depth {
            let prefix = format!("enc{level}");
            block(&mut layers, &mut cur, &prefix, config.width(level));
            layers.push(simple(format!("{prefix}.skip"), Op::Save(level), cur, cur));
            let pooled = Shape {
                channels: cur.channels,
                dims: cur.dims.map(|d| d / 2),
            };
            layers.push(simple(format!("{prefix}.pool"), Op::MaxPool, cur, pooled));
            cur = pooled;
        }
        block(&mut layers, &mut cur, "bottleneck", config.width(config.depth));
        layers.push(simple(
            "bottleneck.dropout".into(),
            Op::Dropout(config.dropout),
            cur,
            cur,
        ));
        for level in (0..config.depth).rev() {
            let prefix = format!("dec{level}");
            let up = Shape {
                channels: cur.channels,
                dims: cur.dims.map(|d| d * 2),
            };
            layers.push(simple(format!("{prefix}.up"), Op::Upsample(config.upsample), cur, up));
            let merged = Shape {
                channels: up.channels + config.width(level),
                dims: up.dims,
            };
            layers.push(simple(format!("{prefix}.merge"), Op::Concat(level), up, merged));
            cur = merged;
            block(&mut layers, &mut cur, &prefix, config.width(level));
        }
        layers.push(conv_layer("head".into(), cur, config.num_classes, 1));

        let mut net = Self { config, layers };
        net.check_shapes()?;
        net.init_he(net.config.seed);
        Ok(net)
    }

    /// A network from an explicit layer list; a softmax is always applied
    /// to the last layer's output.
    pub fn from_layers(config: NetworkConfig, layers: Vec<Layer>) -> Result<Self> {
        let net = Self { config, layers };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let mut expect = Shape {
            channels: self.config.in_channels,
            dims: self.config.input_dims,
        };
        let mut saved: Vec<Option<Shape>> = Vec::new();
        for layer in &self.layers {
            let err = |m: String| Error::Shape {
                layer: layer.name.clone(),
                message: m,
            };
            if layer.input != expect {
                return Err(err(format!(
                    "declared input {:?} but previous layer produces {:?}",
                    layer.input, expect
                )));
            }
            match &layer.op {
                Op::Conv(c) => {
                    if c.in_channels != layer.input.channels || c.out_channels != layer.output.channels {
                        return Err(err("convolution channels disagree with declared shapes".into()));
                    }
                }
                Op::Save(slot) => {
                    if saved.len() <= *slot {
                        saved.resize(slot + 1, None);
                    }
                    saved[*slot] = Some(layer.input);
                }
                Op::Concat(slot) => {
                    let s = saved
                        .get(*slot)
                        .copied()
                        .flatten()
                        .ok_or_else(|| err(format!("skip slot {slot} was never saved")))?;
                    if s.dims != layer.input.dims
                        || layer.output.channels != layer.input.channels + s.channels
                    {
                        return Err(err(format!("skip slot {slot} has shape {s:?}")));
                    }
                }
                Op::MaxPool if layer.input.dims.iter().any(|d| d % 2 != 0) => {
                    return Err(err("pooling an odd dimension".into()));
                }
                _ => {}
            }
            expect = layer.output;
        }
        if expect.channels != self.config.num_classes || expect.dims != self.config.input_dims {
            return Err(Error::Shape {
                layer: "output".into(),
                message: format!("network produces {expect:?}"),
            });
        }
        Ok(())
    }

    fn init_he(&mut self, seed: u64) {
        let mut rng = crate::rng::stream(seed, "init");
        for layer in &mut self.layers {
            if let Op::Conv(c) = &mut layer.op {
                let fan_in = (c.in_channels * c.kernel.pow(3)) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                c.weight.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
                c.bias.fill(0.0);
            }
        }
    }

    /// Zeroes the final 1³ convolution so every voxel starts at the uniform distribution.
    pub fn zero_head(&mut self) {
        if let Some(Op::Conv(c)) = self.layers.last_mut().map(|l| &mut l.op) {
            c.weight.fill(0.0);
            c.bias.fill(0.0);
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Convolution, pooling, upsampling, dropout and merge layers.
    pub fn layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.op.is_structural()).count()
    }

    pub fn input_shape(&self) -> Shape {
        Shape {
            channels: self.config.in_channels,
            dims: self.config.input_dims,
        }
    }

    /// Parameter registry in layer order: `<layer>.weight`, `<layer>.bias`.
    pub fn params(&self) -> Vec<(String, ParamView<'_>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Op::Conv(c) = &layer.op {
                let k = c.kernel;
                out.push((
                    format!("{}.weight", layer.name),
                    ParamView {
                        name: &layer.name,
                        kind: ParamKind::Weight,
                        shape: [c.out_channels, c.in_channels, k, k, k],
                        data: &c.weight,
                    },
                ));
                out.push((
                    format!("{}.bias", layer.name),
                    ParamView {
                        name: &layer.name,
                        kind: ParamKind::Bias,
                        shape: [c.out_channels, 1, 1, 1, 1],
                        data: &c.bias,
                    },
                ));
            }
        }
        out
    }

    /// Mutable parameter arrays in registry order.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Op::Conv(c) = &mut layer.op {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.data.len()).sum()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::Shape {
                layer: "input".into(),
                message: format!("expected {:?}, got {:?}", self.input_shape(), x.shape()),
            });
        }
        Ok(())
    }

    /// Inference: per-voxel class probabilities, dropout disabled.
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward_trace(x, None)?.probs)
    }

    /// Forward pass retaining every cache needed by [`Network::backward`].
    /// Dropout is active only when an RNG is supplied.
    pub fn forward_trace(&self, x: &Tensor4, mut dropout_rng: Option<&mut dyn RngCore>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut saved: Vec<Option<Tensor4>> = Vec::new();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let name_err = |e: Error| Error::Shape {
                layer: layer.name.clone(),
                message: e.to_string(),
            };
            match &layer.op {
                Op::Conv(c) => {
                    let out = conv3d_forward(&cur, c).map_err(name_err)?;
                    traces.push(Trace::Conv(std::mem::replace(&mut cur, out)));
                }
                Op::Relu => {
                    relu_forward(&mut cur);
                    traces.push(Trace::Relu(cur.clone()));
                }
                Op::MaxPool => {
                    let dims = cur.dims();
                    let (out, arg) = maxpool3d_forward(&cur).map_err(name_err)?;
                    cur = out;
                    traces.push(Trace::Pool(arg, dims));
                }
                Op::Upsample(mode) => {
                    cur = upsample3d_forward(&cur, *mode);
                    traces.push(Trace::Upsample);
                }
                Op::Dropout(p) => {
                    let mask = match dropout_rng.as_deref_mut() {
                        Some(rng) => dropout_forward(&mut cur, *p, Mode::Train, rng),
                        None => None,
                    };
                    traces.push(Trace::Dropout(mask));
                }
                Op::Save(slot) => {
                    if saved.len() <= *slot {
                        saved.resize(slot + 1, None);
                    }
                    saved[*slot] = Some(cur.clone());
                    traces.push(Trace::Save);
                }
                Op::Concat(slot) => {
                    let skip = saved[*slot].as_ref().expect("shape check guarantees the slot");
                    let a = cur.channels();
                    cur = concat_forward(&cur, skip).map_err(name_err)?;
                    traces.push(Trace::Concat(a));
                }
            }
        }
        Ok(ForwardTrace {
            traces,
            probs: softmax_voxels(&cur),
        })
    }

    fn check_target(&self, target: &LabelMap) -> Result<()> {
        if target.dims() != self.config.input_dims {
            return Err(Error::GridMismatch {
                left: self.config.input_dims,
                right: target.dims(),
            });
        }
        if let Some(&bad) = target
            .data()
            .iter()
            .find(|&&t| t as usize >= self.config.num_classes)
        {
            return Err(Error::InvalidParameter(format!(
                "target class {bad} exceeds {} classes",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Mean per-voxel cross-entropy of a forward trace against class targets.
    pub fn loss(&self, trace: &ForwardTrace, target: &LabelMap) -> Result<f64> {
        self.check_target(target)?;
        Ok(mean_cross_entropy(&trace.probs, target.data()).0)
    }

    /// Exact gradients of the mean per-voxel cross-entropy by reverse traversal.
    pub fn backward(&self, trace: ForwardTrace, target: &LabelMap) -> Result<(f64, Gradients)> {
        self.check_target(target)?;
        let (loss, mut grad) = mean_cross_entropy(&trace.probs, target.data());
        if !loss.is_finite() {
            return Err(Error::NonFiniteTraining {
                layer: "loss".into(),
                what: "loss",
            });
        }
        let mut convs = Vec::new();
        let mut skip_grads: Vec<Option<Tensor4>> = Vec::new();
        for (idx, (layer, tr)) in self.layers.iter().zip(trace.traces).enumerate().rev() {
            match (&layer.op, tr) {
                (Op::Conv(c), Trace::Conv(input)) => {
                    let g = conv3d_backward(&input, c, &grad, idx > 0);
                    if g.weight.iter().chain(&g.bias).any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteTraining {
                            layer: layer.name.clone(),
                            what: "gradient",
                        });
                    }
                    convs.push((g.weight, g.bias));
                    if let Some(gin) = g.input {
                        grad = gin;
                    }
                }
                (Op::Relu, Trace::Relu(out)) => relu_backward(&out, &mut grad),
                (Op::MaxPool, Trace::Pool(arg, dims)) => {
                    grad = maxpool3d_backward(&grad, &arg, dims);
                }
                (Op::Upsample(mode), Trace::Upsample) => grad = upsample3d_backward(&grad, *mode),
                (Op::Dropout(_), Trace::Dropout(mask)) => {
                    if let Some(m) = mask {
                        grad.data_mut().iter_mut().zip(&m).for_each(|(g, m)| *g *= m);
                    }
                }
                (Op::Concat(slot), Trace::Concat(a)) => {
                    let (ga, gb) = concat_backward(&grad, a);
                    if skip_grads.len() <= *slot {
                        skip_grads.resize(slot + 1, None);
                    }
                    skip_grads[*slot] = Some(gb);
                    grad = ga;
                }
                (Op::Save(slot), Trace::Save) => {
                    if let Some(g) = skip_grads.get_mut(*slot).and_then(Option::take) {
                        grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                    }
                }
                (op, _) => unreachable!("trace does not match layer {}", op.kind()),
            }
        }
        convs.reverse();
        Ok((loss, Gradients { convs }))
    }

    /// Plain SGD update `w <- w - lr * grad`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        let mut it = grads.convs.iter();
        for layer in &mut self.layers {
            if let Op::Conv(c) = &mut layer.op {
                let (gw, gb) = it.next().expect("one gradient per convolution");
                c.weight.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
                c.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
            }
        }
    }

    /// One training step on one sample: forward with dropout, backward, SGD.
    /// Returns the loss before the update.
    pub fn backward_and_step(
        &mut self,
        x: &Tensor4,
        target: &LabelMap,
        lr: f64,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        let trace = self.forward_trace(x, Some(rng))?;
        let (loss, grads) = self.backward(trace, target)?;
        self.apply_sgd(&grads, lr);
        Ok(loss)
    }
}
