//! Sequential models assembled from a declarative [`ModelSpec`].

use num_traits::Float;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BatchStats, Graph, Padding, Var};
use crate::kernels::Pad2d;
use crate::layers::EdgeDetectLayer;
use crate::real::Real;
use crate::rng::uniform;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default)]
        padding: Padding,
    },
    EdgeDetect {
        units: usize,
        kernel: usize,
        #[serde(default)]
        padding: Padding,
    },
    BatchNorm,
    Relu,
    MaxPool {
        size: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::EdgeDetect { .. } => "edge_detect",
            LayerSpec::BatchNorm => "batch_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// One logit per example, binary cross-entropy.
    Binary,
    /// One logit per class, categorical cross-entropy.
    Categorical,
}

/// Per-example activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial { height: usize, width: usize, channels: usize },
    Flat(usize),
}

impl ActShape {
    pub fn channels(&self) -> usize {
        match *self {
            ActShape::Spatial { channels, .. } => channels,
            ActShape::Flat(n) => n,
        }
    }

    pub fn size(&self) -> usize {
        match *self {
            ActShape::Spatial { height, width, channels } => height * width * channels,
            ActShape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// `[height, width, channels]`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
}

/// Architectures of the edge-vs-noise comparison on 5×5 patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table1Row {
    /// A single linear unit on the flattened patch.
    Standard,
    /// `h` 3×3 filters, batch norm, ReLU, dense output.
    Layered(usize),
    /// A single edge-detection unit with the given kernel size.
    Edge(usize),
}

impl Table1Row {
    pub const DEFAULT_ROWS: [Table1Row; 5] = [
        Table1Row::Standard,
        Table1Row::Layered(1),
        Table1Row::Layered(2),
        Table1Row::Layered(3),
        Table1Row::Edge(5),
    ];

    pub fn label(&self) -> String {
        match self {
            Table1Row::Standard => "Standard unit".to_string(),
            Table1Row::Layered(h) => format!("Layered, h={h}"),
            Table1Row::Edge(_) => "Edge detector unit".to_string(),
        }
    }
}

/// First layer of the scaled-down CIFAR-10 network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLayer {
    Regular,
    Edge,
}

impl ModelSpec {
    pub fn table1(row: Table1Row, patch: usize) -> Self {
        let layers = match row {
            Table1Row::Standard => vec![LayerSpec::Flatten, LayerSpec::Dense { units: 1 }],
            Table1Row::Layered(h) => vec![
                LayerSpec::Conv2d {
                    filters: h,
                    kernel: 3,
                    padding: Padding::None,
                },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 1 },
            ],
            Table1Row::Edge(n) => {
                let mut l = vec![LayerSpec::EdgeDetect {
                    units: 1,
                    kernel: n,
                    padding: Padding::None,
                }];
                if n < patch {
                    // smaller receptive field: pool the map down to one response
                    l.push(LayerSpec::MaxPool { size: patch - n + 1 });
                }
                l.push(LayerSpec::Flatten);
                l
            }
        };
        ModelSpec {
            name: row.label(),
            input: [patch, patch, 3],
            layers,
            loss: LossKind::Binary,
        }
    }

    /// Small VGG-style classifier for 32×32 colour images: a 5×5 first layer
    /// with 32 units, two 3×3 convolution blocks, max pooling after each
    /// block and a dense head.
    pub fn cifar(first: FirstLayer, classes: usize) -> Self {
        let first_layer = match first {
            FirstLayer::Regular => LayerSpec::Conv2d {
                filters: 32,
                kernel: 5,
                padding: Padding::Reflect,
            },
            FirstLayer::Edge => LayerSpec::EdgeDetect {
                units: 32,
                kernel: 5,
                padding: Padding::Reflect,
            },
        };
        let block = |filters| {
            [
                LayerSpec::Conv2d {
                    filters,
                    kernel: 3,
                    padding: Padding::Reflect,
                },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
            ]
        };
        let mut layers = vec![first_layer, LayerSpec::BatchNorm, LayerSpec::Relu, LayerSpec::MaxPool { size: 2 }];
        layers.extend(block(32));
        layers.extend(block(64));
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense { units: classes });
        ModelSpec {
            name: match first {
                FirstLayer::Regular => "vgg-small".to_string(),
                FirstLayer::Edge => "vgg-small+edge".to_string(),
            },
            input: [32, 32, 3],
            layers,
            loss: LossKind::Categorical,
        }
    }

    /// Activation shape after every layer, validating the chain.
    pub fn shapes(&self) -> Result<Vec<ActShape>> {
        let [h, w, c] = self.input;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::invalid("model_spec", "input dimensions must be positive"));
        }
        let mut cur = ActShape::Spatial {
            height: h,
            width: w,
            channels: c,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = next_shape(cur, layer).map_err(|msg| Error::InvalidArgument {
                op: "model_spec",
                msg: format!("layer {i} ({}): {msg}", layer.kind()),
            })?;
            out.push(cur);
        }
        let last = out.last().copied().unwrap_or(cur);
        let ok = match (self.loss, last) {
            (LossKind::Binary, ActShape::Flat(1)) => true,
            (LossKind::Categorical, ActShape::Flat(k)) => k >= 2,
            _ => false,
        };
        if !ok {
            return Err(Error::invalid(
                "model_spec",
                format!("output shape {last:?} does not fit a {:?} loss", self.loss),
            ));
        }
        Ok(out)
    }

    /// Side of the square input region that influences one unit of `layer`.
    pub fn receptive_field(&self, layer: usize) -> usize {
        let mut field = 1;
        let mut jump = 1;
        for spec in self.layers.iter().take(layer + 1) {
            match *spec {
                LayerSpec::Conv2d { kernel, .. } | LayerSpec::EdgeDetect { kernel, .. } => field += (kernel - 1) * jump,
                LayerSpec::MaxPool { size } => {
                    field += (size - 1) * jump;
                    jump *= size;
                }
                _ => {}
            }
        }
        field
    }
}

fn next_shape(cur: ActShape, layer: &LayerSpec) -> core::result::Result<ActShape, String> {
    let spatial = |s: ActShape| match s {
        ActShape::Spatial { height, width, channels } => Ok((height, width, channels)),
        ActShape::Flat(_) => Err("needs a spatial input".to_string()),
    };
    let positive = |v: usize, what: &str| if v == 0 { Err(format!("{what} must be positive")) } else { Ok(()) };
    Ok(match *layer {
        LayerSpec::Conv2d { filters: out, kernel, padding } | LayerSpec::EdgeDetect { units: out, kernel, padding } => {
            let (h, w, _) = spatial(cur)?;
            positive(out, "unit count")?;
            positive(kernel, "kernel size")?;
            let (h, w) = match padding {
                Padding::None if kernel > h || kernel > w => return Err(format!("kernel {kernel} larger than {h}×{w} input")),
                Padding::None => (h - kernel + 1, w - kernel + 1),
                Padding::Reflect if kernel / 2 >= h.min(w) => return Err("reflect padding exceeds the input".to_string()),
                _ => (h, w),
            };
            ActShape::Spatial {
                height: h,
                width: w,
                channels: out,
            }
        }
        LayerSpec::BatchNorm | LayerSpec::Relu => cur,
        LayerSpec::MaxPool { size } => {
            let (h, w, c) = spatial(cur)?;
            positive(size, "pool size")?;
            if size > h || size > w {
                return Err(format!("pool {size} larger than {h}×{w} input"));
            }
            ActShape::Spatial {
                height: h / size,
                width: w / size,
                channels: c,
            }
        }
        LayerSpec::Flatten => ActShape::Flat(cur.size()),
        LayerSpec::Dense { units } => {
            positive(units, "unit count")?;
            match cur {
                ActShape::Flat(_) => ActShape::Flat(units),
                ActShape::Spatial { .. } => return Err("needs a flattened input".to_string()),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
enum LayerState<T> {
    Conv {
        weight: Tensor<T>,
        bias: Tensor<T>,
        padding: Padding,
    },
    Edge(EdgeDetectLayer<T>),
    BatchNorm {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
    },
    Relu,
    MaxPool(usize),
    Flatten,
    Dense {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Record parameters as trainable leaves.
    pub trainable: bool,
    /// Stop after this layer (inclusive). Shapes are then only checked by
    /// the ops, so inputs of any spatial size are accepted.
    pub stop_after: Option<usize>,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            mode: Mode::Eval,
            trainable: false,
            stop_after: None,
        }
    }

    pub fn train() -> Self {
        ForwardOptions {
            mode: Mode::Train,
            trainable: true,
            stop_after: None,
        }
    }

    pub fn until(mut self, layer: usize) -> Self {
        self.stop_after = Some(layer);
        self
    }
}

pub struct Forward<T> {
    pub output: Var,
    /// Output of every evaluated layer.
    pub taps: Vec<Var>,
    /// Parameter handles, in [`Model::parameters`] order.
    pub params: Vec<Var>,
    /// Batch statistics from training-mode batch norms, keyed by layer.
    pub batch_stats: Vec<(usize, BatchStats<T>)>,
}

/// A sequential network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    spec: ModelSpec,
    layers: Vec<LayerState<T>>,
}

fn uniform_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let limit = Float::sqrt(1.0 / fan_in as f64);
    Tensor::from_fn(shape, |_| T::of(uniform(rng, -limit, limit)))
}

impl<T: Real> Model<T> {
    /// Instantiates `spec` with freshly initialized parameters.
    pub fn build<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let shapes = spec.shapes()?;
        let [h, w, c] = spec.input;
        let mut prev = ActShape::Spatial {
            height: h,
            width: w,
            channels: c,
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, &shape) in spec.layers.iter().zip(&shapes) {
            let cin = prev.channels();
            layers.push(match *layer {
                LayerSpec::Conv2d { filters, kernel, padding } => LayerState::Conv {
                    weight: uniform_tensor(&[kernel, kernel, cin, filters], kernel * kernel * cin, rng),
                    bias: Tensor::zeros(&[filters]),
                    padding,
                },
                LayerSpec::EdgeDetect { units, kernel, padding } => {
                    LayerState::Edge(EdgeDetectLayer::new(units, kernel, cin, padding, rng))
                }
                LayerSpec::BatchNorm => LayerState::BatchNorm {
                    gamma: Tensor::full(&[cin], T::one()),
                    beta: Tensor::zeros(&[cin]),
                    running_mean: Tensor::zeros(&[cin]),
                    running_var: Tensor::full(&[cin], T::one()),
                },
                LayerSpec::Relu => LayerState::Relu,
                LayerSpec::MaxPool { size } => LayerState::MaxPool(size),
                LayerSpec::Flatten => LayerState::Flatten,
                LayerSpec::Dense { units } => LayerState::Dense {
                    weight: uniform_tensor(&[prev.size(), units], prev.size(), rng),
                    bias: Tensor::zeros(&[units]),
                },
            });
            prev = shape;
        }
        Ok(Model {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn edge_layer(&self, layer: usize) -> Option<&EdgeDetectLayer<T>> {
        match self.layers.get(layer) {
            Some(LayerState::Edge(e)) => Some(e),
            _ => None,
        }
    }

    pub fn edge_layer_mut(&mut self, layer: usize) -> Option<&mut EdgeDetectLayer<T>> {
        match self.layers.get_mut(layer) {
            Some(LayerState::Edge(e)) => Some(e),
            _ => None,
        }
    }

    /// Kernel `[k,k,cin,filters]` of a convolution layer.
    pub fn conv_weight(&self, layer: usize) -> Option<&Tensor<T>> {
        match self.layers.get(layer) {
            Some(LayerState::Conv { weight, .. }) => Some(weight),
            _ => None,
        }
    }

    /// Trainable tensors with stable names, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerState::Conv { weight, bias, .. } | LayerState::Dense { weight, bias } => {
                    out.push((format!("layer{i}.weight"), weight));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerState::Edge(e) => {
                    out.push((format!("layer{i}.weight"), &e.weight));
                    out.push((format!("layer{i}.beta"), &e.beta));
                    out.push((format!("layer{i}.bias"), &e.bias));
                }
                LayerState::BatchNorm { gamma, beta, .. } => {
                    out.push((format!("layer{i}.gamma"), gamma));
                    out.push((format!("layer{i}.beta"), beta));
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            match layer {
                LayerState::Conv { weight, bias, .. } | LayerState::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerState::Edge(e) => {
                    out.push(&mut e.weight);
                    out.push(&mut e.beta);
                    out.push(&mut e.bias);
                }
                LayerState::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Parameters plus batch-norm running statistics.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> =
            self.parameters().into_iter().map(|(n, t)| (n, t.clone())).collect();
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerState::BatchNorm { running_mean, running_var, .. } = layer {
                out.push((format!("layer{i}.running_mean"), running_mean.clone()));
                out.push((format!("layer{i}.running_var"), running_var.clone()));
            }
        }
        out
    }

    /// Overwrites every entry of [`state`](Self::state) from `named`.
    pub fn load_state(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        let lookup = |name: &str, like: &Tensor<T>| -> Result<Tensor<T>> {
            let t = named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Data(format!("missing tensor {name}")))?;
            if t.shape() != like.shape() {
                return Err(Error::shapes("load_state", like.shape(), t.shape()));
            }
            Ok(t.clone())
        };
        let expected = self.state();
        let mut fresh = Vec::with_capacity(expected.len());
        for (name, like) in &expected {
            fresh.push(lookup(name, like)?);
        }
        let mut it = fresh.into_iter();
        for p in self.parameters_mut() {
            *p = it.next().expect("state order");
        }
        for layer in self.layers.iter_mut() {
            if let LayerState::BatchNorm { running_mean, running_var, .. } = layer {
                *running_mean = it.next().expect("state order");
                *running_var = it.next().expect("state order");
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerState::Conv { weight, bias, padding } => LayerState::Conv {
                    weight: weight.cast(),
                    bias: bias.cast(),
                    padding: *padding,
                },
                LayerState::Edge(e) => LayerState::Edge(EdgeDetectLayer {
                    weight: e.weight.cast(),
                    beta: e.beta.cast(),
                    bias: e.bias.cast(),
                    padding: e.padding,
                }),
                LayerState::BatchNorm { gamma, beta, running_mean, running_var } => LayerState::BatchNorm {
                    gamma: gamma.cast(),
                    beta: beta.cast(),
                    running_mean: running_mean.cast(),
                    running_var: running_var.cast(),
                },
                LayerState::Relu => LayerState::Relu,
                LayerState::MaxPool(s) => LayerState::MaxPool(*s),
                LayerState::Flatten => LayerState::Flatten,
                LayerState::Dense { weight, bias } => LayerState::Dense {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
            })
            .collect();
        Model {
            spec: self.spec.clone(),
            layers,
        }
    }

    /// Records the network on `g` for an `N×H×W×C` input.
    pub fn forward(&self, g: &mut Graph<T>, input: Var, opts: ForwardOptions) -> Result<Forward<T>> {
        let leaf = |g: &mut Graph<T>, t: &Tensor<T>, params: &mut Vec<Var>| {
            let v = if opts.trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
            params.push(v);
            v
        };
        let last = opts.stop_after.unwrap_or(usize::MAX);
        let mut x = input;
        let mut taps = Vec::new();
        let mut params = Vec::new();
        let mut batch_stats = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().take_while(|(i, _)| *i <= last) {
            x = match layer {
                LayerState::Conv { weight, bias, padding } => {
                    let w = leaf(g, weight, &mut params);
                    let b = leaf(g, bias, &mut params);
                    let p = g.pad2d(x, Pad2d::same(weight.shape()[0]), *padding)?;
                    let y = g.conv2d(p, w)?;
                    g.bias_add(y, b)?
                }
                LayerState::Edge(e) => {
                    let w = leaf(g, &e.weight, &mut params);
                    let beta = leaf(g, &e.beta, &mut params);
                    let b = leaf(g, &e.bias, &mut params);
                    e.forward_var(g, x, [w, beta, b])?
                }
                LayerState::BatchNorm { gamma, beta, running_mean, running_var } => {
                    let gm = leaf(g, gamma, &mut params);
                    let bt = leaf(g, beta, &mut params);
                    match opts.mode {
                        Mode::Train => {
                            let (y, stats) = g.batch_norm_train(x, gm, bt, T::of(BN_EPS))?;
                            batch_stats.push((i, stats));
                            y
                        }
                        Mode::Eval => g.batch_norm_eval(
                            x,
                            gm,
                            bt,
                            running_mean.data(),
                            running_var.data(),
                            T::of(BN_EPS),
                        )?,
                    }
                }
                LayerState::Relu => g.relu(x)?,
                LayerState::MaxPool(size) => g.maxpool2d(x, *size)?,
                LayerState::Flatten => {
                    let shape = g.value(x)?.shape().to_vec();
                    let n = shape.first().copied().unwrap_or(1);
                    let rest = shape.iter().skip(1).product();
                    g.reshape(x, &[n, rest])?
                }
                LayerState::Dense { weight, bias } => {
                    let w = leaf(g, weight, &mut params);
                    let b = leaf(g, bias, &mut params);
                    let y = g.matmul(x, w)?;
                    g.bias_add(y, b)?
                }
            };
            taps.push(x);
        }
        Ok(Forward {
            output: x,
            taps,
            params,
            batch_stats,
        })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[(usize, BatchStats<T>)]) {
        let m = T::of(BN_MOMENTUM);
        for (i, s) in stats {
            if let Some(LayerState::BatchNorm { running_mean, running_var, .. }) = self.layers.get_mut(*i) {
                for (r, &b) in running_mean.data_mut().iter_mut().zip(&s.mean) {
                    *r = (T::one() - m) * *r + m * b;
                }
                for (r, &b) in running_var.data_mut().iter_mut().zip(&s.var) {
                    *r = (T::one() - m) * *r + m * b;
                }
            }
        }
    }

    /// Eval-mode output of layer `layer` (or of the network) for a batch.
    pub fn activations(&self, batch: &Tensor<T>, layer: Option<usize>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let mut opts = ForwardOptions::eval();
        opts.stop_after = layer;
        let f = self.forward(&mut g, x, opts)?;
        Ok(g.value(f.output)?.clone())
    }

    /// Eval-mode logits for a batch.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.activations(batch, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn table1_specs_have_the_documented_shapes() {
        let standard = ModelSpec::table1(Table1Row::Standard, 5);
        assert_eq!(standard.shapes().unwrap().last(), Some(&ActShape::Flat(1)));
        let layered = ModelSpec::table1(Table1Row::Layered(3), 5);
        let shapes = layered.shapes().unwrap();
        assert_eq!(shapes[0], ActShape::Spatial { height: 3, width: 3, channels: 3 });
        let edge = ModelSpec::table1(Table1Row::Edge(5), 5);
        assert_eq!(edge.shapes().unwrap()[0], ActShape::Spatial { height: 1, width: 1, channels: 1 });
        let small_edge = ModelSpec::table1(Table1Row::Edge(3), 5);
        assert_eq!(small_edge.shapes().unwrap().last(), Some(&ActShape::Flat(1)));
    }

    #[test]
    fn standard_unit_has_seventy_six_parameters() {
        let m = Model::<f32>::build(&ModelSpec::table1(Table1Row::Standard, 5), &mut stream(0)).unwrap();
        let p = m.parameters();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].1.shape(), &[75, 1]);
        let out = m.logits(&Tensor::zeros(&[4, 5, 5, 3])).unwrap();
        assert_eq!(out.shape(), &[4, 1]);
    }

    #[test]
    fn inconsistent_specs_are_rejected() {
        let mut spec = ModelSpec::table1(Table1Row::Standard, 5);
        spec.layers.remove(0);
        assert!(Model::<f32>::build(&spec, &mut stream(0)).is_err());
        let spec = ModelSpec {
            name: "too big".into(),
            input: [5, 5, 3],
            layers: vec![
                LayerSpec::Conv2d { filters: 2, kernel: 7, padding: Padding::None },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 1 },
            ],
            loss: LossKind::Binary,
        };
        assert!(spec.shapes().is_err());
        let mut spec = ModelSpec::cifar(FirstLayer::Edge, 10);
        spec.loss = LossKind::Binary;
        assert!(spec.shapes().is_err());
    }

    #[test]
    fn receptive_fields_grow_with_depth() {
        let spec = ModelSpec::cifar(FirstLayer::Regular, 10);
        assert_eq!(spec.receptive_field(0), 5);
        assert_eq!(spec.receptive_field(3), 6);
        assert_eq!(spec.receptive_field(4), 10);
        assert_eq!(spec.receptive_field(6), 10);
    }

    #[test]
    fn state_round_trips() {
        let spec = ModelSpec::cifar(FirstLayer::Edge, 10);
        let a = Model::<f32>::build(&spec, &mut stream(1)).unwrap();
        let mut b = Model::<f32>::build(&spec, &mut stream(2)).unwrap();
        assert_ne!(a, b);
        b.load_state(&a.state()).unwrap();
        assert_eq!(a, b);
        let mut partial = a.state();
        partial.pop();
        assert!(b.load_state(&partial).is_err());
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let spec = ModelSpec::table1(Table1Row::Layered(2), 5);
        let mut m = Model::<f32>::build(&spec, &mut stream(3)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[8, 5, 5, 3], |i| (i % 7) as f32 * 0.1));
        let f = m.forward(&mut g, x, ForwardOptions::train()).unwrap();
        assert_eq!(f.params.len(), m.parameters().len());
        assert_eq!(f.batch_stats.len(), 1);
        let before = m.state();
        m.apply_batch_stats(&f.batch_stats);
        assert_ne!(before, m.state());
    }
}
