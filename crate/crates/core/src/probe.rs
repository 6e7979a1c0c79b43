//! Probing trained networks with synthetic stimuli: edge-vs-noise accuracy
//! under an optimal threshold, orientation tuning, coefficient of
//! variation, sensitivity to negative images and activation maximization.

use alloc::vec::Vec;
use core::cmp::Ordering;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{ForwardOptions, LayerSpec, Model, ModelSpec};
use crate::rng::{derive_seed, stream};
use crate::stimulus::{make_batch, ColorRule, EdgeStyle};
use crate::tensor::Tensor;
use crate::transforms::negative;

pub const DEFAULT_ANGLES: [f64; 8] = [0.0, 30.0, 45.0, 60.0, 90.0, 120.0, 135.0, 150.0];

/// Examples evaluated per forward pass.
const CHUNK: usize = 500;

/// Best accuracy of a single threshold separating `positives` from
/// `negatives`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub accuracy: f64,
    pub threshold: f64,
    /// `true` when values above the threshold are predicted positive.
    pub above: bool,
}

/// Scans every threshold placement between sorted activations, with both
/// polarities, and returns the one with the highest accuracy.
pub fn optimal_threshold(positives: &[f64], negatives: &[f64]) -> Result<ThresholdFit> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid("optimal_threshold", "both classes need samples"));
    }
    if positives.iter().chain(negatives).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "optimal_threshold" });
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let total = all.len() as f64;
    let n_pos = positives.len();
    // threshold below everything: all predicted positive
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let score = |pos_below: usize, neg_below: usize| {
        // above: positives above + negatives below
        let above = (n_pos - pos_below + neg_below) as f64 / total;
        (above, 1.0 - above)
    };
    let first = all[0].0;
    let (a, b) = score(0, 0);
    let mut best = if a >= b {
        ThresholdFit { accuracy: a, threshold: first - 1.0, above: true }
    } else {
        ThresholdFit { accuracy: b, threshold: first - 1.0, above: false }
    };
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        let threshold = if i < all.len() { (v + all[i].0) / 2.0 } else { v + 1.0 };
        let (a, b) = score(pos_below, neg_below);
        if a > best.accuracy {
            best = ThresholdFit { accuracy: a, threshold, above: true };
        }
        if b > best.accuracy {
            best = ThresholdFit { accuracy: b, threshold, above: false };
        }
    }
    Ok(best)
}

/// Population standard deviation over the mean; `None` when the mean is not
/// positive.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    let (mean, std) = mean_and_pop_std(values)?;
    (mean > 0.0).then(|| std / mean)
}

fn mean_and_pop_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, Float::sqrt(var)))
}

/// Size of the probing stimuli.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "size")]
pub enum StimulusSize {
    /// The receptive field of the probed layer.
    #[default]
    ReceptiveField,
    Fixed(usize),
}

/// Whether a convolution is read before or after its nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Pre,
    #[default]
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Layer indices whose outputs are probed.
    pub layers: Vec<usize>,
    pub angles: Vec<f64>,
    /// Edges per angle; the same number of noise patches is added.
    pub samples: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub rule: ColorRule,
    #[serde(default)]
    pub stimulus: StimulusSize,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(layers: Vec<usize>) -> Self {
        ProbeConfig {
            layers,
            angles: DEFAULT_ANGLES.to_vec(),
            samples: 10_000,
            epsilon: 0.4,
            rule: ColorRule::AtLeastTwo,
            stimulus: StimulusSize::ReceptiveField,
            seed: 0,
        }
    }

    /// Same configuration at 1000 samples per angle.
    pub fn desk_scale(mut self) -> Self {
        self.samples = 1000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("ProbeConfig", "no layers to probe"));
        }
        if self.angles.is_empty() || self.angles.iter().any(|a| !(0.0..180.0).contains(a)) {
            return Err(Error::invalid("ProbeConfig", "angles must lie in [0, 180)"));
        }
        if self.samples < 2 {
            return Err(Error::invalid("ProbeConfig", "need at least two samples per angle"));
        }
        Ok(())
    }

    fn stimulus_size(&self, spec: &ModelSpec, layer: usize) -> usize {
        match self.stimulus {
            StimulusSize::ReceptiveField => spec.receptive_field(layer),
            StimulusSize::Fixed(k) => k,
        }
    }
}

/// Default probing layer: the edge layer when the model has one, otherwise
/// the second convolution (after its ReLU for [`Readout::Post`]).
pub fn default_probe_layer(spec: &ModelSpec, readout: Readout) -> Option<usize> {
    if let Some(i) = spec.layers.iter().position(|l| matches!(l, LayerSpec::EdgeDetect { .. })) {
        return Some(i);
    }
    let conv = spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Conv2d { .. }))
        .map(|(i, _)| i)
        .nth(1)?;
    if readout == Readout::Pre {
        return Some(conv);
    }
    let mut i = conv + 1;
    while let Some(l) = spec.layers.get(i) {
        match l {
            LayerSpec::BatchNorm => i += 1,
            LayerSpec::Relu => return Some(i),
            _ => break,
        }
    }
    Some(conv)
}

/// Activation of every unit of `layer` at the centre of its output map,
/// as `N×units`. The flag is set when the map has an even side and the
/// lower-right of the four central positions was used.
pub fn center_activations(model: &Model<f32>, layer: usize, batch: &Tensor<f32>) -> Result<(Tensor<f32>, bool)> {
    let n = batch.shape()[0];
    let mut data = Vec::new();
    let mut units = 0;
    let mut floor_center = false;
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let part = take_rows(batch, &idx)?;
        let out = model.activations(&part, Some(layer))?;
        match *out.shape() {
            [m, h, w, u] => {
                let (ci, cj) = (h / 2, w / 2);
                floor_center |= h % 2 == 0 || w % 2 == 0;
                units = u;
                for s in 0..m {
                    for k in 0..u {
                        data.push(out.at(&[s, ci, cj, k]));
                    }
                }
            }
            [_, u] => {
                units = u;
                data.extend_from_slice(out.data());
            }
            _ => return Err(Error::invalid("center_activations", "unexpected layer output rank")),
        }
    }
    Ok((Tensor::new(&[n, units], data)?, floor_center))
}

fn take_rows(t: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let stride: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * stride);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * stride..(i + 1) * stride]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(&shape, data)
}

/// Statistics of one neuron at one angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronAngle {
    pub layer: usize,
    pub neuron: usize,
    pub angle: f64,
    pub accuracy: f64,
    pub threshold: f64,
    pub above: bool,
    pub edge_mean: f64,
    pub edge_std: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Coefficient of variation on edges; `None` when undefined.
    pub cv: Option<f64>,
}

/// Probe results of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub layer: usize,
    pub stimulus_size: usize,
    pub floor_center: bool,
    pub units: usize,
    pub angles: Vec<f64>,
    /// Row-major `angle × neuron`.
    pub cells: Vec<NeuronAngle>,
}

impl LayerProbe {
    pub fn cell(&self, angle_index: usize, neuron: usize) -> &NeuronAngle {
        &self.cells[angle_index * self.units + neuron]
    }

    /// Most accurate neuron for each angle.
    pub fn best_per_angle(&self) -> Vec<NeuronAngle> {
        (0..self.angles.len())
            .map(|a| {
                *(0..self.units)
                    .map(|u| self.cell(a, u))
                    .fold(None::<&NeuronAngle>, |best, c| match best {
                        Some(b) if b.accuracy >= c.accuracy => Some(b),
                        _ => Some(c),
                    })
                    .expect("at least one unit")
            })
            .collect()
    }

    /// Highest accuracy of each neuron over angles.
    pub fn neuron_best(&self) -> Vec<NeuronAngle> {
        (0..self.units)
            .map(|u| {
                *(0..self.angles.len())
                    .map(|a| self.cell(a, u))
                    .fold(None::<&NeuronAngle>, |best, c| match best {
                        Some(b) if b.accuracy >= c.accuracy => Some(b),
                        _ => Some(c),
                    })
                    .expect("at least one angle")
            })
            .collect()
    }

    /// Mean over angles of the best neuron's accuracy.
    pub fn edge_accuracy(&self) -> f64 {
        let best = self.best_per_angle();
        best.iter().map(|c| c.accuracy).sum::<f64>() / best.len() as f64
    }

    /// Mean coefficient of variation of the best neurons, skipping
    /// undefined values.
    pub fn edge_variation(&self) -> Option<f64> {
        let cvs: Vec<f64> = self.best_per_angle().iter().filter_map(|c| c.cv).collect();
        (!cvs.is_empty()).then(|| cvs.iter().sum::<f64>() / cvs.len() as f64)
    }

    /// Fraction of neurons whose best accuracy exceeds `level`.
    pub fn fraction_above(&self, level: f64) -> f64 {
        let best = self.neuron_best();
        best.iter().filter(|c| c.accuracy > level).count() as f64 / best.len() as f64
    }

    /// Fraction of neurons whose best accuracy reaches `level`.
    pub fn fraction_at_least(&self, level: f64) -> f64 {
        let best = self.neuron_best();
        best.iter().filter(|c| c.accuracy >= level).count() as f64 / best.len() as f64
    }

    /// Among neurons better than chance, the fraction whose CV at their
    /// best angle exceeds `level`.
    pub fn cv_fraction_above(&self, level: f64) -> f64 {
        let good: Vec<NeuronAngle> = self.neuron_best().into_iter().filter(|c| c.accuracy > 0.5).collect();
        if good.is_empty() {
            return 0.0;
        }
        good.iter().filter(|c| c.cv.is_some_and(|v| v > level)).count() as f64 / good.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub samples: usize,
    pub seed: u64,
    pub layers: Vec<LayerProbe>,
}

/// Stimulus batch for one angle, shared by every neuron of a layer.
pub fn angle_stimuli(config: &ProbeConfig, angle_index: usize, size: usize) -> Result<crate::stimulus::StimulusBatch> {
    let style = EdgeStyle {
        patch: size,
        epsilon: config.epsilon,
        rule: config.rule,
    };
    let seed = derive_seed(config.seed, (angle_index as u64) << 16 | size as u64);
    let angle = config.angles[angle_index];
    make_batch(config.samples, config.samples, &[angle], &style, &mut stream(seed))
}

/// Cells of one layer at one angle, one per neuron.
pub fn probe_cells(
    model: &Model<f32>,
    layer: usize,
    config: &ProbeConfig,
    angle_index: usize,
    negate: bool,
) -> Result<(Vec<NeuronAngle>, bool)> {
    let size = config.stimulus_size(model.spec(), layer);
    let batch = angle_stimuli(config, angle_index, size)?;
    let pixels = if negate { negative(&batch.pixels)? } else { batch.pixels.clone() };
    let (acts, floor_center) = center_activations(model, layer, &pixels)?;
    let units = acts.shape()[1];
    let (edges, noise) = batch.split_by_label();
    let column = |rows: &[usize], u: usize| -> Vec<f64> { rows.iter().map(|&r| acts.at(&[r, u]) as f64).collect() };
    let mut cells = Vec::with_capacity(units);
    for u in 0..units {
        let (e, n) = (column(&edges, u), column(&noise, u));
        let fit = optimal_threshold(&e, &n)?;
        let (edge_mean, edge_std) = mean_and_pop_std(&e).unwrap_or((f64::NAN, f64::NAN));
        let (noise_mean, noise_std) = mean_and_pop_std(&n).unwrap_or((f64::NAN, f64::NAN));
        cells.push(NeuronAngle {
            layer,
            neuron: u,
            angle: config.angles[angle_index],
            accuracy: fit.accuracy,
            threshold: fit.threshold,
            above: fit.above,
            edge_mean,
            edge_std,
            noise_mean,
            noise_std,
            cv: coefficient_of_variation(&e),
        });
    }
    Ok((cells, floor_center))
}

/// Assembles a layer report from per-angle cells in angle order.
pub fn assemble_layer(model: &Model<f32>, layer: usize, config: &ProbeConfig, per_angle: Vec<(Vec<NeuronAngle>, bool)>) -> LayerProbe {
    let units = per_angle.first().map_or(0, |(c, _)| c.len());
    let floor_center = per_angle.iter().any(|(_, f)| *f);
    LayerProbe {
        layer,
        stimulus_size: config.stimulus_size(model.spec(), layer),
        floor_center,
        units,
        angles: config.angles.clone(),
        cells: per_angle.into_iter().flat_map(|(c, _)| c).collect(),
    }
}

/// Probes every configured layer at every angle.
pub fn probe(model: &Model<f32>, config: &ProbeConfig) -> Result<ProbeReport> {
    probe_with(model, config, false)
}

/// Like [`probe`], with every stimulus replaced by its negative when
/// `negate` is set.
pub fn probe_with(model: &Model<f32>, config: &ProbeConfig, negate: bool) -> Result<ProbeReport> {
    config.validate()?;
    let mut layers = Vec::with_capacity(config.layers.len());
    for &layer in &config.layers {
        if layer >= model.num_layers() {
            return Err(Error::invalid("probe", "layer index out of range"));
        }
        let per_angle = (0..config.angles.len())
            .map(|a| probe_cells(model, layer, config, a, negate))
            .collect::<Result<Vec<_>>>()?;
        layers.push(assemble_layer(model, layer, config, per_angle));
    }
    Ok(ProbeReport {
        samples: config.samples,
        seed: config.seed,
        layers,
    })
}

/// `Σ|a_neg − a_reg|₁ / Σ|a_reg|₁` over the images, where `a` is the output
/// of `respond` on a batch.
pub fn delta_negative_with(images: &Tensor<f32>, respond: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>>) -> Result<f64> {
    if images.rank() != 4 || images.shape()[0] == 0 {
        return Err(Error::invalid("delta_negative", "expected a non-empty N×H×W×3 batch"));
    }
    let n = images.shape()[0];
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for start in (0..n).step_by(CHUNK / 5) {
        let idx: Vec<usize> = (start..(start + CHUNK / 5).min(n)).collect();
        let part = take_rows(images, &idx)?;
        let reg = respond(&part)?;
        let neg = respond(&negative(&part)?)?;
        for (&a, &b) in reg.data().iter().zip(neg.data()) {
            diff += (b as f64 - a as f64).abs();
            norm += (a as f64).abs();
        }
    }
    if norm == 0.0 {
        return Err(Error::invalid("delta_negative", "activations are all zero"));
    }
    Ok(diff / norm)
}

/// Normalized change of layer `layer`'s activations under negation.
pub fn delta_negative(model: &Model<f32>, layer: usize, images: &Tensor<f32>) -> Result<f64> {
    delta_negative_with(images, |b| model.activations(b, Some(layer)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActMaxConfig {
    pub steps: usize,
    pub step_size: f64,
    pub size: usize,
    /// Half-width of the uniform noise around 0.5 the input starts from.
    pub init_amplitude: f64,
    pub seed: u64,
}

impl Default for ActMaxConfig {
    fn default() -> Self {
        ActMaxConfig {
            steps: 200,
            step_size: 0.1,
            size: 64,
            init_amplitude: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActMax {
    /// `size×size×3`
    pub image: Tensor<f32>,
    /// Activation before every step and after the last one.
    pub trace: Vec<f64>,
}

/// Gradient ascent on the input towards a high activation of `unit` at the
/// centre of `layer`'s output map. Each step moves by `step_size` along the
/// gradient scaled to unit max-norm, then clamps to `[0,1]`.
pub fn activation_maximization(model: &Model<f32>, layer: usize, unit: usize, config: &ActMaxConfig) -> Result<ActMax> {
    if config.size == 0 {
        return Err(Error::invalid("activation_maximization", "image size must be positive"));
    }
    let mut rng = stream(config.seed);
    let a = config.init_amplitude;
    let mut image = Tensor::from_fn(&[1, config.size, config.size, 3], |_| {
        (0.5 + a * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0) as f32
    });
    let mut trace = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let mut g = Graph::new();
        let x = g.param(image.clone());
        let f = model.forward(&mut g, x, ForwardOptions::eval().until(layer))?;
        let out = g.value(f.output)?;
        let index = match *out.shape() {
            [1, h, w, u] if unit < u => ((h / 2) * w + w / 2) * u + unit,
            [1, u] if unit < u => unit,
            _ => return Err(Error::invalid("activation_maximization", "unit out of range")),
        };
        let act = g.element(f.output, index)?;
        trace.push(g.value(act)?.item()? as f64);
        if step == config.steps {
            break;
        }
        let grads = g.backward(act)?;
        let grad = grads.get_or_zeros(x, image.shape());
        if !grad.all_finite() {
            return Err(Error::NonFinite { op: "activation_maximization" });
        }
        let scale = grad.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        let lr = config.step_size as f32 / scale;
        for (p, d) in image.data_mut().iter_mut().zip(grad.data()) {
            *p = (*p + lr * d).clamp(0.0, 1.0);
        }
    }
    Ok(ActMax {
        image: image.reshape(&[config.size, config.size, 3])?,
        trace,
    })
}
