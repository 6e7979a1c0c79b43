//! Accuracy on negative and colour-shifted test sets, relative to the
//! original images.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledImageSet;
use crate::error::Result;
use crate::model::Model;
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::trainer::evaluate;
use crate::transforms::{color_shift, negative, ShiftBound, ShiftParams};

/// Signed relative change `(transformed − regular) / regular × 100`.
pub fn relative_change(regular: f64, transformed: f64) -> f64 {
    (transformed - regular) / regular * 100.0
}

/// Every image replaced by its negative.
pub fn negative_set(set: &LabeledImageSet) -> Result<LabeledImageSet> {
    set.map_images(negative)
}

/// Every image colour shifted with seed `derive_seed(seed, i)`.
pub fn color_shifted_set(set: &LabeledImageSet, seed: u64, bound: ShiftBound) -> Result<(LabeledImageSet, Vec<ShiftParams>)> {
    let [h, w, c] = set.image_shape();
    let stride = h * w * c;
    let mut data = Vec::with_capacity(set.images.len());
    let mut params = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let img = Tensor::new(&[h, w, c], set.images.data()[i * stride..(i + 1) * stride].to_vec())?;
        let out = color_shift(&img, derive_seed(seed, i as u64), bound)?;
        data.extend_from_slice(out.image.data());
        params.push(out.params);
    }
    let images = Tensor::new(set.images.shape(), data)?;
    let shifted = LabeledImageSet::new(images, set.labels.clone(), set.num_classes, set.split)?;
    Ok((shifted, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model: String,
    pub regular: f64,
    pub negative: f64,
    pub color: f64,
    /// Relative change on negative images, in percent.
    pub delta_negative_pct: f64,
    /// Relative change on colour-shifted images, in percent.
    pub delta_color_pct: f64,
    /// Mean over angles of the best neuron's edge-vs-noise accuracy.
    pub edge_accuracy: Option<f64>,
    /// Mean coefficient of variation of those neurons.
    pub edge_variation: Option<f64>,
    /// Normalized activation change of the probed layer under negation.
    pub activation_delta_negative: Option<f64>,
}

impl RobustnessReport {
    pub fn from_accuracies(model: impl Into<String>, regular: f64, negative: f64, color: f64) -> Self {
        RobustnessReport {
            model: model.into(),
            regular,
            negative,
            color,
            delta_negative_pct: relative_change(regular, negative),
            delta_color_pct: relative_change(regular, color),
            edge_accuracy: None,
            edge_variation: None,
            activation_delta_negative: None,
        }
    }
}

/// Accuracies on the original, negative and colour-shifted test sets.
pub fn evaluate_robustness(
    model: &Model<f32>,
    test: &LabeledImageSet,
    shift_seed: u64,
    bound: ShiftBound,
    batch_size: usize,
) -> Result<RobustnessReport> {
    let regular = evaluate(model, test, batch_size)?;
    let negative = evaluate(model, &negative_set(test)?, batch_size)?;
    let (shifted, _) = color_shifted_set(test, shift_seed, bound)?;
    let color = evaluate(model, &shifted, batch_size)?;
    Ok(RobustnessReport::from_accuracies(
        model.spec().name.clone(),
        regular,
        negative,
        color,
    ))
}
