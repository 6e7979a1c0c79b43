//! Synthetic stimuli: straight two-colour edges and uniform noise patches.
//!
//! Edge geometry uses image coordinates centred on the patch (`x` to the
//! right, `y` downwards). An edge at angle θ is the line through the centre
//! with direction `(cos θ, sin θ)`, so 45° runs from the top-left to the
//! bottom-right corner. A pixel takes the "right" colour when its signed
//! distance `x·sin θ − y·cos θ` is non-negative, so pixels on the line
//! itself are coloured right.

use num_traits::Float;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Signed distances within this margin count as lying on the edge line.
const LINE_TOLERANCE: f64 = 1e-9;

/// Which colour pairs qualify as an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorRule {
    /// At least two channels differ by at least ε.
    #[default]
    AtLeastTwo,
    /// All three channels differ by at least ε.
    AllThree,
}

impl ColorRule {
    pub fn accepts(self, left: [f32; 3], right: [f32; 3], epsilon: f64) -> bool {
        let differing = left
            .iter()
            .zip(&right)
            .filter(|(&l, &r)| (r as f64 - l as f64).abs() >= epsilon)
            .count();
        match self {
            ColorRule::AtLeastTwo => differing >= 2,
            ColorRule::AllThree => differing == 3,
        }
    }
}

/// Patch size, contrast threshold and colour rule of generated edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeStyle {
    pub patch: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub rule: ColorRule,
}

impl EdgeStyle {
    pub fn new(patch: usize, epsilon: f64) -> Self {
        EdgeStyle {
            patch,
            epsilon,
            rule: ColorRule::AtLeastTwo,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.patch < 3 {
            return Err(Error::invalid("gen_edge", "patch size must be at least 3"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("gen_edge", "epsilon must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Signed distance of pixel `(row, col)` from the edge line.
pub fn signed_distance(row: usize, col: usize, patch: usize, angle: f64) -> f64 {
    let c = (patch as f64 - 1.0) / 2.0;
    let (x, y) = (col as f64 - c, row as f64 - c);
    let (s, co) = libm::sincos(angle.to_radians());
    x * s - y * co
}

pub fn is_right_side(row: usize, col: usize, patch: usize, angle: f64) -> bool {
    signed_distance(row, col, patch, angle) >= -LINE_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMeta {
    pub angle: f64,
    pub color_left: [f32; 3],
    pub color_right: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgePatch {
    /// `k×k×3`, values in `[0,1]`
    pub pixels: Tensor<f32>,
    pub meta: EdgeMeta,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePatch {
    pub pixels: Tensor<f32>,
}

fn validate_angle(angle: f64) -> Result<()> {
    if !(0.0..180.0).contains(&angle) {
        return Err(Error::invalid("gen_edge", "angle must lie in [0, 180)"));
    }
    Ok(())
}

/// Two solid colour halves separated by a straight line through the centre.
pub fn render_edge(patch: usize, angle: f64, left: [f32; 3], right: [f32; 3]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(patch * patch * 3);
    for i in 0..patch {
        for j in 0..patch {
            let color = if is_right_side(i, j, patch, angle) { right } else { left };
            data.extend_from_slice(&color);
        }
    }
    Tensor::new(&[patch, patch, 3], data).expect("edge shape")
}

/// Random-colour edge at `angle` degrees. Colours are uniform in `[0,1]³`
/// and redrawn until the pair satisfies the style's colour rule.
pub fn gen_edge<R: Rng + ?Sized>(angle: f64, style: &EdgeStyle, rng: &mut R) -> Result<EdgePatch> {
    style.validate()?;
    validate_angle(angle)?;
    let mut draw = || -> [f32; 3] { [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()] };
    let (left, right) = loop {
        let (l, r) = (draw(), draw());
        if style.rule.accepts(l, r, style.epsilon) {
            break (l, r);
        }
    };
    Ok(EdgePatch {
        pixels: render_edge(style.patch, angle, left, right),
        meta: EdgeMeta {
            angle,
            color_left: left,
            color_right: right,
        },
        epsilon: style.epsilon,
    })
}

/// Patch of i.i.d. `U[0,1]` values.
pub fn gen_noise<R: Rng + ?Sized>(patch: usize, rng: &mut R) -> Result<NoisePatch> {
    if patch == 0 {
        return Err(Error::invalid("gen_noise", "patch size must be positive"));
    }
    let pixels = Tensor::from_fn(&[patch, patch, 3], |_| rng.gen::<f32>());
    Ok(NoisePatch { pixels })
}

/// Per-channel difference between the mean intensity of the right and the
/// left half of a patch (`Δ = mean(R) − mean(L)`), with pixels on the edge
/// line excluded from both halves.
pub fn delta_stats(pixels: &Tensor<f32>, angle: f64) -> Result<[f64; 3]> {
    let patch = match *pixels.shape() {
        [k, k2, 3] if k == k2 => k,
        _ => return Err(Error::invalid("delta_stats", "expected a square k×k×3 patch")),
    };
    let mut sums = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    for i in 0..patch {
        for j in 0..patch {
            let s = signed_distance(i, j, patch, angle);
            let side = if s > LINE_TOLERANCE {
                1
            } else if s < -LINE_TOLERANCE {
                0
            } else {
                continue;
            };
            counts[side] += 1;
            for c in 0..3 {
                sums[side][c] += pixels.data()[(i * patch + j) * 3 + c] as f64;
            }
        }
    }
    if counts[0] == 0 || counts[1] == 0 || counts[0] != counts[1] {
        return Err(Error::invalid("delta_stats", "unsupported geometry: halves must be non-empty and equal"));
    }
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = sums[1][c] / counts[1] as f64 - sums[0][c] / counts[0] as f64;
    }
    Ok(out)
}

/// Summary of Δ over noise patches, pooling the three channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub samples: usize,
    pub mean: f64,
    /// Sample standard deviation of Δ.
    pub std: f64,
    /// Fraction of Δ values with `|Δ| < ε`.
    pub inside: f64,
    pub epsilon: f64,
}

/// Monte Carlo distribution of Δ on `samples` noise patches of size `patch`
/// under 45° geometry.
pub fn noise_delta_summary<R: Rng + ?Sized>(samples: usize, patch: usize, epsilon: f64, rng: &mut R) -> Result<DeltaSummary> {
    if samples < 2 {
        return Err(Error::invalid("noise_delta_summary", "need at least two samples"));
    }
    let (mut sum, mut sum_sq, mut inside) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..samples {
        let p = gen_noise(patch, rng)?;
        for d in delta_stats(&p.pixels, 45.0)? {
            sum += d;
            sum_sq += d * d;
            inside += usize::from(d.abs() < epsilon);
        }
    }
    let n = (samples * 3) as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    Ok(DeltaSummary {
        samples,
        mean,
        std: Float::sqrt(var.max(0.0)),
        inside: inside as f64 / n,
        epsilon,
    })
}

/// Labelled mixture of edges (label `true`) and noise (label `false`).
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusBatch {
    /// `N×k×k×3`
    pub pixels: Tensor<f32>,
    pub labels: Vec<bool>,
    /// Generation parameters of each edge; `None` for noise.
    pub meta: Vec<Option<EdgeMeta>>,
    pub style: EdgeStyle,
}

impl StimulusBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels as 0/1 regression targets.
    pub fn targets(&self) -> Vec<f32> {
        self.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect()
    }

    /// Indices of edge entries and of noise entries.
    pub fn split_by_label(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.labels[i])
    }
}

/// `edges` edge patches (angle drawn uniformly from `angles`) and `noise`
/// noise patches in shuffled order.
pub fn make_batch<R: Rng + ?Sized>(
    edges: usize,
    noise: usize,
    angles: &[f64],
    style: &EdgeStyle,
    rng: &mut R,
) -> Result<StimulusBatch> {
    if edges > 0 && angles.is_empty() {
        return Err(Error::invalid("make_batch", "edges requested without angles"));
    }
    let k = style.patch;
    let mut items: Vec<(Tensor<f32>, Option<EdgeMeta>)> = Vec::with_capacity(edges + noise);
    for _ in 0..edges {
        let angle = if angles.len() == 1 {
            angles[0]
        } else {
            angles[rng.gen_range(0..angles.len())]
        };
        let e = gen_edge(angle, style, rng)?;
        items.push((e.pixels, Some(e.meta)));
    }
    for _ in 0..noise {
        items.push((gen_noise(k, rng)?.pixels, None));
    }
    items.shuffle(rng);
    let mut data = Vec::with_capacity(items.len() * k * k * 3);
    let mut labels = Vec::with_capacity(items.len());
    let mut meta = Vec::with_capacity(items.len());
    for (p, m) in items {
        data.extend_from_slice(p.data());
        labels.push(m.is_some());
        meta.push(m);
    }
    Ok(StimulusBatch {
        pixels: Tensor::new(&[labels.len(), k, k, 3], data)?,
        labels,
        meta,
        style: *style,
    })
}
