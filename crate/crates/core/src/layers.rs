//! The edge-detection unit.
//!
//! A unit with kernel `w` (`k×k`, shared by every input channel), positive
//! channel weights `α_c` and bias `b` responds at location `(x, y)` with
//!
//! ```text
//! o = Σ_c α_c · |w · (p_c − mean(p_c))| + b
//! ```
//!
//! where `p_c` is the `k×k` patch of channel `c` around that location. The
//! response ignores the absolute intensity of each channel and the polarity
//! of the contrast. `α` is stored through an unconstrained `β` with
//! `α = softplus(β)`.

use num_traits::Float;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Padding, Var};
use crate::kernels::{self, Pad2d};
use crate::real::Real;
use crate::rng::uniform;
use crate::tensor::Tensor;

/// A bank of independent edge-detection units applied convolutionally with
/// stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDetectLayer<T = f32> {
    /// `[units, k, k]`
    pub weight: Tensor<T>,
    /// `[units, channels]`, mapped through softplus to obtain `α`.
    pub beta: Tensor<T>,
    /// `[units]`
    pub bias: Tensor<T>,
    pub padding: Padding,
}

/// Inverse of softplus, so that `softplus(inv_softplus(a)) == a`.
pub(crate) fn inv_softplus(a: f64) -> f64 {
    if a > 30.0 {
        a
    } else {
        libm::log(libm::expm1(a))
    }
}

impl<T: Real> EdgeDetectLayer<T> {
    /// Fresh layer: kernels uniform in `±sqrt(1/fan_in)` with
    /// `fan_in = k²·channels`, every `α_c = 1`, zero bias.
    pub fn new<R: Rng + ?Sized>(units: usize, kernel: usize, channels: usize, padding: Padding, rng: &mut R) -> Self {
        let limit = Float::sqrt(1.0 / (kernel * kernel * channels) as f64);
        let weight = Tensor::from_fn(&[units, kernel, kernel], |_| T::of(uniform(rng, -limit, limit)));
        EdgeDetectLayer {
            weight,
            beta: Tensor::full(&[units, channels], T::of(inv_softplus(1.0))),
            bias: Tensor::zeros(&[units]),
            padding,
        }
    }

    /// Layer from explicit kernels `[units,k,k]`, channel weights `[units,C]`
    /// (all positive) and biases `[units]`.
    pub fn from_parts(weight: Tensor<T>, alpha: &Tensor<T>, bias: Tensor<T>, padding: Padding) -> Result<Self> {
        let units = match *weight.shape() {
            [u, k, k2] if k == k2 && k > 0 => u,
            _ => return Err(Error::invalid("edge_layer", "kernel must be units×k×k")),
        };
        if alpha.rank() != 2 || alpha.shape()[0] != units {
            return Err(Error::shapes("edge_layer", alpha.shape(), &[units]));
        }
        if bias.len() != units {
            return Err(Error::shapes("edge_layer", bias.shape(), &[units]));
        }
        let beta = alpha
            .data()
            .iter()
            .map(|&a| {
                if a > T::zero() {
                    Ok(T::of(inv_softplus(a.f64())))
                } else {
                    Err(Error::invalid("edge_layer", "channel weights must be positive"))
                }
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(EdgeDetectLayer {
            weight,
            beta: Tensor::new(alpha.shape(), beta)?,
            bias,
            padding,
        })
    }

    pub fn units(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.beta.shape()[1]
    }

    /// Positive channel weights `α = softplus(β)`, `[units, channels]`.
    pub fn alpha(&self) -> Tensor<T> {
        self.beta
            .map(|b| kernels::softplus(b).max(T::min_positive_value()))
    }

    /// `α_c / Σ_c α_c` per unit.
    pub fn normalized_alpha(&self) -> Tensor<T> {
        let mut a = self.alpha();
        let c = self.channels();
        for row in a.data_mut().chunks_mut(c) {
            let total: T = row.iter().copied().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        a
    }

    /// Records the layer on `g`; `params` are the graph handles of
    /// `(weight, beta, bias)`.
    pub fn forward_var(&self, g: &mut Graph<T>, x: Var, params: [Var; 3]) -> Result<Var> {
        let [w, beta, b] = params;
        let padded = g.pad2d(x, Pad2d::same(self.kernel()), self.padding)?;
        let alpha = g.softplus(beta)?;
        g.edge_detect(padded, w, alpha, b)
    }

    /// Activation map for one image `H×W×C` (giving `H'×W'×units`) or a batch
    /// `N×H×W×C`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, single) = as_batch(input)?;
        if batch.shape()[3] != self.channels() {
            return Err(Error::shapes("edge_forward", input.shape(), self.beta.shape()));
        }
        let mut g = Graph::new();
        let x = g.constant(batch);
        let params = [
            g.constant(self.weight.clone()),
            g.constant(self.beta.clone()),
            g.constant(self.bias.clone()),
        ];
        let out = self.forward_var(&mut g, x, params)?;
        let out = g.value(out)?.clone();
        if single {
            let s = out.shape()[1..].to_vec();
            out.reshape(&s)
        } else {
            Ok(out)
        }
    }
}

fn as_batch<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, bool)> {
    match *input.shape() {
        [h, w, c] => Ok((input.clone().reshape(&[1, h, w, c])?, true)),
        [_, _, _, _] => Ok((input.clone(), false)),
        _ => Err(Error::invalid("edge_forward", "expected H×W×C or N×H×W×C input")),
    }
}

/// Eq.-1 activation map of `layer` on `input`.
pub fn edge_forward<T: Real>(input: &Tensor<T>, layer: &EdgeDetectLayer<T>) -> Result<Tensor<T>> {
    layer.forward(input)
}

/// Reference evaluation of the same layer through the zero-mean kernel form
/// `Σ_c α_c · |(w − mean(w)) · p_c| + b`, written as plain loops.
pub fn edge_forward_zeromean<T: Real>(input: &Tensor<T>, layer: &EdgeDetectLayer<T>) -> Result<Tensor<T>> {
    let (batch, single) = as_batch(input)?;
    let [n, h, w, c] = match *batch.shape() {
        [n, h, w, c] => [n, h, w, c],
        _ => unreachable!(),
    };
    if c != layer.channels() {
        return Err(Error::shapes("edge_forward_zeromean", input.shape(), layer.beta.shape()));
    }
    let k = layer.kernel();
    let units = layer.units();
    let pad = if layer.padding == Padding::None {
        Pad2d::default()
    } else {
        Pad2d::same(k)
    };
    let (hp, wp) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
    if hp < k || wp < k {
        return Err(Error::shapes("edge_forward_zeromean", input.shape(), layer.weight.shape()));
    }
    let map = kernels::pad_map(h, w, pad, layer.padding == Padding::Reflect);
    let pixel = |b: usize, y: usize, x: usize, ch: usize| -> T {
        map[y * wp + x].map_or(T::zero(), |s| batch.data()[(b * h * w + s) * c + ch])
    };
    let alpha = layer.alpha();
    let (ho, wo) = (hp - k + 1, wp - k + 1);
    let mut out = Vec::with_capacity(n * ho * wo * units);
    for b in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                for u in 0..units {
                    let kern = &layer.weight.data()[u * k * k..(u + 1) * k * k];
                    let kmean = kern.iter().copied().sum::<T>() / T::of_usize(k * k);
                    let mut o = layer.bias.data()[u];
                    for ch in 0..c {
                        let mut dot = T::zero();
                        for dy in 0..k {
                            for dx in 0..k {
                                dot += (kern[dy * k + dx] - kmean) * pixel(b, y + dy, x + dx, ch);
                            }
                        }
                        o += alpha.data()[u * c + ch] * dot.abs();
                    }
                    out.push(o);
                }
            }
        }
    }
    let out = Tensor::new(&[n, ho, wo, units], out)?;
    if single {
        out.reshape(&[ho, wo, units])
    } else {
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;

    fn one_unit(kernel: Vec<f32>, k: usize, channels: usize) -> EdgeDetectLayer<f32> {
        EdgeDetectLayer::from_parts(
            Tensor::new(&[1, k, k], kernel).unwrap(),
            &Tensor::full(&[1, channels], 1.0),
            Tensor::zeros(&[1]),
            Padding::None,
        )
        .unwrap()
    }

    #[test]
    fn worked_two_by_two_example() {
        let layer = one_unit(vec![1.0, -1.0, 1.0, -1.0], 2, 1);
        let patch = Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = edge_forward(&patch, &layer).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert!((out.data()[0] - 2.0).abs() < 1e-6);
        let oracle = edge_forward_zeromean(&patch, &layer).unwrap();
        assert!((oracle.data()[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn constant_patch_gives_bias() {
        let mut rng = stream(0);
        let mut layer = EdgeDetectLayer::<f32>::new(3, 3, 3, Padding::None, &mut rng);
        layer.bias = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let img = Tensor::from_fn(&[4, 4, 3], |i| [0.2, 0.9, 0.4][i % 3]);
        let out = layer.forward(&img).unwrap();
        for (i, v) in out.data().iter().enumerate() {
            assert!((v - layer.bias.data()[i % 3]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_mean_kernel_gives_identical_terms() {
        // Σw = 0, so centring the patch or the kernel changes nothing
        let layer = one_unit(vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0], 3, 2);
        let img = Tensor::from_fn(&[5, 5, 2], |i| ((i * 37) % 11) as f32 / 11.0);
        let a = edge_forward(&img, &layer).unwrap();
        let b = edge_forward_zeromean(&img, &layer).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-5);
    }

    #[test]
    fn alpha_stays_positive_for_any_beta() {
        let mut rng = stream(1);
        let mut layer = EdgeDetectLayer::<f32>::new(2, 3, 3, Padding::None, &mut rng);
        assert!(layer.alpha().data().iter().all(|&a| (a - 1.0).abs() < 1e-6));
        layer.beta = Tensor::new(&[2, 3], vec![-1e4, -200.0, -50.0, 0.0, 50.0, 1e4]).unwrap();
        assert!(layer.alpha().data().iter().all(|&a| a > 0.0));
    }

    #[test]
    fn normalized_alpha_sums_to_one() {
        let layer = EdgeDetectLayer::from_parts(
            Tensor::<f64>::zeros(&[1, 3, 3]),
            &Tensor::new(&[1, 3], vec![1.0, 2.0, 5.0]).unwrap(),
            Tensor::zeros(&[1]),
            Padding::None,
        )
        .unwrap();
        let n = layer.normalized_alpha();
        assert!((n.data()[2] - 0.625).abs() < 1e-12);
        assert!((n.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = stream(2);
        let layer = EdgeDetectLayer::<f32>::new(1, 5, 3, Padding::None, &mut rng);
        let small = Tensor::zeros(&[4, 4, 3]);
        assert!(layer.forward(&small).is_err());
        let wrong_channels = Tensor::zeros(&[5, 5, 2]);
        assert!(matches!(layer.forward(&wrong_channels), Err(Error::ShapeMismatch { .. })));
        let negative = Tensor::new(&[1, 1], vec![-1.0f32]).unwrap();
        assert!(EdgeDetectLayer::from_parts(Tensor::zeros(&[1, 3, 3]), &negative, Tensor::zeros(&[1]), Padding::None).is_err());
    }
}
