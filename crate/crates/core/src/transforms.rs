//! Negative images and the saturation-limited colour shift.
//!
//! Images are `f32` tensors whose last axis holds RGB in `[0,1]`; any
//! leading shape is accepted, so single images and batches go through the
//! same functions. Colour conversions run in `f64`.

use num_traits::Euclid;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

fn check_rgb(op: &'static str, image: &Tensor<f32>) -> Result<()> {
    if image.shape().last() != Some(&3) {
        return Err(Error::invalid(op, "last axis must hold 3 colour channels"));
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(op, "pixel values must lie in [0, 1]"));
    }
    Ok(())
}

/// `x → 1 − x` for every component.
pub fn negative(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    check_rgb("negative", image)?;
    Ok(image.map(|v| 1.0 - v))
}

/// RGB → HSV on the hexagonal cone, all components in `[0,1]`, hue in
/// `[0,1)`. Achromatic pixels get hue 0.
pub fn rgb_to_hsv_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let s = if max > 0.0 { c / max } else { 0.0 };
    if c <= 0.0 {
        return [0.0, s, max];
    }
    let sector = if max == r {
        Euclid::rem_euclid(&((g - b) / c), &6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    [h, s, max]
}

pub fn hsv_to_rgb_pixel([h, s, v]: [f64; 3]) -> [f64; 3] {
    if s <= 0.0 {
        return [v, v, v];
    }
    let h6 = Euclid::rem_euclid(&h, &1.0) * 6.0;
    let sector = (h6.floor() as i64).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Image in HSV coordinates; `shape` is the RGB shape it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub shape: Vec<usize>,
    pub pixels: Vec<[f64; 3]>,
}

impl HsvImage {
    pub fn saturation_range(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])))
    }
}

pub fn rgb_to_hsv(image: &Tensor<f32>) -> Result<HsvImage> {
    check_rgb("rgb_to_hsv", image)?;
    let pixels = image
        .data()
        .chunks_exact(3)
        .map(|p| rgb_to_hsv_pixel([p[0] as f64, p[1] as f64, p[2] as f64]))
        .collect();
    Ok(HsvImage {
        shape: image.shape().to_vec(),
        pixels,
    })
}

pub fn hsv_to_rgb(hsv: &HsvImage) -> Result<Tensor<f32>> {
    let in_range = |x: f64| (0.0..=1.0).contains(&x);
    if hsv.pixels.iter().any(|&[h, s, v]| !(0.0..1.0).contains(&h) || !in_range(s) || !in_range(v)) {
        return Err(Error::invalid("hsv_to_rgb", "components out of range"));
    }
    let mut data = Vec::with_capacity(hsv.pixels.len() * 3);
    for &p in &hsv.pixels {
        for c in hsv_to_rgb_pixel(p) {
            data.push(c.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(&hsv.shape, data)
}

/// How the saturation offset is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "bound")]
pub enum ShiftBound {
    /// `ds ~ U[−min s, 1 − max s]`, so no pixel leaves `[0,1]`.
    #[default]
    NoClip,
    /// `ds ~ U[−b, b]`; saturation is clamped and clipping counted.
    Fixed(f64),
}

/// Image-level hue rotation and saturation offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    pub dh: f64,
    pub ds: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOutcome {
    pub image: Tensor<f32>,
    pub params: ShiftParams,
    /// Pixels whose shifted saturation had to be clamped into `[0,1]`.
    pub clipped: usize,
}

/// Applies fixed shift parameters to an image.
pub fn apply_shift(image: &Tensor<f32>, dh: f64, ds: f64) -> Result<(Tensor<f32>, usize)> {
    let mut hsv = rgb_to_hsv(image)?;
    let mut clipped = 0;
    for p in &mut hsv.pixels {
        let mut h = Euclid::rem_euclid(&(p[0] + dh), &1.0);
        if h >= 1.0 {
            h = 0.0;
        }
        let s = p[1] + ds;
        if !(0.0..=1.0).contains(&s) {
            clipped += 1;
        }
        p[0] = h;
        p[1] = s.clamp(0.0, 1.0);
    }
    Ok((hsv_to_rgb(&hsv)?, clipped))
}

/// Random colour shift of one image, reproducible from `seed`.
pub fn color_shift(image: &Tensor<f32>, seed: u64, bound: ShiftBound) -> Result<ShiftOutcome> {
    let hsv = rgb_to_hsv(image)?;
    let mut rng = stream(seed);
    let dh: f64 = rng.gen();
    let (lo, hi) = match bound {
        ShiftBound::NoClip => {
            let (min_s, max_s) = hsv.saturation_range();
            (-min_s, 1.0 - max_s)
        }
        ShiftBound::Fixed(b) => (-b.abs(), b.abs()),
    };
    let ds = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let (out, clipped) = apply_shift(image, dh, ds)?;
    Ok(ShiftOutcome {
        image: out,
        params: ShiftParams { dh, ds, seed },
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(pixels: &[[f32; 3]]) -> Tensor<f32> {
        Tensor::new(&[1, pixels.len(), 3], pixels.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn negative_definition() {
        let x = img(&[[0.2, 0.5, 1.0]]);
        let n = negative(&x).unwrap();
        assert_eq!(n.data(), &[0.8, 0.5, 0.0]);
        let black = Tensor::zeros(&[2, 2, 3]);
        assert!(negative(&black).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(negative(&img(&[[1.2, 0.0, 0.0]])).is_err());
        assert!(negative(&Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn primary_and_black_conversions() {
        assert_eq!(rgb_to_hsv_pixel([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv_pixel([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        let g = rgb_to_hsv_pixel([0.0, 1.0, 0.0]);
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-12);
        let b = rgb_to_hsv_pixel([0.0, 0.0, 1.0]);
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-12);
        // magenta wraps just below 1
        let m = rgb_to_hsv_pixel([1.0, 0.0, 1.0]);
        assert!((m[0] - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn red_rotated_a_third_is_green() {
        let (out, clipped) = apply_shift(&img(&[[1.0, 0.0, 0.0]; 4]), 1.0 / 3.0, 0.0).unwrap();
        assert_eq!(clipped, 0);
        for p in out.data().chunks(3) {
            assert!(p[0].abs() < 1e-6 && (p[1] - 1.0).abs() < 1e-6 && p[2].abs() < 1e-6);
        }
    }

    #[test]
    fn zero_shift_is_identity() {
        let mut rng = crate::rng::stream(3);
        let x = Tensor::from_fn(&[4, 4, 3], |_| rng.gen::<f32>());
        let (out, _) = apply_shift(&x, 0.0, 0.0).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn no_clip_bound_never_clips() {
        let mut rng = crate::rng::stream(4);
        for seed in 0..200 {
            let x = Tensor::from_fn(&[3, 3, 3], |_| rng.gen::<f32>());
            let o = color_shift(&x, seed, ShiftBound::NoClip).unwrap();
            assert_eq!(o.clipped, 0);
            assert!((0.0..1.0).contains(&o.params.dh));
        }
    }

    #[test]
    fn fixed_bound_stays_inside() {
        let x = img(&[[0.9, 0.1, 0.1], [0.2, 0.3, 0.4]]);
        for seed in 0..50 {
            let o = color_shift(&x, seed, ShiftBound::Fixed(0.1)).unwrap();
            assert!(o.params.ds.abs() <= 0.1);
        }
    }

    #[test]
    fn grayscale_golden() {
        let x = img(&[[0.5, 0.5, 0.5], [0.2, 0.2, 0.2], [1.0, 1.0, 1.0]]);
        let o = color_shift(&x, 0, ShiftBound::NoClip).unwrap();
        assert_eq!(o.params.dh.to_bits(), GOLDEN_DH.to_bits());
        assert_eq!(o.params.ds.to_bits(), GOLDEN_DS.to_bits());
        for (got, want) in o.image.data().iter().zip(GOLDEN_PIXELS) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    // frozen from a seed-0 run; pixels cross-checked against an independent
    // HSV implementation given (dh, ds)
    const GOLDEN_DH: f64 = 0.7090754154265618;
    const GOLDEN_DS: f64 = 0.46592172228961026;
    const GOLDEN_PIXELS: [f32; 9] = [
        0.326_316_6, 0.267_039_14, 0.5, 0.130_526_64, 0.106_815_66, 0.2, 0.652_633_2, 0.534_078_3, 1.0,
    ];
}
