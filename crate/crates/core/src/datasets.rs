//! Labelled image sets, CIFAR-10 record decoding, subsetting and batch
//! streaming. Reading files is left to the caller.

use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};
use crate::tensor::Tensor;
use crate::transforms::{color_shift, ShiftBound};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    /// `N×H×W×3` in `[0,1]`
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl LabeledImageSet {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.rank() != 4 || images.shape()[3] != 3 {
            return Err(Error::invalid("LabeledImageSet", "images must be N×H×W×3"));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::shapes("LabeledImageSet", images.shape(), &[labels.len()]));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::invalid("LabeledImageSet", "label out of range"));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("LabeledImageSet", "pixel values must lie in [0, 1]"));
        }
        Ok(LabeledImageSet {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New set made of the given rows, in order.
    pub fn select(&self, indices: &[usize], split: Split) -> Result<Self> {
        let [h, w, c] = self.image_shape();
        let stride = h * w * c;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid("select", "index out of range"));
            }
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Ok(LabeledImageSet {
            images: Tensor::new(&[indices.len(), h, w, c], data)?,
            labels,
            num_classes: self.num_classes,
            split,
        })
    }

    /// Same images with every pixel mapped through `f`.
    pub fn map_images(&self, f: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>>) -> Result<Self> {
        let images = f(&self.images)?;
        LabeledImageSet::new(images, self.labels.clone(), self.num_classes, self.split)
    }

    fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

/// Decodes CIFAR-10 binary records: a label byte followed by the red, green
/// and blue planes of a 32×32 image, row-major.
pub fn decode_cifar(bytes: &[u8], split: Split) -> Result<LabeledImageSet> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Data(alloc::format!(
            "truncated CIFAR-10 data: {} bytes is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut data = Vec::with_capacity(n * plane * 3);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Data(alloc::format!("record {r}: label byte {label} exceeds 9")));
        }
        labels.push(label);
        let px = &rec[1..];
        for p in 0..plane {
            for c in 0..3 {
                data.push(px[c * plane + p] as f32 / 255.0);
            }
        }
    }
    LabeledImageSet::new(
        Tensor::new(&[n, CIFAR_SIDE, CIFAR_SIDE, 3], data)?,
        labels,
        CIFAR_CLASSES,
        split,
    )
}

/// Concatenates sets with identical image shape and class count.
pub fn concat(sets: &[LabeledImageSet], split: Split) -> Result<LabeledImageSet> {
    let first = sets.first().ok_or_else(|| Error::invalid("concat", "no sets given"))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for s in sets {
        if s.image_shape() != first.image_shape() || s.num_classes != first.num_classes {
            return Err(Error::shapes("concat", s.images.shape(), first.images.shape()));
        }
        data.extend_from_slice(s.images.data());
        labels.extend_from_slice(&s.labels);
    }
    let [h, w, c] = first.image_shape();
    LabeledImageSet::new(
        Tensor::new(&[labels.len(), h, w, c], data)?,
        labels,
        first.num_classes,
        split,
    )
}

fn per_class(count: usize, fraction: f64) -> usize {
    (Float::round(count as f64 * fraction) as usize).min(count)
}

/// Class-balanced random subset keeping `fraction` of each class.
pub fn balanced_subset(set: &LabeledImageSet, fraction: f64, seed: u64) -> Result<LabeledImageSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("balanced_subset", "fraction must lie in (0, 1]"));
    }
    let mut rng = stream(seed);
    let mut keep = Vec::new();
    for mut idx in set.class_indices() {
        idx.shuffle(&mut rng);
        let n = per_class(idx.len(), fraction);
        keep.extend_from_slice(&idx[..n]);
    }
    keep.sort_unstable();
    set.select(&keep, set.split)
}

/// Stratified split into `(train, val)` with `val_fraction` of every class
/// held out.
pub fn stratified_split(set: &LabeledImageSet, val_fraction: f64, seed: u64) -> Result<(LabeledImageSet, LabeledImageSet)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid("stratified_split", "val fraction must lie in [0, 1)"));
    }
    let mut rng = stream(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut idx in set.class_indices() {
        idx.shuffle(&mut rng);
        let n = per_class(idx.len(), val_fraction);
        val.extend_from_slice(&idx[..n]);
        train.extend_from_slice(&idx[n..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((set.select(&train, Split::Train)?, set.select(&val, Split::Val)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    #[default]
    None,
    ColorShift,
}

/// Probability that an image is colour shifted when augmenting.
pub const AUGMENT_PROBABILITY: f64 = 0.5;

/// One pass over a set in shuffled order.
pub struct BatchStream<'a> {
    set: &'a LabeledImageSet,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    augmentation: Augmentation,
    rng: StreamRng,
}

impl Iterator for BatchStream<'_> {
    type Item = Result<(Tensor<f32>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        let batch = match self.set.select(idx, self.set.split) {
            Ok(b) => b,
            Err(e) => return Some(Err(e)),
        };
        let mut images = batch.images;
        if self.augmentation == Augmentation::ColorShift {
            let [h, w, c] = self.set.image_shape();
            let stride = h * w * c;
            for i in 0..idx.len() {
                let apply = self.rng.gen_bool(AUGMENT_PROBABILITY);
                let seed: u64 = self.rng.gen();
                if !apply {
                    continue;
                }
                let slot = &mut images.data_mut()[i * stride..(i + 1) * stride];
                let img = Tensor::new(&[h, w, c], slot.to_vec()).expect("image shape");
                match color_shift(&img, seed, ShiftBound::NoClip) {
                    Ok(o) => slot.copy_from_slice(o.image.data()),
                    Err(e) => return Some(Err(e)),
                }
            }
        }
        Some(Ok((images, batch.labels)))
    }
}

impl BatchStream<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

/// Shuffled mini-batches covering the whole set once.
pub fn stream_batches(set: &LabeledImageSet, batch_size: usize, seed: u64, augmentation: Augmentation) -> Result<BatchStream<'_>> {
    if batch_size == 0 {
        return Err(Error::invalid("stream_batches", "batch size must be at least 1"));
    }
    let mut rng = stream(seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut rng);
    Ok(BatchStream {
        set,
        order,
        batch_size,
        cursor: 0,
        augmentation,
        rng,
    })
}
