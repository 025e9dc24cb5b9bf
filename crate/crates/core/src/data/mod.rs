//! Datasets, splits and mini-batches.
//!
//! Images are stored as one flat `f32` buffer in NCHW order with values in
//! [0, 1]; normalization happens per batch so the stored data stays exactly
//! what was read from disk.

mod cifar;
mod folder;
mod folds;

pub use cifar::{
    encode_cifar_batch, load_cifar10, load_cifar_batch, split_cifar10, write_cifar_batch,
    CifarData, CIFAR_BATCH_RECORDS, CIFAR_CLASSES, CIFAR_RECORD_BYTES, CIFAR_SIDE,
};
pub use folder::{
    bilinear_resize, encode_ppm, load_image_folder, load_ppm, parse_ppm, write_ppm, RgbImage,
};
pub use folds::{make_fold_plan, FoldPlan, FOLD_COUNT, PER_CLASS, PER_DECILE};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Deterministic generator for a (seed, stream) pair. Streams keep unrelated
/// consumers of one user seed (shuffling, splitting, init) independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// One image and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Shape (1, C, H, W).
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
    pixels: Vec<f32>,
}

impl Dataset {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        class_names: Vec<String>,
        labels: Vec<usize>,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let per = channels * height * width;
        if pixels.len() != labels.len() * per {
            return Err(Error::Shape(format!(
                "{} pixel values for {} samples of {channels}×{height}×{width}",
                pixels.len(),
                labels.len()
            )));
        }
        let num_classes = class_names.len();
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Validation(format!(
                "sample {i} has label {l}, only {num_classes} classes"
            )));
        }
        Ok(Dataset {
            channels,
            height,
            width,
            num_classes,
            class_names,
            labels,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn sample(&self, i: usize) -> Sample {
        let shape = Shape::new(1, self.channels, self.height, self.width);
        Sample {
            image: Tensor::from_vec(shape, self.image(i).to_vec()).expect("sized by construction"),
            label: self.labels[i],
        }
    }

    /// Samples per class over `indices`.
    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Indices of each class in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }

    /// Stacks the given samples into one (N, C, H, W) batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let shape = Shape::new(indices.len(), self.channels, self.height, self.width);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (
            Tensor::from_vec(shape, data).expect("sized by construction"),
            labels,
        )
    }

    /// New dataset holding only `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (t, labels) = self.gather(indices);
        Dataset {
            labels,
            pixels: t.into_vec(),
            class_names: self.class_names.clone(),
            ..*self
        }
    }

    /// Per-channel mean over `indices`, accumulated in f64.
    pub fn channel_means(&self, indices: &[usize]) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut sums = vec![0.0f64; self.channels];
        for &i in indices {
            for (c, s) in sums.iter_mut().enumerate() {
                *s += self.image(i)[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
        }
        let count = (indices.len() * plane).max(1) as f64;
        sums.iter().map(|s| (s / count) as f32).collect()
    }
}

/// Train/validation/test index lists over one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// Checks the three lists are pairwise disjoint and in range.
    pub fn validate(&self, population: usize) -> Result<()> {
        let mut seen = vec![0u8; population];
        for (name, list) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in list {
                if i >= population {
                    return Err(Error::Validation(format!(
                        "{name} index {i} outside 0..{population}"
                    )));
                }
                if seen[i] != 0 {
                    return Err(Error::Validation(format!(
                        "index {i} appears twice ({name})"
                    )));
                }
                seen[i] = 1;
            }
        }
        Ok(())
    }
}

/// Class-stratified random split: `val_per_class` and `test_per_class` of each
/// class go to validation and test, the rest to training. Every class must
/// have the same number of samples.
pub fn stratified_split(
    data: &Dataset,
    population: &[usize],
    val_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<SplitSpec> {
    let mut by_class = vec![Vec::new(); data.num_classes];
    for &i in population {
        by_class[data.labels[i]].push(i);
    }
    let first = by_class.first().map_or(0, Vec::len);
    if let Some((c, v)) = by_class.iter().enumerate().find(|(_, v)| v.len() != first) {
        return Err(Error::Validation(format!(
            "class imbalance: class 0 has {first} samples, class {c} has {}",
            v.len()
        )));
    }
    if first < val_per_class + test_per_class {
        return Err(Error::Validation(format!(
            "{first} samples per class cannot supply {val_per_class} validation and {test_per_class} test samples"
        )));
    }
    let mut rng = seeded_rng(seed, 1);
    let mut split = SplitSpec {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for mut members in by_class {
        members.shuffle(&mut rng);
        split.val.extend_from_slice(&members[..val_per_class]);
        split
            .test
            .extend_from_slice(&members[val_per_class..val_per_class + test_per_class]);
        split
            .train
            .extend_from_slice(&members[val_per_class + test_per_class..]);
    }
    for list in [&mut split.train, &mut split.val, &mut split.test] {
        list.sort_unstable();
    }
    Ok(split)
}

/// `per_class` randomly chosen samples of each class (sorted), for desk-scale runs.
pub fn stratified_subset(data: &Dataset, per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = seeded_rng(seed, 2);
    let mut out = Vec::with_capacity(per_class * data.num_classes);
    for (c, mut members) in data.indices_by_class().into_iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::Validation(format!(
                "class {c} has {} samples, {per_class} requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..per_class]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentPolicy {
    #[default]
    None,
    HorizontalFlip,
}

impl std::str::FromStr for AugmentPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentPolicy::None),
            "hflip" | "horizontal-flip" => Ok(AugmentPolicy::HorizontalFlip),
            _ => Err(Error::Validation(format!(
                "unknown augmentation {s:?} (expected none or horizontal-flip)"
            ))),
        }
    }
}

impl std::fmt::Display for AugmentPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AugmentPolicy::None => "none",
            AugmentPolicy::HorizontalFlip => "horizontal-flip",
        })
    }
}

/// Mirrors every (c, row) of a C×H×W image along the width axis.
pub fn flip_horizontal(image: &mut [f32], width: usize) {
    for row in image.chunks_exact_mut(width) {
        row.reverse();
    }
}

pub fn augment(sample: &Sample, rng: &mut impl Rng, policy: AugmentPolicy) -> Sample {
    let mut out = sample.clone();
    if policy == AugmentPolicy::HorizontalFlip && rng.random_bool(0.5) {
        let w = out.image.shape().w;
        flip_horizontal(out.image.data_mut(), w);
    }
    out
}

/// Applies `policy` to each sample of a batch in place.
pub fn augment_batch(batch: &mut Tensor, rng: &mut impl Rng, policy: AugmentPolicy) {
    if policy == AugmentPolicy::None {
        return;
    }
    let s = batch.shape();
    for img in batch.data_mut().chunks_exact_mut(s.sample_len()) {
        if rng.random_bool(0.5) {
            flip_horizontal(img, s.w);
        }
    }
}

/// Subtracts `means[c]` from every value of channel `c`.
pub fn subtract_channel_means(batch: &mut Tensor, means: &[f32]) -> Result<()> {
    let s = batch.shape();
    if means.len() != s.c {
        return Err(Error::Shape(format!(
            "{} channel means for a batch of shape {s}",
            means.len()
        )));
    }
    for (k, plane) in batch.data_mut().chunks_exact_mut(s.plane()).enumerate() {
        let m = means[k % s.c];
        plane.iter_mut().for_each(|v| *v -= m);
    }
    Ok(())
}

/// Mini-batches over `indices`, shuffled by `shuffle_seed` when given. The
/// last batch may be smaller.
pub struct BatchIter<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn batch_iter<'a>(
    data: &'a Dataset,
    indices: &[usize],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::Validation("batch size must be at least 1".into()));
    }
    let mut order = indices.to_vec();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut seeded_rng(seed, 3));
    }
    Ok(BatchIter {
        data,
        order,
        batch_size,
        pos: 0,
    })
}

impl<'a> BatchIter<'a> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.data.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}
