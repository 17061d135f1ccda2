//! Images, labels, datasets and normalisation.

mod codec;
mod files;
mod labels;
mod synth;

pub use codec::{decode_image, encode_png, encode_ppm, read_image, write_image, ImageFormat};
pub use files::{load_image_dir, load_labeled_dir, save_dataset};
pub use labels::{load_labels_csv, write_labels_csv, LABELS_HEADER};
pub use synth::{make_synthetic_dataset, BlobStyle, SynthSpec, ISIC2018_CLASS_COUNTS};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::{Error, Result};

pub const CHANNELS: usize = 3;
pub const CLASS_COUNT: usize = 7;

/// Smallest side length accepted by [`Dataset`].
pub const MIN_SIDE: usize = 8;

/// Lesion classes in ground-truth column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Mel,
    Nv,
    Bcc,
    Akiec,
    Bkl,
    Df,
    Vasc,
}

impl Class {
    pub const ALL: [Class; CLASS_COUNT] = [
        Class::Mel,
        Class::Nv,
        Class::Bcc,
        Class::Akiec,
        Class::Bkl,
        Class::Df,
        Class::Vasc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Mel => "MEL",
            Class::Nv => "NV",
            Class::Bcc => "BCC",
            Class::Akiec => "AKIEC",
            Class::Bkl => "BKL",
            Class::Df => "DF",
            Class::Vasc => "VASC",
        }
    }
}

/// An RGB image stored row-major as `(row, col, channel)`.
///
/// Decoded pixels live in `[0, 1]`; normalised images may hold any finite
/// value.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("image", "zero-sized image"));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(
                "image",
                format!(
                    "{}x{}x{} needs {} values, got {}",
                    height,
                    width,
                    CHANNELS,
                    height * width * CHANNELS,
                    data.len()
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite pixel value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * CHANNELS
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let o = self.offset(y, x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, p: [f64; 3]) {
        let o = self.offset(y, x);
        self.data[o..o + CHANNELS].copy_from_slice(&p);
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Sub-image of `size`×`size` starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape(
                "crop",
                format!(
                    "{}x{} window at ({top}, {left}) exceeds {}x{} image",
                    height, width, self.height, self.width
                ),
            ));
        }
        Ok(Image::from_fn(height, width, |y, x| self.pixel(top + y, left + x)))
    }

    pub fn center_crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width {
            return Err(Error::shape(
                "center crop",
                format!(
                    "{}x{} window exceeds {}x{} image",
                    height, width, self.height, self.width
                ),
            ));
        }
        self.crop((self.height - height) / 2, (self.width - width) / 2, height, width)
    }
}

/// Probability vector over the seven lesion classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabel([f64; CLASS_COUNT]);

/// Tolerance on `Σ p = 1` for a valid [`SoftLabel`].
pub const LABEL_SUM_TOL: f64 = 1e-9;

impl SoftLabel {
    pub fn new(probs: [f64; CLASS_COUNT]) -> Result<Self> {
        for (k, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Data(format!(
                    "label entry {} = {p} outside [0, 1]",
                    Class::ALL[k].name()
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > LABEL_SUM_TOL {
            return Err(Error::Data(format!("label sums to {sum}, expected 1")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: Class) -> Self {
        let mut p = [0.0; CLASS_COUNT];
        p[class.index()] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64; CLASS_COUNT] {
        &self.0
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> Class {
        Class::ALL[argmax(&self.0)]
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// An image with an optional label. Unlabelled samples carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: Option<SoftLabel>,
}

impl Sample {
    pub fn labeled(image: Image, label: SoftLabel) -> Self {
        Self {
            image,
            label: Some(label),
        }
    }

    pub fn unlabeled(image: Image) -> Self {
        Self { image, label: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: String,
    pub sample: Sample,
}

/// A collection of uniquely identified samples sharing one image size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    entries: Vec<Entry>,
}

impl Dataset {
    pub fn new(entries: Vec<Entry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id `{}`", e.id)));
            }
        }
        if let Some(first) = entries.first() {
            let (h, w) = (first.sample.image.height(), first.sample.image.width());
            if h < MIN_SIDE || w < MIN_SIDE {
                return Err(Error::Data(format!(
                    "images must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
                )));
            }
            if let Some(bad) = entries.iter().find(|e| !e.sample.image.same_dims(&first.sample.image)) {
                return Err(Error::Data(format!(
                    "sample `{}` is {}x{}, expected {h}x{w}",
                    bad.id,
                    bad.sample.image.height(),
                    bad.sample.image.width()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.entries.iter().map(|e| &e.sample.image)
    }

    /// Subset by position, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let entries = indices
            .iter()
            .map(|&i| {
                self.entries
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("index {i} out of range for {} samples", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(entries)
    }

    /// Splits into (labelled, unlabelled), preserving order.
    pub fn split_labeled(&self) -> (Dataset, Dataset) {
        let (l, u): (Vec<Entry>, Vec<Entry>) =
            self.entries.iter().cloned().partition(|e| e.sample.label.is_some());
        (Dataset { entries: l }, Dataset { entries: u })
    }

    /// Labels of all labelled entries, in order. Unlabelled entries are skipped.
    pub fn labels(&self) -> Vec<SoftLabel> {
        self.entries.iter().filter_map(|e| e.sample.label).collect()
    }

    pub fn class_histogram(&self) -> [usize; CLASS_COUNT] {
        let mut h = [0; CLASS_COUNT];
        for l in self.labels() {
            h[l.argmax().index()] += 1;
        }
        h
    }
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }

    /// Population statistics over every pixel of every image.
    pub fn compute<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Self> {
        let images: Vec<&Image> = images.into_iter().collect();
        let count: usize = images.iter().map(|im| im.height() * im.width()).sum();
        if count == 0 {
            return Err(Error::Data("cannot compute normalisation stats of an empty dataset".into()));
        }
        let n = count as f64;
        let mut mean = [0.0; CHANNELS];
        for im in &images {
            for px in im.data().chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    mean[c] += px[c];
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; CHANNELS];
        for im in &images {
            for px in im.data().chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    let d = px[c] - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let std = var.map(|v| (v / n).sqrt().max(STD_FLOOR));
        Ok(Self { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Data(format!("invalid normalisation stats {self:?}")));
        }
        Ok(())
    }
}

pub fn compute_norm_stats(dataset: &Dataset) -> Result<NormStats> {
    NormStats::compute(dataset.images())
}

/// `(p - mean) / std` per channel.
pub fn normalize(image: &Image, stats: &NormStats) -> Image {
    let mut out = image.clone();
    for px in out.data.chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] = (px[c] - stats.mean[c]) / stats.std[c];
        }
    }
    out
}

/// Inverse of [`normalize`].
pub fn denormalize(image: &Image, stats: &NormStats) -> Image {
    let mut out = image.clone();
    for px in out.data.chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] = px[c] * stats.std[c] + stats.mean[c];
        }
    }
    out
}
