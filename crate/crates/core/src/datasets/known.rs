use rand::seq::SliceRandom;

use super::{to_batch, ImageShape, Label, LabeledImage, OpenSetSplit};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Known-class samples stacked into one `[N, C, H, W]` tensor, with labels
/// remapped to dense indices `0..classes` in split order.
#[derive(Clone, Debug)]
pub struct KnownSet {
    pub shape: ImageShape,
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl KnownSet {
    /// Fails on any sample that is unlabeled or whose class is not a known class of `split`.
    pub fn from_samples(shape: ImageShape, samples: &[LabeledImage], split: &OpenSetSplit) -> Result<Self> {
        let mut labels = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let k = match s.label {
                Label::Class(c) => split.known_index(c),
                Label::Unknown => None,
            };
            labels.push(k.ok_or_else(|| {
                Error::invalid(format!("sample {i} ({:?}) is not a known class of the split", s.label))
            })?);
            if s.pixels.len() != shape.numel() {
                return Err(Error::invalid(format!("sample {i} does not have shape {shape}")));
            }
        }
        let refs: Vec<&LabeledImage> = samples.iter().collect();
        Ok(Self { shape, images: to_batch(shape, &refs), labels, classes: split.num_known() })
    }

    /// Builds a set from a stacked tensor and dense labels.
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[0] != labels.len() {
            return Err(Error::invalid(format!("images {s:?} do not match {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} is not below {classes}")));
        }
        let shape = ImageShape::new(s[1], s[2], s[3]);
        Ok(Self { shape, images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        (self.images.gather_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Indices of every sample of class `k`.
    pub fn class_indices(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == k).collect()
    }
}

/// Endless shuffled passes over `0..len`; each pass is a fresh permutation.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
}

impl EpochSampler {
    pub fn new(len: usize) -> Self {
        Self { order: (0..len).collect(), pos: len, epoch: 0 }
    }

    /// Completed passes so far.
    pub fn epoch(&self) -> usize {
        self.epoch.saturating_sub(1)
    }

    /// Next `n` indices. A batch never straddles two passes, so the final
    /// batch of a pass may be short.
    pub fn next_batch(&mut self, n: usize, rng: &mut Rng) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + n).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}
