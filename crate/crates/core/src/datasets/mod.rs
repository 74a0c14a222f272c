//! Image datasets, open-set splits and the synthetic unknown sets.
//!
//! All pixel intensities are `f32` in `[0, 1]`, stored channel-major
//! (`C x H x W`) per image.

mod idx;
mod known;
mod split;
mod synth;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{load_cifar10, load_idx_pair};
pub use known::{EpochSampler, KnownSet};
pub use split::{make_open_set_split, openness, OpenSetSplit};
pub use synth::{synthesize_mnist_noise, synthesize_noise, NOISE_ALIAS_COUNT, NOISE_ALIAS_SEED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const MNIST: Self = Self { channels: 1, height: 28, width: 28 };
    pub const CIFAR: Self = Self { channels: 3, height: 32, width: 32 };

    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl FromStr for ImageShape {
    type Err = Error;

    /// Parses `HxWxC`, e.g. `28x28x1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("image shape `{s}` is not HxWxC")))?;
        match parts[..] {
            [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(Self::new(c, h, w)),
            _ => Err(Error::Parse(format!("image shape `{s}` is not HxWxC"))),
        }
    }
}

/// A class id from the source dataset, or the unknown sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Class(c) => write!(f, "{c}"),
            Label::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Vec<f32>,
    pub label: Label,
}

impl LabeledImage {
    /// Fails unless every intensity lies in `[0, 1]`.
    pub fn new(pixels: Vec<f32>, label: Label) -> Result<Self> {
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel intensity {bad} outside [0, 1]")));
        }
        Ok(Self { pixels, label })
    }
}

#[derive(Clone, Debug)]
pub struct DatasetHandle {
    pub name: String,
    pub shape: ImageShape,
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
}

impl DatasetHandle {
    pub fn partition(&self, p: Partition) -> &[LabeledImage] {
        match p {
            Partition::Train => &self.train,
            Partition::Test => &self.test,
        }
    }

    /// Sorted distinct class ids present in either partition.
    pub fn class_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .train
            .iter()
            .chain(&self.test)
            .filter_map(|s| match s.label {
                Label::Class(c) => Some(c),
                Label::Unknown => None,
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Samples of `partition` whose class id is in `classes`.
    pub fn select(&self, partition: Partition, classes: &[usize]) -> Vec<LabeledImage> {
        self.partition(partition)
            .iter()
            .filter(|s| matches!(s.label, Label::Class(c) if classes.contains(&c)))
            .cloned()
            .collect()
    }
}

/// Stacks images into an `[N, C, H, W]` tensor.
pub fn to_batch(shape: ImageShape, samples: &[&LabeledImage]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(samples.len() * shape.numel());
    for s in samples {
        debug_assert_eq!(s.pixels.len(), shape.numel());
        data.extend_from_slice(&s.pixels);
    }
    Tensor::new([samples.len(), shape.channels, shape.height, shape.width], data)
}

/// Loads a dataset by name.
///
/// On-disk layouts (files may additionally carry a `.gz` suffix; `root` may
/// either contain the files directly or a sub-directory named after the dataset):
///
/// | name             | files                                                                 |
/// |------------------|-----------------------------------------------------------------------|
/// | `mnist`          | `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`, `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte` |
/// | `fashion-mnist`  | same as `mnist`                                                       |
/// | `emnist-letters` | `emnist-letters-{train,test}-{images-idx3,labels-idx1}-ubyte` (images stored transposed) |
/// | `cifar10`        | `data_batch_1.bin` .. `data_batch_5.bin`, `test_batch.bin`             |
/// | `noise`          | synthesized, see [`synthesize_noise`]; `root` is ignored              |
pub fn load_dataset(name: &str, root: &Path) -> Result<DatasetHandle> {
    let dir = if root.join(name).is_dir() { root.join(name) } else { root.to_path_buf() };
    match name {
        "mnist" | "fashion-mnist" => {
            let (train, shape) = load_idx_pair(&dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", false)?;
            let (test, _) = load_idx_pair(&dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", false)?;
            Ok(DatasetHandle { name: name.to_owned(), shape, train, test })
        }
        "emnist-letters" => {
            let (train, shape) = load_idx_pair(
                &dir,
                "emnist-letters-train-images-idx3-ubyte",
                "emnist-letters-train-labels-idx1-ubyte",
                true,
            )?;
            let (test, _) = load_idx_pair(
                &dir,
                "emnist-letters-test-images-idx3-ubyte",
                "emnist-letters-test-labels-idx1-ubyte",
                true,
            )?;
            Ok(DatasetHandle { name: name.to_owned(), shape, train, test })
        }
        "cifar10" => load_cifar10(&dir),
        "noise" => synthesize_noise(NOISE_ALIAS_COUNT, ImageShape::MNIST, NOISE_ALIAS_SEED),
        other => Err(Error::NotFound(format!("no loader for dataset `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_parse_and_display() {
        let s: ImageShape = "32x32x3".parse().unwrap();
        assert_eq!(s, ImageShape::CIFAR);
        assert_eq!(s.to_string(), "32x32x3");
        assert!("32x32".parse::<ImageShape>().is_err());
    }

    #[test]
    fn pixel_range_enforced() {
        assert!(LabeledImage::new(vec![0.0, 1.0], Label::Unknown).is_ok());
        assert!(LabeledImage::new(vec![1.5], Label::Class(0)).is_err());
    }

    #[test]
    fn unknown_name_is_not_found() {
        let err = load_dataset("imagenet", Path::new("/nonexistent")).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    #[test]
    fn noise_alias_delegates() {
        let d = load_dataset("noise", Path::new("/nonexistent")).unwrap();
        let direct = synthesize_noise(NOISE_ALIAS_COUNT, ImageShape::MNIST, NOISE_ALIAS_SEED).unwrap();
        assert_eq!(d.test, direct.test);
    }
}
