use rand::Rng as _;

use super::{DatasetHandle, ImageShape, Label, LabeledImage};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Sample count and seed used when `noise` is requested by name.
pub const NOISE_ALIAS_COUNT: usize = 10_000;
pub const NOISE_ALIAS_SEED: u64 = 0;

/// `n` images with every pixel drawn i.i.d. from `U[0, 1)`, labelled unknown.
///
/// The images go to the test partition; the train partition is empty.
pub fn synthesize_noise(n: usize, shape: ImageShape, seed: u64) -> Result<DatasetHandle> {
    if n == 0 {
        return Err(Error::invalid("noise set needs at least one image"));
    }
    let mut rng = rng_from_seed(seed);
    let test = (0..n)
        .map(|_| LabeledImage {
            pixels: (0..shape.numel()).map(|_| rng.random::<f32>()).collect(),
            label: Label::Unknown,
        })
        .collect();
    Ok(DatasetHandle { name: "noise".into(), shape, train: Vec::new(), test })
}

/// Superimposes the test images of `digits` on those of `noise` by pointwise max.
pub fn synthesize_mnist_noise(digits: &DatasetHandle, noise: &DatasetHandle) -> Result<DatasetHandle> {
    if digits.shape != noise.shape {
        return Err(Error::invalid(format!("shape {} vs {}", digits.shape, noise.shape)));
    }
    if digits.test.len() != noise.test.len() {
        return Err(Error::invalid(format!(
            "{} digit images vs {} noise images",
            digits.test.len(),
            noise.test.len()
        )));
    }
    let test = digits
        .test
        .iter()
        .zip(&noise.test)
        .map(|(d, n)| LabeledImage {
            pixels: d.pixels.iter().zip(&n.pixels).map(|(&a, &b)| a.max(b)).collect(),
            label: Label::Unknown,
        })
        .collect();
    Ok(DatasetHandle { name: format!("{}-noise", digits.name), shape: digits.shape, train: Vec::new(), test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle(shape: ImageShape, images: Vec<Vec<f32>>) -> DatasetHandle {
        DatasetHandle {
            name: "mnist".into(),
            shape,
            train: Vec::new(),
            test: images.into_iter().map(|p| LabeledImage { pixels: p, label: Label::Class(1) }).collect(),
        }
    }

    #[test]
    fn noise_statistics() {
        let d = synthesize_noise(10_000, ImageShape::MNIST, 42).unwrap();
        assert_eq!(d.test.len(), 10_000);
        let (sum, count) = d
            .test
            .iter()
            .flat_map(|s| &s.pixels)
            .fold((0.0f64, 0usize), |(s, c), &p| (s + f64::from(p), c + 1));
        let mean = sum / count as f64;
        assert!((0.49..=0.51).contains(&mean), "mean {mean}");
    }

    #[test]
    fn noise_range_and_replay() {
        let one = synthesize_noise(1, ImageShape::CIFAR, 5).unwrap();
        assert!(one.test[0].pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        let a = synthesize_noise(3, ImageShape::MNIST, 9).unwrap();
        let b = synthesize_noise(3, ImageShape::MNIST, 9).unwrap();
        assert_eq!(a.test, b.test);
        assert!(synthesize_noise(0, ImageShape::MNIST, 9).is_err());
    }

    #[test]
    fn superimposition_is_pointwise_max() {
        let shape = ImageShape::new(1, 2, 2);
        let noise = handle(shape, vec![vec![0.3, 0.9, 0.0, 0.5]]);
        let zeros = handle(shape, vec![vec![0.0; 4]]);
        let ones = handle(shape, vec![vec![1.0; 4]]);
        let digit = handle(shape, vec![vec![0.8, 0.1, 0.0, 0.5]]);

        assert_eq!(synthesize_mnist_noise(&zeros, &noise).unwrap().test[0].pixels, noise.test[0].pixels);
        assert_eq!(synthesize_mnist_noise(&ones, &noise).unwrap().test[0].pixels, vec![1.0; 4]);
        let out = synthesize_mnist_noise(&digit, &noise).unwrap();
        assert_eq!(out.test[0].pixels, vec![0.8, 0.9, 0.0, 0.5]);
        assert_eq!(out.test[0].label, Label::Unknown);
    }

    #[test]
    fn superimposition_rejects_mismatch() {
        let a = handle(ImageShape::new(1, 2, 2), vec![vec![0.0; 4]]);
        let b = handle(ImageShape::new(1, 2, 2), vec![vec![0.0; 4], vec![0.0; 4]]);
        let c = handle(ImageShape::new(1, 1, 4), vec![vec![0.0; 4]]);
        assert!(synthesize_mnist_noise(&a, &b).is_err());
        assert!(synthesize_mnist_noise(&a, &c).is_err());
    }
}
