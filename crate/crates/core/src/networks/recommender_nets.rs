use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::check_layout;
use super::params::{glorot_uniform, Bound, ParamId, ParamSet};
use super::{load_checkpoint, save_checkpoint, Checkpoint, INFERENCE_CHUNK, LEAKY_SLOPE};
use crate::autodiff::{Graph, Var};
use crate::datasets::ImageShape;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor::{Float, Tensor};

/// Conditional generator layout.
///
/// The condition vector is embedded to `noise_dim` by a dense layer and
/// multiplied elementwise into the noise vector. A dense layer then produces a
/// `seed_channels x seed_side x seed_side` map, upsampled by stride-2 `4x4`
/// transposed convolutions and closed by a same-padded convolution with a
/// sigmoid output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub shape: ImageShape,
    pub conditions: usize,
    pub noise_dim: usize,
    pub seed_side: usize,
    pub seed_channels: usize,
    pub up_channels: Vec<usize>,
    pub out_kernel: usize,
}

impl GeneratorSpec {
    /// Architecture for 28x28x1 or 32x32x3 images.
    pub fn standard(shape: ImageShape, conditions: usize) -> Result<Self> {
        if conditions == 0 {
            return Err(Error::invalid("generator needs at least one condition"));
        }
        match shape {
            ImageShape::MNIST => Ok(Self {
                shape,
                conditions,
                noise_dim: 100,
                seed_side: 7,
                seed_channels: 128,
                up_channels: vec![128, 128],
                out_kernel: 7,
            }),
            ImageShape::CIFAR => Ok(Self {
                shape,
                conditions,
                noise_dim: 100,
                seed_side: 4,
                seed_channels: 256,
                up_channels: vec![128, 128, 128],
                out_kernel: 3,
            }),
            other => Err(Error::invalid(format!("no generator architecture for {other}"))),
        }
    }

    /// Rescales every channel count by `width / 128`.
    pub fn with_width(mut self, width: usize) -> Self {
        let scale = |c: usize| (c * width / 128).max(1);
        self.seed_channels = scale(self.seed_channels);
        self.up_channels = self.up_channels.iter().map(|&c| scale(c)).collect();
        self
    }

    pub fn with_noise_dim(mut self, noise_dim: usize) -> Self {
        self.noise_dim = noise_dim;
        self
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorNet<T> {
    pub spec: GeneratorSpec,
    pub params: ParamSet<T>,
}

pub fn build_generator<T: Float>(spec: GeneratorSpec, rng: &mut Rng) -> Result<GeneratorNet<T>> {
    let side = spec.seed_side * 2usize.pow(spec.up_channels.len() as u32);
    if side != spec.shape.height || side != spec.shape.width || spec.out_kernel % 2 == 0 {
        return Err(Error::invalid(format!("generator layout does not produce {}", spec.shape)));
    }
    let mut p = ParamSet::new();
    let (u, z) = (spec.conditions, spec.noise_dim);
    // Glorot weights and zero biases; fan-in scaled init drives the sigmoid
    // output to saturate within a few dozen adversarial steps.
    p.add("embed.w", glorot_uniform(&[z, u], u, z, rng));
    p.add("embed.b", Tensor::zeros(&[z]));
    let seed = spec.seed_channels * spec.seed_side * spec.seed_side;
    p.add("fc.w", glorot_uniform(&[seed, z], z, seed, rng));
    p.add("fc.b", Tensor::zeros(&[seed]));
    let mut cin = spec.seed_channels;
    for (i, &c) in spec.up_channels.iter().enumerate() {
        p.add(format!("up{i}.w"), glorot_uniform(&[cin, c, 4, 4], cin * 16, c * 16, rng));
        p.add(format!("up{i}.b"), Tensor::zeros(&[c]));
        cin = c;
    }
    let (k, ch) = (spec.out_kernel, spec.shape.channels);
    p.add("out.w", glorot_uniform(&[ch, cin, k, k], cin * k * k, ch * k * k, rng));
    p.add("out.b", Tensor::zeros(&[ch]));
    Ok(GeneratorNet { spec, params: p })
}

impl<T: Float> GeneratorNet<T> {
    /// Images `[N, C, H, W]` in `(0, 1)` from noise `[N, noise_dim]` and one-hot
    /// conditions `[N, U]`.
    pub fn forward(&self, g: &Graph<T>, z: Var, cv: Var, track: bool) -> (Var, Bound) {
        let bound = self.params.bind(g, track);
        (self.apply(g, z, cv, &bound), bound)
    }

    pub fn apply(&self, g: &Graph<T>, z: Var, cv: Var, bound: &Bound) -> Var {
        let p = |i: usize| bound.var(ParamId(i));
        let n = g.shape(z)[0];
        let s = &self.spec;
        let emb = g.linear(cv, p(0), Some(p(1)));
        let h = g.mul(z, emb);
        let h = g.linear(h, p(2), Some(p(3)));
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let mut h = g.reshape(h, [n, s.seed_channels, s.seed_side, s.seed_side]);
        let mut i = 4;
        for _ in &s.up_channels {
            h = g.conv_transpose2d(h, p(i), Some(p(i + 1)), 2, 1);
            h = g.leaky_relu(h, LEAKY_SLOPE);
            i += 2;
        }
        let h = g.conv2d(h, p(i), Some(p(i + 1)), 1, s.out_kernel / 2);
        g.sigmoid(h)
    }

    /// Untracked generation.
    pub fn generate(&self, z: &Tensor<T>, cv: &Tensor<T>) -> Result<Tensor<T>> {
        let s = &self.spec;
        if z.shape() != [z.rows(), s.noise_dim] || cv.shape() != [z.rows(), s.conditions] {
            return Err(Error::invalid(format!(
                "generator inputs {:?} / {:?} do not match noise {} / conditions {}",
                z.shape(),
                cv.shape(),
                s.noise_dim,
                s.conditions
            )));
        }
        let n = z.rows();
        let mut out = Vec::with_capacity(n * s.shape.numel());
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(INFERENCE_CHUNK) {
            let g = Graph::new();
            let zv = g.constant(z.gather_rows(chunk));
            let cvv = g.constant(cv.gather_rows(chunk));
            let (img, _) = self.forward(&g, zv, cvv, false);
            out.extend_from_slice(g.value(img).data());
        }
        Ok(Tensor::new([n, s.shape.channels, s.shape.height, s.shape.width], out))
    }

    pub fn save(&self, path: &Path, fingerprint: &str, step: u64) -> Result<()> {
        save_checkpoint(
            path,
            &Checkpoint {
                kind: "generator".into(),
                meta: serde_json::to_string(&self.spec)?,
                fingerprint: fingerprint.to_owned(),
                step,
                params: self.params.clone(),
            },
        )
    }

    pub fn load(path: &Path, fingerprint: Option<&str>) -> Result<(Self, u64)> {
        let ck = load_checkpoint::<T>(path, fingerprint)?;
        if ck.kind != "generator" {
            return Err(Error::Parse(format!("{} holds a {}, not a generator", path.display(), ck.kind)));
        }
        let spec: GeneratorSpec = serde_json::from_str(&ck.meta)?;
        let template = build_generator::<T>(spec.clone(), &mut rng_from_seed(0))?;
        check_layout(&template.params, &ck.params)?;
        Ok((Self { spec, params: ck.params }, ck.step))
    }
}

/// Stride-2 `3x3` convolutions with leaky rectifiers, then one logistic unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub shape: ImageShape,
    pub channels: Vec<usize>,
}

impl DiscriminatorSpec {
    pub fn standard(shape: ImageShape) -> Result<Self> {
        match shape {
            ImageShape::MNIST => Ok(Self { shape, channels: vec![64, 64] }),
            ImageShape::CIFAR => Ok(Self { shape, channels: vec![64, 128, 128, 256] }),
            other => Err(Error::invalid(format!("no discriminator architecture for {other}"))),
        }
    }

    /// Rescales every channel count by `width / 64`.
    pub fn with_width(mut self, width: usize) -> Self {
        self.channels = self.channels.iter().map(|&c| (c * width / 64).max(1)).collect();
        self
    }

    fn out_side(&self, side: usize) -> usize {
        self.channels.iter().fold(side, |s, _| (s + 2 - 3) / 2 + 1)
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorNet<T> {
    pub spec: DiscriminatorSpec,
    pub params: ParamSet<T>,
}

pub fn build_discriminator<T: Float>(spec: DiscriminatorSpec, rng: &mut Rng) -> Result<DiscriminatorNet<T>> {
    if spec.channels.is_empty() || spec.shape.numel() == 0 {
        return Err(Error::invalid("discriminator needs at least one conv layer"));
    }
    let mut p = ParamSet::new();
    let mut cin = spec.shape.channels;
    for (i, &c) in spec.channels.iter().enumerate() {
        p.add(format!("conv{i}.w"), glorot_uniform(&[c, cin, 3, 3], cin * 9, c * 9, rng));
        p.add(format!("conv{i}.b"), Tensor::zeros(&[c]));
        cin = c;
    }
    let flat = cin * spec.out_side(spec.shape.height) * spec.out_side(spec.shape.width);
    p.add("fc.w", glorot_uniform(&[1, flat], flat, 1, rng));
    p.add("fc.b", Tensor::zeros(&[1]));
    Ok(DiscriminatorNet { spec, params: p })
}

impl<T: Float> DiscriminatorNet<T> {
    /// Probabilities `[N, 1]` that each image is real.
    pub fn forward(&self, g: &Graph<T>, x: Var, track: bool) -> (Var, Bound) {
        let bound = self.params.bind(g, track);
        (self.apply(g, x, &bound), bound)
    }

    pub fn apply(&self, g: &Graph<T>, x: Var, bound: &Bound) -> Var {
        let p = |i: usize| bound.var(ParamId(i));
        let mut h = x;
        let mut i = 0;
        for _ in &self.spec.channels {
            h = g.conv2d(h, p(i), Some(p(i + 1)), 2, 1);
            h = g.leaky_relu(h, LEAKY_SLOPE);
            i += 2;
        }
        let h = g.flatten(h);
        let h = g.linear(h, p(i), Some(p(i + 1)));
        g.sigmoid(h)
    }

    pub fn probabilities(&self, batch: &Tensor<T>) -> Tensor<T> {
        let g = Graph::new();
        let x = g.constant(batch.clone());
        let (d, _) = self.forward(&g, x, false);
        Tensor::clone(&g.value(d))
    }

    pub fn save(&self, path: &Path, fingerprint: &str, step: u64) -> Result<()> {
        save_checkpoint(
            path,
            &Checkpoint {
                kind: "discriminator".into(),
                meta: serde_json::to_string(&self.spec)?,
                fingerprint: fingerprint.to_owned(),
                step,
                params: self.params.clone(),
            },
        )
    }

    pub fn load(path: &Path, fingerprint: Option<&str>) -> Result<(Self, u64)> {
        let ck = load_checkpoint::<T>(path, fingerprint)?;
        if ck.kind != "discriminator" {
            return Err(Error::Parse(format!("{} holds a {}, not a discriminator", path.display(), ck.kind)));
        }
        let spec: DiscriminatorSpec = serde_json::from_str(&ck.meta)?;
        let template = build_discriminator::<T>(spec.clone(), &mut rng_from_seed(0))?;
        check_layout(&template.params, &ck.params)?;
        Ok((Self { spec, params: ck.params }, ck.step))
    }
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn one_hot(n: usize, u: usize, k: impl Fn(usize) -> usize) -> Tensor<f32> {
        let mut d = vec![0.0; n * u];
        for i in 0..n {
            d[i * u + k(i)] = 1.0;
        }
        Tensor::new([n, u], d)
    }

    fn noise(n: usize, dim: usize, rng: &mut Rng) -> Tensor<f32> {
        Tensor::new([n, dim], (0..n * dim).map(|_| StandardNormal.sample(rng)).collect())
    }

    #[test]
    fn recommender_init_is_glorot_with_zero_biases() {
        let mut rng = rng_from_seed(8);
        let gen = build_generator::<f64>(GeneratorSpec::standard(ImageShape::MNIST, 10).unwrap().with_width(8), &mut rng).unwrap();
        let disc =
            build_discriminator::<f64>(DiscriminatorSpec::standard(ImageShape::MNIST).unwrap().with_width(8), &mut rng).unwrap();
        for p in gen.params.iter().chain(disc.params.iter()) {
            if p.name.ends_with(".b") {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{} not zero", p.name);
            }
        }
        // fc: 100 -> 7*7*8, uniform variance is bound^2 / 3 = 2 / (fan_in + fan_out)
        let fc = gen.params.iter().find(|p| p.name == "fc.w").unwrap();
        let (fan_in, fan_out) = (100.0, 392.0);
        let bound = (6.0f64 / (fan_in + fan_out)).sqrt();
        let v = fc.value.data();
        assert!(v.iter().all(|x| x.abs() < bound));
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!((var / (2.0 / (fan_in + fan_out)) - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn mnist_generator_output() {
        let mut rng = rng_from_seed(3);
        let spec = GeneratorSpec::standard(ImageShape::MNIST, 10).unwrap().with_width(16);
        let gen = build_generator::<f32>(spec, &mut rng).unwrap();
        let z = noise(4, 100, &mut rng);
        let img = gen.generate(&z, &one_hot(4, 10, |i| i)).unwrap();
        assert_eq!(img.shape(), &[4, 1, 28, 28]);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cifar_generator_and_discriminator() {
        let mut rng = rng_from_seed(4);
        let spec = GeneratorSpec::standard(ImageShape::CIFAR, 3).unwrap().with_width(8).with_noise_dim(6);
        let gen = build_generator::<f32>(spec, &mut rng).unwrap();
        let img = gen.generate(&noise(2, 6, &mut rng), &one_hot(2, 3, |_| 2)).unwrap();
        assert_eq!(img.shape(), &[2, 3, 32, 32]);
        let d = build_discriminator::<f32>(
            DiscriminatorSpec::standard(ImageShape::CIFAR).unwrap().with_width(4),
            &mut rng,
        )
        .unwrap();
        let p = d.probabilities(&img);
        assert_eq!(p.shape(), &[2, 1]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn unsupported_shapes() {
        let odd = ImageShape::new(1, 20, 20);
        assert!(GeneratorSpec::standard(odd, 10).is_err());
        assert!(DiscriminatorSpec::standard(odd).is_err());
        assert!(GeneratorSpec::standard(ImageShape::MNIST, 0).is_err());
    }

    #[test]
    fn all_ones_embedding_makes_condition_irrelevant() {
        let mut rng = rng_from_seed(5);
        let spec = GeneratorSpec::standard(ImageShape::MNIST, 4).unwrap().with_width(8).with_noise_dim(12);
        let mut gen = build_generator::<f32>(spec, &mut rng).unwrap();
        let z = noise(4, 12, &mut rng);
        let a = gen.generate(&z, &one_hot(4, 4, |_| 0)).unwrap();
        let b = gen.generate(&z, &one_hot(4, 4, |i| i)).unwrap();
        assert_ne!(a, b);
        gen.params.tensor_mut(0).data_mut().fill(0.0);
        gen.params.tensor_mut(1).data_mut().fill(1.0);
        let a = gen.generate(&z, &one_hot(4, 4, |_| 0)).unwrap();
        let b = gen.generate(&z, &one_hot(4, 4, |i| i)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_input_validation() {
        let mut rng = rng_from_seed(6);
        let spec = GeneratorSpec::standard(ImageShape::MNIST, 4).unwrap().with_width(8).with_noise_dim(12);
        let gen = build_generator::<f32>(spec, &mut rng).unwrap();
        assert!(gen.generate(&noise(2, 11, &mut rng), &one_hot(2, 4, |_| 0)).is_err());
    }
}
