use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::params::{normal, uniform_fan_in, Bound, ParamId, ParamSet};
use super::{load_checkpoint, save_checkpoint, Checkpoint, INFERENCE_CHUNK};
use crate::autodiff::{Graph, Var};
use crate::datasets::ImageShape;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};

/// Convolutional backbone: each conv entry is a `3x3` same-padded convolution,
/// ReLU and `2x2` max pooling; each dense entry a ReLU hidden layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Backbone {
    pub conv_channels: Vec<usize>,
    pub dense: Vec<usize>,
}

impl Backbone {
    /// Two conv blocks and two dense layers, sized for 28x28 inputs.
    pub fn plain() -> Self {
        Self { conv_channels: vec![32, 64], dense: vec![256] }
    }

    /// Reduced `plain` for CPU runs.
    pub fn plain_small() -> Self {
        Self { conv_channels: vec![16, 32], dense: vec![64] }
    }

    /// Four conv blocks, sized for 32x32 inputs.
    pub fn vgg_small() -> Self {
        Self { conv_channels: vec![32, 64, 128, 128], dense: vec![256] }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::plain() {
            return f.write_str("plain");
        }
        if *self == Self::plain_small() {
            return f.write_str("plain-small");
        }
        if *self == Self::vgg_small() {
            return f.write_str("vgg-small");
        }
        let j = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "conv={};dense={}", j(&self.conv_channels), j(&self.dense))
    }
}

impl FromStr for Backbone {
    type Err = Error;

    /// `plain`, `plain-small`, `vgg-small`, or `conv=16,32;dense=64`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => return Ok(Self::plain()),
            "plain-small" => return Ok(Self::plain_small()),
            "vgg-small" => return Ok(Self::vgg_small()),
            _ => {}
        }
        let mut out = Self { conv_channels: Vec::new(), dense: Vec::new() };
        let bad = || Error::Parse(format!("backbone `{s}` is not a preset or conv=..;dense=.."));
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            let list: Vec<usize> = if v.trim().is_empty() {
                Vec::new()
            } else {
                v.split(',').map(|c| c.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
            };
            match k.trim() {
                "conv" => out.conv_channels = list,
                "dense" => out.dense = list,
                _ => return Err(bad()),
            }
        }
        if out.conv_channels.iter().chain(&out.dense).any(|&c| c == 0) {
            return Err(bad());
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub shape: ImageShape,
    pub known: usize,
    pub unknown: usize,
    pub backbone: Backbone,
}

impl ClassifierSpec {
    pub fn outputs(&self) -> usize {
        self.known + self.unknown
    }

    fn validate(&self) -> Result<()> {
        if self.known < 2 {
            return Err(Error::invalid(format!("need at least 2 known classes, got {}", self.known)));
        }
        let blocks = self.backbone.conv_channels.len() as u32;
        let div = 2usize.pow(blocks);
        let s = self.shape;
        if s.numel() == 0 || s.height % div != 0 || s.width % div != 0 || s.height / div == 0 {
            return Err(Error::invalid(format!(
                "shape {s} is not divisible by 2^{blocks} for backbone {}",
                self.backbone
            )));
        }
        Ok(())
    }

    fn flat_features(&self) -> usize {
        let div = 2usize.pow(self.backbone.conv_channels.len() as u32);
        let c = self.backbone.conv_channels.last().copied().unwrap_or(self.shape.channels);
        c * (self.shape.height / div) * (self.shape.width / div)
    }
}

/// Teacher or student: a backbone followed by a known-class head and an
/// optional unknown-class head whose logits are appended after the known ones.
#[derive(Clone, Debug)]
pub struct ClassifierNet<T> {
    pub spec: ClassifierSpec,
    pub params: ParamSet<T>,
}

/// Standard deviation of freshly initialized unknown-head weights.
pub const UNKNOWN_INIT_STD: f64 = 1e-3;

/// Builds a classifier with `C + U` output logits.
///
/// The unknown head (if `U > 0`) starts from `N(0, 1e-3^2)` weights and zero bias.
pub fn build_classifier<T: Float>(spec: ClassifierSpec, rng: &mut Rng) -> Result<ClassifierNet<T>> {
    spec.validate()?;
    let mut params = ParamSet::new();
    let mut cin = spec.shape.channels;
    for (i, &c) in spec.backbone.conv_channels.iter().enumerate() {
        let fan = cin * 9;
        params.add(format!("conv{i}.w"), uniform_fan_in(&[c, cin, 3, 3], fan, rng));
        params.add(format!("conv{i}.b"), uniform_fan_in(&[c], fan, rng));
        cin = c;
    }
    let mut width = spec.flat_features();
    for (i, &h) in spec.backbone.dense.iter().enumerate() {
        params.add(format!("dense{i}.w"), uniform_fan_in(&[h, width], width, rng));
        params.add(format!("dense{i}.b"), uniform_fan_in(&[h], width, rng));
        width = h;
    }
    params.add("known.w", uniform_fan_in(&[spec.known, width], width, rng));
    params.add("known.b", uniform_fan_in(&[spec.known], width, rng));
    let mut net = ClassifierNet { spec, params };
    if net.spec.unknown > 0 {
        let u = net.spec.unknown;
        net.spec.unknown = 0;
        net = net.with_unknown_head(u, UNKNOWN_INIT_STD, false, rng)?;
    }
    Ok(net)
}

impl<T: Float> ClassifierNet<T> {
    fn head_width(&self) -> usize {
        self.spec.backbone.dense.last().copied().unwrap_or_else(|| self.spec.flat_features())
    }

    /// Appends `unknown` output units with `N(0, std^2)` weights and zero bias.
    ///
    /// Known-class parameters are carried over untouched.
    pub fn with_unknown_head(&self, unknown: usize, std: f64, frozen: bool, rng: &mut Rng) -> Result<Self> {
        if unknown == 0 {
            return Err(Error::invalid("unknown head needs at least one unit"));
        }
        if self.spec.unknown != 0 {
            return Err(Error::invalid("classifier already has an unknown head"));
        }
        let width = self.head_width();
        let mut params = self.params.clone();
        let w = normal(&[unknown, width], std, rng);
        let b = Tensor::zeros([unknown]);
        if frozen {
            params.add_frozen("unknown.w", w);
            params.add_frozen("unknown.b", b);
        } else {
            params.add("unknown.w", w);
            params.add("unknown.b", b);
        }
        let spec = ClassifierSpec { unknown, ..self.spec.clone() };
        Ok(Self { spec, params })
    }

    /// Wraps loaded parameters after checking names and shapes against `spec`.
    pub fn from_params(spec: ClassifierSpec, params: ParamSet<T>) -> Result<Self> {
        let template = build_classifier::<T>(spec.clone(), &mut crate::rng::rng_from_seed(0))?;
        check_layout(&template.params, &params)?;
        Ok(Self { spec, params })
    }

    pub fn num_outputs(&self) -> usize {
        self.spec.outputs()
    }

    /// Logits `[N, C + U]` for an `[N, C, H, W]` input node.
    pub fn forward(&self, g: &Graph<T>, x: Var, track: bool) -> (Var, Bound) {
        let bound = self.params.bind(g, track);
        (self.apply(g, x, &bound), bound)
    }

    /// Like [`ClassifierNet::forward`] but reuses parameters already bound into `g`,
    /// so several passes share one set of gradient slots.
    pub fn apply(&self, g: &Graph<T>, x: Var, bound: &Bound) -> Var {
        let p = |i: usize| bound.var(ParamId(i));
        let mut h = x;
        let mut i = 0;
        for _ in &self.spec.backbone.conv_channels {
            h = g.conv2d(h, p(i), Some(p(i + 1)), 1, 1);
            h = g.relu(h);
            h = g.max_pool2d(h, 2);
            i += 2;
        }
        h = g.flatten(h);
        for _ in &self.spec.backbone.dense {
            h = g.linear(h, p(i), Some(p(i + 1)));
            h = g.relu(h);
            i += 2;
        }
        let known = g.linear(h, p(i), Some(p(i + 1)));
        if self.spec.unknown > 0 {
            let unknown = g.linear(h, p(i + 2), Some(p(i + 3)));
            g.concat_cols(known, unknown)
        } else {
            known
        }
    }

    /// Logits for a batch without recording gradients. An empty batch gives `[0, C + U]`.
    pub fn forward_logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.spec.shape;
        if batch.shape().len() != 4 || batch.shape()[1..] != [s.channels, s.height, s.width] {
            return Err(Error::invalid(format!("batch shape {:?} does not match {s}", batch.shape())));
        }
        let n = batch.rows();
        let mut out = Vec::with_capacity(n * self.num_outputs());
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(INFERENCE_CHUNK) {
            let g = Graph::new();
            let x = g.constant(batch.gather_rows(chunk));
            let (logits, _) = self.forward(&g, x, false);
            out.extend_from_slice(g.value(logits).data());
        }
        Ok(Tensor::new([n, self.num_outputs()], out))
    }

    pub fn save(&self, path: &Path, fingerprint: &str, step: u64) -> Result<()> {
        save_checkpoint(
            path,
            &Checkpoint {
                kind: "classifier".into(),
                meta: serde_json::to_string(&self.spec)?,
                fingerprint: fingerprint.to_owned(),
                step,
                params: self.params.clone(),
            },
        )
    }

    /// Loads a classifier; `fingerprint` (if given) must match the stored one.
    pub fn load(path: &Path, fingerprint: Option<&str>) -> Result<(Self, u64)> {
        let ck = load_checkpoint::<T>(path, fingerprint)?;
        if ck.kind != "classifier" {
            return Err(Error::Parse(format!("{} holds a {}, not a classifier", path.display(), ck.kind)));
        }
        let spec: ClassifierSpec = serde_json::from_str(&ck.meta)?;
        Ok((Self::from_params(spec, ck.params)?, ck.step))
    }
}

pub(crate) fn check_layout<T: Float>(expected: &ParamSet<T>, got: &ParamSet<T>) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Parse(format!("expected {} tensors, found {}", expected.len(), got.len())));
    }
    for (e, g) in expected.iter().zip(got.iter()) {
        if e.name != g.name || e.value.shape() != g.value.shape() {
            return Err(Error::Parse(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                g.name,
                g.value.shape(),
                e.name,
                e.value.shape()
            )));
        }
    }
    Ok(())
}
