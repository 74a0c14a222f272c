//! Teacher pretraining, teacher augmentation and soft-target distillation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::datasets::{EpochSampler, KnownSet};
use crate::error::{Error, Result};
use crate::networks::ClassifierNet;
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::tensor::{softmax_rows, Float, Tensor};

/// Probabilities are floored here before every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default scale of the appended teacher unknown weights.
pub const DEFAULT_EPS_SCALE: f64 = 1e-3;

/// A softmax posterior split into `C` known and `U` unknown slots.
#[derive(Clone, Debug, PartialEq)]
pub struct JointProbabilityVector {
    pub known: Vec<f64>,
    pub unknown: Vec<f64>,
    pub temperature: f64,
}

impl JointProbabilityVector {
    pub fn total(&self) -> f64 {
        self.known.iter().chain(&self.unknown).sum()
    }

    pub fn max_known(&self) -> f64 {
        self.known.iter().cloned().fold(0.0, f64::max)
    }

    /// Lowest index among the largest known probabilities.
    pub fn argmax_known(&self) -> usize {
        argmax(&self.known)
    }

    pub fn unknown_mass(&self) -> f64 {
        self.unknown.iter().sum()
    }

    /// Known slots followed by unknown slots.
    pub fn to_vec(&self) -> Vec<f64> {
        self.known.iter().chain(&self.unknown).copied().collect()
    }
}

/// Lowest index of the maximum; `0` for an empty slice.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax of `logits / tau` over all `C + U` slots, the first `known` of
/// which are the known classes.
pub fn temperature_scaled_probs(logits: &[f64], known: usize, tau: f64) -> Result<JointProbabilityVector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if known > logits.len() || logits.is_empty() {
        return Err(Error::invalid(format!("{known} known slots in a {}-logit vector", logits.len())));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("logits must be finite"));
    }
    let mut p = softmax_rows(logits, logits.len(), tau);
    let unknown = p.split_off(known);
    Ok(JointProbabilityVector { known: p, unknown, temperature: tau })
}

/// [`temperature_scaled_probs`] for every row of a `[N, C + U]` logit matrix.
pub fn joint_probs_batch<T: Float>(logits: &Tensor<T>, known: usize, tau: f64) -> Result<Vec<JointProbabilityVector>> {
    let width = logits.row_len();
    let flat = logits.to_f64_vec();
    if width == 0 {
        return Ok(Vec::new());
    }
    flat.chunks(width).map(|row| temperature_scaled_probs(row, known, tau)).collect()
}

/// `H(q, p) = -sum q ln max(p, floor)`.
pub fn cross_entropy(target: &[f64], probs: &[f64]) -> f64 {
    -target.iter().zip(probs).map(|(&q, &p)| if q == 0.0 { 0.0 } else { q * p.max(PROB_FLOOR).ln() }).sum::<f64>()
}

/// Mean cross-entropy of student against teacher soft targets.
pub fn kd_loss(teacher: &[JointProbabilityVector], student: &[JointProbabilityVector]) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::invalid(format!("{} teacher rows vs {} student rows", teacher.len(), student.len())));
    }
    if teacher.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (q, p) in teacher.iter().zip(student) {
        if q.known.len() != p.known.len() || q.unknown.len() != p.unknown.len() {
            return Err(Error::invalid("teacher and student vectors differ in layout"));
        }
        sum += cross_entropy(&q.to_vec(), &p.to_vec());
    }
    Ok(sum / teacher.len() as f64)
}

/// Graph node for `sum_i w_i H(targets_i, softmax(logits_i / tau))` with the
/// probability floor applied before the logarithm.
pub fn soft_cross_entropy<T: Float>(
    g: &Graph<T>,
    logits: Var,
    tau: f64,
    targets: &Tensor<T>,
    row_weights: &[f64],
) -> Var {
    let shape = g.shape(logits);
    assert_eq!(targets.shape(), &shape[..], "targets must match logits");
    assert_eq!(row_weights.len(), shape[0], "one weight per row");
    let k = shape[1];
    let p = g.softmax(logits, tau);
    let logp = g.log_clamped(p, PROB_FLOOR);
    let w: Vec<T> = targets
        .data()
        .iter()
        .enumerate()
        .map(|(i, &q)| T::from_f64_lossy(-row_weights[i / k]) * q)
        .collect();
    g.weighted_sum(logp, Tensor::new(shape, w))
}

/// Graph node for the distillation loss of a batch against fixed teacher targets.
pub fn kd_loss_graph<T: Float>(g: &Graph<T>, student_logits: Var, teacher_targets: &Tensor<T>, tau: f64) -> Var {
    let n = g.shape(student_logits)[0];
    let w = vec![1.0 / n.max(1) as f64; n];
    soft_cross_entropy(g, student_logits, tau, teacher_targets, &w)
}

/// Row-wise softmax of a logit matrix at `tau`, as a tensor of the same shape.
pub fn soft_targets<T: Float>(logits: &Tensor<T>, tau: f64) -> Tensor<T> {
    let p = softmax_rows(&logits.to_f64_vec(), logits.row_len().max(1), tau);
    Tensor::from_f64(logits.shape(), &p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillationConfig {
    pub temperature: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        Self { temperature: 5.0, adam: AdamConfig::default(), epochs: 10, batch_size: 128 }
    }
}

impl DistillationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of [`pretrain_teacher`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub steps: usize,
    /// Cross-entropy over the whole training set before any update.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Mean hard-label cross-entropy and accuracy of a C-way classifier on a set.
pub fn evaluate_hard_labels(net: &ClassifierNet<f32>, data: &KnownSet) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let c = net.spec.known;
    let logits = net.forward_logits(&data.images)?;
    let (mut loss, mut correct) = (0.0, 0usize);
    for (row, &y) in logits.to_f64_vec().chunks(net.num_outputs()).zip(&data.labels) {
        let p = softmax_rows(&row[..c], c, 1.0);
        loss -= p[y].max(PROB_FLOOR).ln();
        correct += usize::from(argmax(&p) == y);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains a classifier without unknown slots by hard-label cross-entropy.
///
/// Writes `step,loss,accuracy` rows (batch values) to `log` when given.
pub fn pretrain_teacher(
    teacher: &mut ClassifierNet<f32>,
    data: &KnownSet,
    config: &DistillationConfig,
    rng: &mut Rng,
    mut log: Option<&mut dyn Write>,
) -> Result<TeacherSummary> {
    config.validate()?;
    if teacher.spec.unknown != 0 {
        return Err(Error::invalid("teacher must be pretrained before unknown slots are appended"));
    }
    if data.is_empty() {
        return Err(Error::invalid("teacher training set is empty"));
    }
    if let Some(bad) = data.labels.iter().find(|&&l| l >= teacher.spec.known) {
        return Err(Error::invalid(format!("label {bad} outside the {} known classes", teacher.spec.known)));
    }
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "step,loss,accuracy")?;
    }
    crate::tensor::flush_subnormals();
    let (initial_loss, _) = evaluate_hard_labels(teacher, data)?;
    let mut adam = Adam::new(config.adam);
    let mut sampler = EpochSampler::new(data.len());
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    for step in 0..total {
        let idx = sampler.next_batch(config.batch_size, rng);
        let (x, y) = data.batch(&idx);
        let g = Graph::new();
        let xv = g.constant(x);
        let (logits, bound) = teacher.forward(&g, xv, true);
        let lv = g.value(logits);
        let k = lv.row_len();
        let mut onehot = vec![0.0; idx.len() * k];
        let mut correct = 0;
        for (i, &yi) in y.iter().enumerate() {
            onehot[i * k + yi] = 1.0;
            let row: Vec<f64> = lv.row(i).iter().map(|&v| f64::from(v)).collect();
            correct += usize::from(argmax(&row) == yi);
        }
        let targets = Tensor::from_f64([idx.len(), k], &onehot);
        let loss = kd_loss_graph(&g, logits, &targets, 1.0);
        let lval = f64::from(g.value(loss).data()[0]);
        if !lval.is_finite() {
            return Err(Error::diverged("teacher", step, format!("loss {lval}")));
        }
        let mut grads = g.backward(loss);
        let grads = bound.collect(&mut grads);
        adam.step(&mut teacher.params, &grads)
            .map_err(|_| Error::diverged("teacher", step, "non-finite gradient"))?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{step},{lval},{}", correct as f64 / idx.len() as f64)?;
        }
    }
    let (final_loss, train_accuracy) = evaluate_hard_labels(teacher, data)?;
    if !final_loss.is_finite() {
        return Err(Error::diverged("teacher", total, "final loss is not finite"));
    }
    Ok(TeacherSummary { steps: total, initial_loss, final_loss, train_accuracy })
}

/// Appends `unknown` frozen output units with `N(0, eps_scale^2)` weights and
/// zero bias; known-class parameters are not touched.
pub fn augment_teacher(
    teacher: &ClassifierNet<f32>,
    unknown: usize,
    eps_scale: f64,
    rng: &mut Rng,
) -> Result<ClassifierNet<f32>> {
    if !(eps_scale >= 0.0) {
        return Err(Error::invalid(format!("eps_scale must be non-negative, got {eps_scale}")));
    }
    teacher.with_unknown_head(unknown, eps_scale, true, rng)
}

/// One Adam update of the student towards the teacher's soft targets at the
/// configured temperature. Returns the batch loss, or `None` for an empty batch.
pub fn distill_step(
    student: &mut ClassifierNet<f32>,
    adam: &mut Adam<f32>,
    teacher: &ClassifierNet<f32>,
    batch: &Tensor<f32>,
    config: &DistillationConfig,
) -> Result<Option<f64>> {
    if batch.rows() == 0 {
        return Ok(None);
    }
    if teacher.num_outputs() != student.num_outputs() || teacher.spec.known != student.spec.known {
        return Err(Error::invalid("teacher and student output layouts differ"));
    }
    crate::tensor::flush_subnormals();
    let step = adam.steps() as usize;
    let targets = soft_targets(&teacher.forward_logits(batch)?, config.temperature);
    let g = Graph::new();
    let x = g.constant(batch.clone());
    let (logits, bound) = student.forward(&g, x, true);
    let loss = kd_loss_graph(&g, logits, &targets, config.temperature);
    let lval = f64::from(g.value(loss).data()[0]);
    if !lval.is_finite() {
        return Err(Error::diverged("distillation", step, format!("loss {lval}")));
    }
    let mut grads = g.backward(loss);
    let grads = bound.collect(&mut grads);
    adam.step(&mut student.params, &grads)
        .map_err(|_| Error::diverged("distillation", step, "non-finite gradient"))?;
    Ok(Some(lval))
}
