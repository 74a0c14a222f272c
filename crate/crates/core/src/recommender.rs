//! Conditional GAN that proposes unknown-like samples, the confidence filter
//! deciding which of them the student learns, and the alternating loop.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::datasets::{EpochSampler, KnownSet};
use crate::distillation::{
    cross_entropy, soft_cross_entropy, soft_targets, DistillationConfig, JointProbabilityVector, PROB_FLOOR,
};
use crate::error::{Error, Result};
use crate::networks::{ClassifierNet, DiscriminatorNet, GeneratorNet};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::stats::nearest_rank_lower;
use crate::tensor::{softmax_rows, Float, Tensor};

/// One-hot selector over the `U` synthetic unknown classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConditionVector {
    index: usize,
    dim: usize,
}

impl ConditionVector {
    pub fn new(index: usize, dim: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::invalid(format!("condition {index} out of range for U = {dim}")));
        }
        Ok(Self { index, dim })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.index] = 1.0;
        v
    }

    /// Target over all `known + U` slots: zero on known slots, the one-hot on unknown slots.
    pub fn target(&self, known: usize) -> Vec<f64> {
        let mut v = vec![0.0; known + self.dim];
        v[known + self.index] = 1.0;
        v
    }
}

/// `batch` conditions drawn uniformly from the `u` one-hot vectors.
pub fn sample_conditions(batch: usize, u: usize, rng: &mut Rng) -> Result<Vec<ConditionVector>> {
    if u == 0 {
        return Err(Error::invalid("need at least one synthetic unknown class"));
    }
    Ok((0..batch).map(|_| ConditionVector { index: rng.random_range(0..u), dim: u }).collect())
}

/// Stacks conditions into an `[N, U]` one-hot matrix.
pub fn conditions_tensor<T: Float>(cvs: &[ConditionVector], u: usize) -> Tensor<T> {
    let mut d = vec![T::zero(); cvs.len() * u];
    for (i, cv) in cvs.iter().enumerate() {
        d[i * u + cv.index] = T::one();
    }
    Tensor::new([cvs.len(), u], d)
}

/// Stacks `[0, cv]` targets into an `[N, known + U]` matrix.
pub fn unknown_targets<T: Float>(cvs: &[ConditionVector], known: usize, u: usize) -> Tensor<T> {
    let w = known + u;
    let mut d = vec![T::zero(); cvs.len() * w];
    for (i, cv) in cvs.iter().enumerate() {
        d[i * w + known + cv.index] = T::one();
    }
    Tensor::new([cvs.len(), w], d)
}

/// Standard normal noise `[n, dim]`.
pub fn sample_noise(n: usize, dim: usize, rng: &mut Rng) -> Tensor<f32> {
    Tensor::new([n, dim], (0..n * dim).map(|_| StandardNormal.sample(rng)).collect())
}

fn check_targets(student: &[JointProbabilityVector], cvs: &[ConditionVector]) -> Result<()> {
    if student.len() != cvs.len() {
        return Err(Error::invalid(format!("{} student rows vs {} conditions", student.len(), cvs.len())));
    }
    if let Some((p, cv)) = student.iter().zip(cvs).find(|(p, cv)| p.unknown.len() != cv.dim) {
        return Err(Error::invalid(format!("{} unknown slots vs condition dim {}", p.unknown.len(), cv.dim)));
    }
    Ok(())
}

/// Generator objective (minimized): mean of `ln(1 - D(G(z))) + alpha * H([0, cv], S(G(z)))`.
pub fn generator_loss(
    disc_out: &[f64],
    student: &[JointProbabilityVector],
    cvs: &[ConditionVector],
    alpha: f64,
) -> Result<f64> {
    check_targets(student, cvs)?;
    if disc_out.len() != cvs.len() {
        return Err(Error::invalid("discriminator outputs and conditions differ in length"));
    }
    if cvs.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ((&d, p), cv) in disc_out.iter().zip(student).zip(cvs) {
        sum += (1.0 - d).max(PROB_FLOOR).ln() + alpha * cross_entropy(&cv.target(p.known.len()), &p.to_vec());
    }
    Ok(sum / cvs.len() as f64)
}

/// Discriminator objective (maximized): mean `ln D(x)` over real plus mean `ln(1 - D(G(z)))` over fake.
pub fn discriminator_loss(real_out: &[f64], fake_out: &[f64]) -> Result<f64> {
    if real_out.is_empty() || fake_out.is_empty() {
        return Err(Error::invalid("discriminator objective needs real and fake outputs"));
    }
    let real = real_out.iter().map(|&d| d.max(PROB_FLOOR).ln()).sum::<f64>() / real_out.len() as f64;
    let fake = fake_out.iter().map(|&d| (1.0 - d).max(PROB_FLOOR).ln()).sum::<f64>() / fake_out.len() as f64;
    Ok(real + fake)
}

/// Mean of `H([0, cv_i], S(G(z_i)))` over samples with `mask[i]`; zero when nothing is admitted.
pub fn student_unknown_loss(
    student: &[JointProbabilityVector],
    cvs: &[ConditionVector],
    mask: &[bool],
) -> Result<f64> {
    check_targets(student, cvs)?;
    if mask.len() != cvs.len() {
        return Err(Error::invalid("mask length differs from batch length"));
    }
    let admitted = mask.iter().filter(|&&m| m).count();
    if admitted == 0 {
        return Ok(0.0);
    }
    let sum: f64 = student
        .iter()
        .zip(cvs)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, cv), _)| cross_entropy(&cv.target(p.known.len()), &p.to_vec()))
        .sum();
    Ok(sum / admitted as f64)
}

/// True where the teacher is strictly less confident than `lambda`.
pub fn recommend_filter(teacher_confidence: &[f64], lambda: f64) -> Vec<bool> {
    teacher_confidence.iter().map(|&c| c < lambda).collect()
}

/// Graph form of the negated discriminator objective.
pub fn discriminator_loss_graph<T: Float>(g: &Graph<T>, d_real: Var, d_fake: Var) -> Var {
    let lr = g.log_clamped(d_real, PROB_FLOOR);
    let one_minus = g.affine(d_fake, -1.0, 1.0);
    let lf = g.log_clamped(one_minus, PROB_FLOOR);
    let a = g.mean(lr);
    let b = g.mean(lf);
    let s = g.add(a, b);
    g.scale(s, -1.0)
}

/// Graph form of [`generator_loss`]; `targets` holds the `[0, cv]` rows.
pub fn generator_loss_graph<T: Float>(
    g: &Graph<T>,
    d_fake: Var,
    student_logits: Var,
    targets: &Tensor<T>,
    alpha: f64,
) -> Var {
    let one_minus = g.affine(d_fake, -1.0, 1.0);
    let adv = g.log_clamped(one_minus, PROB_FLOOR);
    let adv = g.mean(adv);
    let n = targets.rows();
    let w = vec![alpha / n.max(1) as f64; n];
    let ce = soft_cross_entropy(g, student_logits, 1.0, targets, &w);
    g.add(adv, ce)
}

/// Adversarial term of the generator update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorObjective {
    /// `ln(1 - D(G(z)))`, minimized.
    #[default]
    Saturating,
    /// `-ln D(G(z))`, minimized; same fixed point, stronger gradient while
    /// the discriminator rejects the samples.
    NonSaturating,
}

/// [`generator_loss_graph`] with a selectable adversarial term.
pub fn generator_objective_graph<T: Float>(
    g: &Graph<T>,
    d_fake: Var,
    student_logits: Var,
    targets: &Tensor<T>,
    alpha: f64,
    objective: GeneratorObjective,
) -> Var {
    match objective {
        GeneratorObjective::Saturating => generator_loss_graph(g, d_fake, student_logits, targets, alpha),
        GeneratorObjective::NonSaturating => {
            let adv = g.log_clamped(d_fake, PROB_FLOOR);
            let adv = g.mean(adv);
            let adv = g.scale(adv, -1.0);
            let n = targets.rows();
            let w = vec![alpha / n.max(1) as f64; n];
            let ce = soft_cross_entropy(g, student_logits, 1.0, targets, &w);
            g.add(adv, ce)
        }
    }
}

/// Graph form of [`student_unknown_loss`].
pub fn student_unknown_loss_graph<T: Float>(
    g: &Graph<T>,
    student_logits: Var,
    targets: &Tensor<T>,
    mask: &[bool],
) -> Var {
    let admitted = mask.iter().filter(|&&m| m).count();
    let w: Vec<f64> =
        mask.iter().map(|&m| if m { 1.0 / admitted as f64 } else { 0.0 }).collect();
    soft_cross_entropy(g, student_logits, 1.0, targets, &w)
}

/// Largest known-class probability of the full `C + U` softmax at temperature 1, per sample.
pub fn teacher_confidence(teacher: &ClassifierNet<f32>, images: &Tensor<f32>) -> Result<Vec<f64>> {
    let logits = teacher.forward_logits(images)?;
    let w = teacher.num_outputs();
    let c = teacher.spec.known;
    let p = softmax_rows(&logits.to_f64_vec(), w, 1.0);
    Ok(p.chunks(w).map(|r| r[..c].iter().cloned().fold(0.0, f64::max)).collect())
}

/// Lower nearest-rank `quantile` of the teacher's training-set confidences.
pub fn calibrate_lambda(teacher: &ClassifierNet<f32>, data: &KnownSet, quantile: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot calibrate lambda on an empty set"));
    }
    nearest_rank_lower(&teacher_confidence(teacher, &data.images)?, quantile)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommenderConfig {
    pub alpha: f64,
    /// Confidence threshold of the filter; `None` admits every generated sample.
    pub lambda: Option<f64>,
    pub lambda_quantile: f64,
    pub batch_size: usize,
    pub generator_objective: GeneratorObjective,
    pub adam_generator: AdamConfig,
    pub adam_discriminator: AdamConfig,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: None,
            lambda_quantile: 0.01,
            batch_size: 128,
            generator_objective: GeneratorObjective::Saturating,
            adam_generator: AdamConfig::GAN,
            adam_discriminator: AdamConfig::GAN,
        }
    }
}

impl RecommenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l <= 1.0) {
                return Err(Error::invalid(format!("lambda must be in (0, 1], got {l}")));
            }
        }
        if !(0.0..1.0).contains(&self.lambda_quantile) {
            return Err(Error::invalid(format!("lambda_quantile must be in [0, 1), got {}", self.lambda_quantile)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Networks trained or consulted by the alternating loop.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    /// Augmented teacher. Without one the student learns known classes from
    /// hard labels and the confidence filter is off.
    pub teacher: Option<ClassifierNet<f32>>,
    pub student: ClassifierNet<f32>,
    pub generator: GeneratorNet<f32>,
    pub discriminator: DiscriminatorNet<f32>,
}

/// Stops early once the mean distillation loss of the latest `window` steps
/// improves on the window before it by less than `min_delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub window: usize,
    pub min_delta: f64,
}

impl Plateau {
    fn reached(&self, kd: &[f64]) -> bool {
        let w = self.window;
        if w == 0 || kd.len() < 2 * w || kd.len() % w != 0 {
            return false;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let n = kd.len();
        mean(&kd[n - 2 * w..n - w]) - mean(&kd[n - w..]) < self.min_delta
    }
}

/// Losses of one alternating iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    /// Negated discriminator objective (the minimized quantity).
    pub d_loss: f64,
    pub g_loss: f64,
    pub kd_loss: f64,
    pub s_loss: f64,
    pub masked_in: f64,
}

pub const STEP_LOG_HEADER: &str = "step,l_d,l_g,l_kd,l_s,masked_in";

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.d_loss, self.g_loss, self.kd_loss, self.s_loss, self.masked_in
        )
    }
}

/// Persistent optimizer state of the alternating loop.
#[derive(Clone, Debug)]
pub struct AlternatingState {
    pub adam_s: Adam<f32>,
    pub adam_g: Adam<f32>,
    pub adam_d: Adam<f32>,
    sampler: EpochSampler,
}

impl AlternatingState {
    pub fn new(data_len: usize, student: AdamConfig, rec: &RecommenderConfig) -> Self {
        Self {
            adam_s: Adam::new(student),
            adam_g: Adam::new(rec.adam_generator),
            adam_d: Adam::new(rec.adam_discriminator),
            sampler: EpochSampler::new(data_len),
        }
    }
}

fn finite(stage: &str, step: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::diverged(stage, step, format!("loss {v}")))
    }
}

fn scalar(g: &Graph<f32>, v: Var) -> f64 {
    f64::from(g.value(v).data()[0])
}

/// One discriminator, generator, student round.
pub fn alternating_step(
    bundle: &mut ModelBundle,
    state: &mut AlternatingState,
    data: &KnownSet,
    distill: &DistillationConfig,
    rec: &RecommenderConfig,
    step: usize,
    rng: &mut Rng,
) -> Result<StepLog> {
    crate::tensor::flush_subnormals();
    let (c, u) = (bundle.student.spec.known, bundle.student.spec.unknown);
    let n = rec.batch_size;
    let ModelBundle { teacher, student, generator, discriminator } = bundle;

    // known batch and its targets
    let idx = state.sampler.next_batch(n, rng);
    let (x_real, labels) = data.batch(&idx);
    let (known_targets, tau) = match teacher.as_ref() {
        Some(t) => (soft_targets(&t.forward_logits(&x_real)?, distill.temperature), distill.temperature),
        None => {
            let w = c + u;
            let mut d = vec![0.0f32; labels.len() * w];
            for (i, &y) in labels.iter().enumerate() {
                d[i * w + y] = 1.0;
            }
            (Tensor::new([labels.len(), w], d), 1.0)
        }
    };

    // prior batch
    let z = sample_noise(n, generator.spec.noise_dim, rng);
    let cvs = sample_conditions(n, u, rng)?;
    let cv = conditions_tensor::<f32>(&cvs, u);
    let targets = unknown_targets::<f32>(&cvs, c, u);

    // discriminator
    let fake = generator.generate(&z, &cv)?;
    let d_loss = {
        let g = Graph::new();
        let bound = discriminator.params.bind(&g, true);
        let xr = g.constant(x_real.clone());
        let xf = g.constant(fake);
        let dr = discriminator.apply(&g, xr, &bound);
        let df = discriminator.apply(&g, xf, &bound);
        let loss = discriminator_loss_graph(&g, dr, df);
        let v = finite("discriminator", step, scalar(&g, loss))?;
        let mut grads = g.backward(loss);
        state
            .adam_d
            .step(&mut discriminator.params, &bound.collect(&mut grads))
            .map_err(|_| Error::diverged("discriminator", step, "non-finite gradient"))?;
        v
    };

    // generator
    let g_loss = {
        let g = Graph::new();
        let zv = g.constant(z.clone());
        let cvv = g.constant(cv.clone());
        let (img, gb) = generator.forward(&g, zv, cvv, true);
        let (d, _) = discriminator.forward(&g, img, false);
        let (logits, _) = student.forward(&g, img, false);
        let loss = generator_objective_graph(&g, d, logits, &targets, rec.alpha, rec.generator_objective);
        let v = finite("generator", step, scalar(&g, loss))?;
        let mut grads = g.backward(loss);
        state
            .adam_g
            .step(&mut generator.params, &gb.collect(&mut grads))
            .map_err(|_| Error::diverged("generator", step, "non-finite gradient"))?;
        v
    };

    // student, on the same prior batch through the updated generator
    let learn_unknown = rec.alpha > 0.0;
    let fake = generator.generate(&z, &cv)?;
    let mask = match (teacher.as_ref(), rec.lambda) {
        (Some(t), Some(lambda)) if learn_unknown => recommend_filter(&teacher_confidence(t, &fake)?, lambda),
        _ => vec![learn_unknown; n],
    };
    let admitted = mask.iter().filter(|&&m| m).count();
    let (kd_loss, s_loss) = {
        let g = Graph::new();
        let bound = student.params.bind(&g, true);
        let xr = g.constant(x_real);
        let lr = student.apply(&g, xr, &bound);
        let kd = crate::distillation::kd_loss_graph(&g, lr, &known_targets, tau);
        let (total, s) = if admitted > 0 {
            let xf = g.constant(fake);
            let lf = student.apply(&g, xf, &bound);
            let s = student_unknown_loss_graph(&g, lf, &targets, &mask);
            (g.add(kd, s), scalar(&g, s))
        } else {
            (kd, 0.0)
        };
        let kd_v = finite("student", step, scalar(&g, kd))?;
        finite("student", step, s)?;
        let mut grads = g.backward(total);
        state
            .adam_s
            .step(&mut student.params, &bound.collect(&mut grads))
            .map_err(|_| Error::diverged("student", step, "non-finite gradient"))?;
        (kd_v, s)
    };

    Ok(StepLog { step, d_loss, g_loss, kd_loss, s_loss, masked_in: admitted as f64 / n as f64 })
}

/// Runs up to `steps` alternating iterations, writing one CSV row per step to `log`.
#[allow(clippy::too_many_arguments)]
pub fn alternating_train(
    bundle: &mut ModelBundle,
    data: &KnownSet,
    distill: &DistillationConfig,
    rec: &RecommenderConfig,
    steps: usize,
    plateau: Option<Plateau>,
    rng: &mut Rng,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<StepLog>> {
    distill.validate()?;
    rec.validate()?;
    check_bundle(bundle, data)?;
    let mut state = AlternatingState::new(data.len(), distill.adam, rec);
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{STEP_LOG_HEADER}")?;
    }
    let mut out = Vec::with_capacity(steps);
    let mut kd = Vec::with_capacity(steps);
    for step in 0..steps {
        let entry = alternating_step(bundle, &mut state, data, distill, rec, step, rng)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", entry.csv_row())?;
        }
        kd.push(entry.kd_loss);
        out.push(entry);
        if plateau.is_some_and(|p| p.reached(&kd)) {
            break;
        }
    }
    Ok(out)
}

fn check_bundle(bundle: &ModelBundle, data: &KnownSet) -> Result<()> {
    let s = &bundle.student.spec;
    if data.is_empty() {
        return Err(Error::invalid("known training set is empty"));
    }
    if s.unknown == 0 {
        return Err(Error::invalid("student needs unknown slots"));
    }
    if data.classes != s.known {
        return Err(Error::invalid(format!("{} known classes in data, {} in the student", data.classes, s.known)));
    }
    if bundle.generator.spec.conditions != s.unknown || bundle.generator.spec.shape != s.shape {
        return Err(Error::invalid("generator does not match the student's unknown slots or image shape"));
    }
    if bundle.discriminator.spec.shape != s.shape {
        return Err(Error::invalid("discriminator image shape differs from the student's"));
    }
    if let Some(t) = &bundle.teacher {
        if t.num_outputs() != bundle.student.num_outputs() || t.spec.known != s.known {
            return Err(Error::invalid("teacher must be augmented to the student's output layout"));
        }
    }
    Ok(())
}

/// `U x per_class` generated images, row `k` with condition `k`; column `j`
/// shares one noise vector across rows.
pub fn sample_grid(generator: &GeneratorNet<f32>, per_class: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    let u = generator.spec.conditions;
    let col_noise = sample_noise(per_class, generator.spec.noise_dim, rng);
    let idx: Vec<usize> = (0..u).flat_map(|_| 0..per_class).collect();
    let z = col_noise.gather_rows(&idx);
    let cvs: Vec<ConditionVector> =
        (0..u).flat_map(|k| (0..per_class).map(move |_| ConditionVector { index: k, dim: u })).collect();
    generator.generate(&z, &conditions_tensor(&cvs, u))
}

/// Mean distance between row means, and mean pairwise distance within rows,
/// of a grid laid out as by [`sample_grid`].
pub fn grid_diversity(grid: &Tensor<f32>, rows: usize) -> (f64, f64) {
    let per = grid.rows() / rows.max(1);
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let cells: Vec<Vec<f64>> =
        (0..grid.rows()).map(|i| grid.row(i).iter().map(|&v| f64::from(v)).collect()).collect();
    let means: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            let mut m = vec![0.0; grid.row_len()];
            for cell in &cells[r * per..(r + 1) * per] {
                for (a, b) in m.iter_mut().zip(cell) {
                    *a += b / per as f64;
                }
            }
            m
        })
        .collect();
    let pair_mean = |items: &[Vec<f64>]| {
        let (mut s, mut k) = (0.0, 0usize);
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                s += dist(&items[i], &items[j]);
                k += 1;
            }
        }
        if k == 0 { 0.0 } else { s / k as f64 }
    };
    let between = pair_mean(&means);
    let within = (0..rows).map(|r| pair_mean(&cells[r * per..(r + 1) * per])).sum::<f64>() / rows.max(1) as f64;
    (between, within)
}

/// Writes a grid of `rows` image rows as a PNG with one-pixel gutters.
pub fn write_grid_png(grid: &Tensor<f32>, rows: usize, path: &Path) -> Result<()> {
    let s = grid.shape();
    if s.len() != 4 || rows == 0 || s[0] % rows != 0 || !(s[1] == 1 || s[1] == 3) {
        return Err(Error::invalid(format!("cannot lay out {s:?} as {rows} rows")));
    }
    let (ch, h, w) = (s[1], s[2], s[3]);
    let cols = s[0] / rows;
    let (gw, gh) = ((cols * (w + 1) + 1) as u32, (rows * (h + 1) + 1) as u32);
    let mut img = image::RgbImage::new(gw, gh);
    for (i, cell) in (0..s[0]).map(|i| (i, grid.row(i))) {
        let (r, c) = (i / cols, i % cols);
        for y in 0..h {
            for x in 0..w {
                let px = |k: usize| (cell[k * h * w + y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                let rgb = if ch == 1 { [px(0); 3] } else { [px(0), px(1), px(2)] };
                img.put_pixel((c * (w + 1) + 1 + x) as u32, (r * (h + 1) + 1 + y) as u32, image::Rgb(rgb));
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path)?;
    Ok(())
}

/// Generates and writes a `U x per_class` sample grid; returns the raw grid.
pub fn emit_sample_grid(
    generator: &GeneratorNet<f32>,
    per_class: usize,
    path: &Path,
    rng: &mut Rng,
) -> Result<Tensor<f32>> {
    if per_class == 0 {
        return Err(Error::invalid("per_class must be at least 1"));
    }
    let grid = sample_grid(generator, per_class, rng)?;
    write_grid_png(&grid, generator.spec.conditions, path)?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distillation::temperature_scaled_probs;
    use crate::rng::rng_from_seed;

    fn jpv(known: &[f64], unknown: &[f64]) -> JointProbabilityVector {
        JointProbabilityVector { known: known.to_vec(), unknown: unknown.to_vec(), temperature: 1.0 }
    }

    #[test]
    fn condition_frequencies() {
        let mut rng = rng_from_seed(42);
        let cvs = sample_conditions(10_000, 10, &mut rng).unwrap();
        let mut counts = [0usize; 10];
        for cv in &cvs {
            counts[cv.index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 100.0 - 10.0).abs() <= 0.6, "{counts:?}");
        }
        assert_eq!(sample_conditions(1, 1, &mut rng).unwrap()[0].one_hot(), vec![1.0]);
        let a = sample_conditions(50, 7, &mut rng_from_seed(3)).unwrap();
        let b = sample_conditions(50, 7, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        assert!(sample_conditions(3, 0, &mut rng).is_err());
    }

    #[test]
    fn discriminator_examples() {
        let coin = discriminator_loss(&[0.5, 0.5], &[0.5]).unwrap();
        assert!((coin - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(discriminator_loss(&[1.0 - 1e-9], &[1e-9]).unwrap().abs() < 1e-8);
        let v = discriminator_loss(&[0.8], &[0.3]).unwrap();
        assert!((v - (0.8f64.ln() + 0.7f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn generator_examples() {
        let cv = [ConditionVector::new(1, 2).unwrap(), ConditionVector::new(0, 2).unwrap()];
        let perfect = [jpv(&[0.0], &[0.0, 1.0]), jpv(&[0.0], &[1.0, 0.0])];
        let v = generator_loss(&[1.0, 1.0], &perfect, &cv, 0.5).unwrap();
        assert!((v - PROB_FLOOR.ln()).abs() < 1e-9);

        let s = [jpv(&[0.5], &[0.25, 0.25]), jpv(&[0.2], &[0.4, 0.4])];
        let adv = (0.5f64.ln() + 0.75f64.ln()) / 2.0;
        assert!((generator_loss(&[0.5, 0.25], &s, &cv, 0.0).unwrap() - adv).abs() < 1e-12);
        let ce = (-(0.25f64).ln() - 0.4f64.ln()) / 2.0;
        assert!((generator_loss(&[0.5, 0.25], &s, &cv, 0.5).unwrap() - (adv + 0.5 * ce)).abs() < 1e-12);
    }

    #[test]
    fn student_examples() {
        let cv = [ConditionVector::new(0, 2).unwrap(), ConditionVector::new(1, 2).unwrap()];
        let s = [jpv(&[0.0], &[1.0, 0.0]), jpv(&[0.3], &[0.2, 0.5])];
        assert_eq!(student_unknown_loss(&s[..1], &cv[..1], &[true]).unwrap(), 0.0);
        assert_eq!(student_unknown_loss(&s, &cv, &[false, false]).unwrap(), 0.0);
        assert!((student_unknown_loss(&s, &cv, &[false, true]).unwrap() + 0.5f64.ln()).abs() < 1e-12);
        assert!(student_unknown_loss(&s, &cv, &[true]).is_err());
    }

    #[test]
    fn filter_is_strict() {
        assert_eq!(recommend_filter(&[0.3, 0.9, 0.5], 0.5), vec![true, false, false]);
    }

    #[test]
    fn graph_losses_match_closed_forms() {
        let g = Graph::<f64>::new();
        let cvs = [ConditionVector::new(2, 3).unwrap(), ConditionVector::new(0, 3).unwrap()];
        let logits = [0.3, -1.0, 2.0, 0.1, 0.7, 1.5, -0.2, 0.0, 0.4, 1.1];
        let lv = g.constant(Tensor::from_f64([2, 5], &logits));
        let d = g.constant(Tensor::from_f64([2, 1], &[0.7, 0.2]));
        let targets = unknown_targets::<f64>(&cvs, 2, 3);
        let probs: Vec<_> = logits.chunks(5).map(|r| temperature_scaled_probs(r, 2, 1.0).unwrap()).collect();
        let gl = generator_loss_graph(&g, d, lv, &targets, 0.5);
        let want = generator_loss(&[0.7, 0.2], &probs, &cvs, 0.5).unwrap();
        assert!((g.value(gl).data()[0] - want).abs() < 1e-12);

        let sl = student_unknown_loss_graph(&g, lv, &targets, &[true, false]);
        let want = student_unknown_loss(&probs, &cvs, &[true, false]).unwrap();
        assert!((g.value(sl).data()[0] - want).abs() < 1e-12);

        let r = g.constant(Tensor::from_f64([3, 1], &[0.9, 0.6, 0.99]));
        let dl = discriminator_loss_graph(&g, r, d);
        let want = discriminator_loss(&[0.9, 0.6, 0.99], &[0.7, 0.2]).unwrap();
        assert!((g.value(dl).data()[0] + want).abs() < 1e-12);
    }

    #[test]
    fn plateau_detection() {
        let p = Plateau { window: 2, min_delta: 0.1 };
        assert!(!p.reached(&[3.0, 3.0, 2.0]));
        assert!(!p.reached(&[3.0, 3.0, 2.0, 2.0]));
        assert!(p.reached(&[3.0, 3.0, 2.95, 2.95]));
    }
}
