//! Experiment configuration, the end-to-end training pipeline and the
//! commands behind the `openset-kd` binary.
//!
//! An experiment directory holds:
//!
//! ```text
//! config.toml                      echo of the effective configuration
//! split.txt                        open-set split manifest
//! checkpoints/teacher.ckpt         pretrained C-way teacher
//! checkpoints/<V>/*.ckpt           student, generator, discriminator of variant V
//! checkpoints/<V>/train.json       training summary (lambda, steps, final losses)
//! logs/teacher.csv, logs/train-<V>.csv, logs/grid-*.csv
//! thresholds-<V>.json              calibrated thresholds
//! reports/                         evaluation, sweep, grid and histogram outputs
//! grids/<V>.png                    generated sample grids
//! ```

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::ExperimentConfig;

use crate::datasets::{
    load_dataset, make_open_set_split, to_batch, DatasetHandle, KnownSet, Label, LabeledImage, OpenSetSplit,
    Partition,
};
use crate::distillation::{augment_teacher, distill_step, pretrain_teacher, DistillationConfig, TeacherSummary};
use crate::error::{Error, Result};
use crate::evaluation::{
    emit_unknown_probability_histogram, evaluate_pool, run_openness_sweep, run_sensitivity_grid, AblationVariant,
    EvaluationReport, ScoredPool, SensitivityGrid, Strategy, SweepResult, TestPool, VariantModels,
};
use crate::inference::InferenceThresholds;
use crate::networks::{
    build_classifier, build_discriminator, build_generator, ClassifierNet, ClassifierSpec, DiscriminatorNet,
    DiscriminatorSpec, GeneratorNet, GeneratorSpec,
};
use crate::optim::{Adam, AdamConfig};
use crate::recommender::{
    alternating_train, calibrate_lambda, emit_sample_grid, ModelBundle, Plateau, RecommenderConfig, StepLog,
    STEP_LOG_HEADER,
};
use crate::rng::{component_rng, derive_seed};

/// Training and test data of one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub split: OpenSetSplit,
    pub train: KnownSet,
    pub test: TestPool,
}

fn cap_per_class(samples: Vec<LabeledImage>, cap: usize) -> Vec<LabeledImage> {
    if cap == 0 {
        return samples;
    }
    let mut seen = std::collections::HashMap::new();
    samples
        .into_iter()
        .filter(|s| {
            let n = seen.entry(s.label).or_insert(0usize);
            *n += 1;
            *n <= cap
        })
        .collect()
}

fn stack(shape: crate::datasets::ImageShape, samples: &[LabeledImage]) -> crate::tensor::Tensor<f32> {
    let refs: Vec<&LabeledImage> = samples.iter().collect();
    to_batch(shape, &refs)
}

/// Open-set split of `handle` described by the config.
pub fn split_for(config: &ExperimentConfig, handle: &DatasetHandle) -> Result<OpenSetSplit> {
    let ids = handle.class_ids();
    let split = if config.known_classes.is_empty() {
        make_open_set_split(&ids, config.num_known, config.split_seed)?
    } else {
        if let Some(c) = config.known_classes.iter().find(|c| !ids.contains(c)) {
            return Err(Error::invalid(format!("known class {c} does not occur in {}", handle.name)));
        }
        let unknown = ids.iter().copied().filter(|c| !config.known_classes.contains(c)).collect();
        OpenSetSplit::from_ids("", config.known_classes.clone(), unknown, config.split_seed)?
    };
    Ok(split.with_dataset(&config.dataset))
}

/// Loads the datasets named by the config and builds the split, the known
/// training set and the test pool.
pub fn load_experiment_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    let handle = load_dataset(&config.dataset, &config.data_root)?;
    let split = split_for(config, &handle)?;
    let train = cap_per_class(handle.select(Partition::Train, &split.known_class_ids), config.max_train_per_class);
    let train = KnownSet::from_samples(handle.shape, &train, &split)?;
    let known_test = cap_per_class(handle.select(Partition::Test, &split.known_class_ids), config.max_test_per_class);
    let known = KnownSet::from_samples(handle.shape, &known_test, &split)?;
    let unknown = if config.unknown_dataset.is_empty() {
        handle.select(Partition::Test, &split.unknown_class_ids)
    } else {
        let other = load_dataset(&config.unknown_dataset, &config.data_root)?;
        if other.shape != handle.shape {
            return Err(Error::invalid(format!(
                "unknown dataset {} has shape {}, expected {}",
                other.name, other.shape, handle.shape
            )));
        }
        other.test
    };
    let unknown = cap_per_class(unknown, config.max_test_per_class);
    if unknown.is_empty() {
        return Err(Error::invalid("the unknown test pool is empty"));
    }
    let unknown_classes = unknown
        .iter()
        .map(|s| match s.label {
            Label::Class(c) => Some(c),
            Label::Unknown => None,
        })
        .collect();
    let test = TestPool { known, unknown_images: stack(handle.shape, &unknown), unknown_classes };
    Ok(ExperimentData { split, train, test })
}

/// Unknown class ids available to openness sweeps.
pub fn sweep_pool(data: &ExperimentData) -> Vec<usize> {
    let mut ids: Vec<usize> = data.test.unknown_classes.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn adam(config: &ExperimentConfig) -> AdamConfig {
    AdamConfig { lr: config.lr, ..AdamConfig::default() }
}

fn gan_adam(config: &ExperimentConfig) -> AdamConfig {
    AdamConfig { lr: config.lr, beta1: config.gan_beta1, ..AdamConfig::GAN }
}

fn distillation_config(config: &ExperimentConfig) -> DistillationConfig {
    DistillationConfig {
        temperature: config.temperature,
        adam: adam(config),
        epochs: config.teacher_epochs,
        batch_size: config.batch_size,
    }
}

fn classifier_spec(config: &ExperimentConfig, data: &KnownSet, unknown: usize) -> ClassifierSpec {
    ClassifierSpec { shape: data.shape, known: data.classes, unknown, backbone: config.backbone() }
}

/// Pretrains the C-way teacher on the known training set.
pub fn train_teacher(
    config: &ExperimentConfig,
    data: &KnownSet,
    log: Option<&mut dyn Write>,
) -> Result<(ClassifierNet<f32>, TeacherSummary)> {
    let mut teacher = build_classifier(classifier_spec(config, data, 0), &mut component_rng(config.seed, "teacher-init"))?;
    let summary = pretrain_teacher(
        &mut teacher,
        data,
        &distillation_config(config),
        &mut component_rng(config.seed, "teacher-batches"),
        log,
    )?;
    Ok((teacher, summary))
}

/// Outcome of training one variant.
#[derive(Clone, Debug)]
pub struct TrainedVariant {
    pub models: VariantModels,
    pub generator: Option<GeneratorNet<f32>>,
    pub discriminator: Option<DiscriminatorNet<f32>>,
    pub lambda: Option<f64>,
    pub logs: Vec<StepLog>,
}

/// Summary written next to a variant's checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: AblationVariant,
    pub steps: usize,
    pub lambda: Option<f64>,
    pub final_step: Option<StepLog>,
    pub fingerprint: String,
}

fn tag_divergence(variant: AblationVariant, e: Error) -> Error {
    match e {
        Error::TrainingDiverged { stage, step, detail } => {
            Error::TrainingDiverged { stage: format!("{variant} {stage}"), step, detail }
        }
        other => other,
    }
}

/// Trains `variant` on top of a pretrained C-way `teacher`. The teacher is
/// required for every variant except RS, which ignores it.
pub fn train_variant(
    config: &ExperimentConfig,
    variant: AblationVariant,
    data: &KnownSet,
    teacher: Option<&ClassifierNet<f32>>,
    log: Option<&mut dyn Write>,
) -> Result<TrainedVariant> {
    train_variant_inner(config, variant, data, teacher, log).map_err(|e| tag_divergence(variant, e))
}

fn train_variant_inner(
    config: &ExperimentConfig,
    variant: AblationVariant,
    data: &KnownSet,
    teacher: Option<&ClassifierNet<f32>>,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainedVariant> {
    let toggles = variant.toggles();
    let augmented = match (toggles.teacher, teacher) {
        (false, _) => None,
        (true, Some(t)) => Some(augment_teacher(
            t,
            config.unknown_slots,
            config.unknown_init_std,
            &mut component_rng(config.seed, "augment"),
        )?),
        (true, None) => return Err(Error::invalid(format!("variant {variant} needs a pretrained teacher"))),
    };
    if variant == AblationVariant::T {
        return Ok(TrainedVariant {
            models: VariantModels { variant, teacher: augmented, student: None },
            generator: None,
            discriminator: None,
            lambda: None,
            logs: Vec::new(),
        });
    }
    let mut student = build_classifier(
        classifier_spec(config, data, config.unknown_slots),
        &mut component_rng(config.seed, "student-init"),
    )?;
    let distill = distillation_config(config);
    let mut rng = component_rng(config.seed, "train");
    if !toggles.recommender {
        let teacher = augmented.expect("distillation needs a teacher");
        let mut opt = Adam::new(distill.adam);
        let mut sampler = crate::datasets::EpochSampler::new(data.len());
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{STEP_LOG_HEADER}")?;
        }
        let mut logs = Vec::with_capacity(config.train_steps);
        for step in 0..config.train_steps {
            let idx = sampler.next_batch(config.batch_size, &mut rng);
            let (x, _) = data.batch(&idx);
            let kd = distill_step(&mut student, &mut opt, &teacher, &x, &distill)?.unwrap_or(0.0);
            let entry = StepLog { step, d_loss: 0.0, g_loss: 0.0, kd_loss: kd, s_loss: 0.0, masked_in: 0.0 };
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", entry.csv_row())?;
            }
            logs.push(entry);
        }
        return Ok(TrainedVariant {
            models: VariantModels { variant, teacher: Some(teacher), student: Some(student) },
            generator: None,
            discriminator: None,
            lambda: None,
            logs,
        });
    }
    let shape = data.shape;
    let mut gspec = GeneratorSpec::standard(shape, config.unknown_slots)?.with_width(config.generator_width);
    if config.noise_dim > 0 {
        gspec = gspec.with_noise_dim(config.noise_dim);
    }
    let dspec = DiscriminatorSpec::standard(shape)?.with_width(config.discriminator_width);
    let generator = build_generator(gspec, &mut component_rng(config.seed, "generator-init"))?;
    let discriminator = build_discriminator(dspec, &mut component_rng(config.seed, "discriminator-init"))?;
    let lambda = match &augmented {
        Some(t) => Some(calibrate_lambda(t, data, config.lambda_quantile)?),
        None => None,
    };
    let rec = RecommenderConfig {
        alpha: config.alpha,
        lambda,
        lambda_quantile: config.lambda_quantile,
        batch_size: config.batch_size,
        generator_objective: config.generator_objective,
        adam_generator: gan_adam(config),
        adam_discriminator: gan_adam(config),
    };
    let plateau = (config.plateau_window > 0)
        .then_some(Plateau { window: config.plateau_window, min_delta: config.plateau_min_delta });
    let mut bundle = ModelBundle { teacher: augmented, student, generator, discriminator };
    let logs = alternating_train(&mut bundle, data, &distill, &rec, config.train_steps, plateau, &mut rng, log)?;
    Ok(TrainedVariant {
        models: VariantModels { variant, teacher: bundle.teacher, student: Some(bundle.student) },
        generator: Some(bundle.generator),
        discriminator: Some(bundle.discriminator),
        lambda,
        logs,
    })
}

/// Trains, calibrates and evaluates one variant in memory with the classwise
/// rule against every unknown class of the split.
pub fn run_ablation(variant: AblationVariant, config: &ExperimentConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let data = load_experiment_data(config)?;
    let teacher = if variant.toggles().teacher { Some(train_teacher(config, &data.train, None)?.0) } else { None };
    let trained = train_variant(config, variant, &data.train, teacher.as_ref(), None)?;
    let eps = trained.models.calibrate(&data.train, config.epsilon_quantile)?;
    let pool = ScoredPool::new(&trained.models, &data.test, eps)?;
    evaluate_pool(
        &pool,
        None,
        Strategy::Classwise,
        &data.split,
        &config.fingerprint(),
        derive_seed(config.seed, "balance"),
    )
}

/// Paths inside one experiment directory.
#[derive(Clone, Debug)]
pub struct ExperimentDirectory {
    pub root: PathBuf,
}

impl ExperimentDirectory {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.txt")
    }

    pub fn teacher(&self) -> PathBuf {
        self.root.join("checkpoints").join("teacher.ckpt")
    }

    pub fn variant_dir(&self, v: AblationVariant) -> PathBuf {
        self.root.join("checkpoints").join(v.tag())
    }

    pub fn student(&self, v: AblationVariant) -> PathBuf {
        self.variant_dir(v).join("student.ckpt")
    }

    pub fn generator(&self, v: AblationVariant) -> PathBuf {
        self.variant_dir(v).join("generator.ckpt")
    }

    pub fn discriminator(&self, v: AblationVariant) -> PathBuf {
        self.variant_dir(v).join("discriminator.ckpt")
    }

    pub fn train_summary(&self, v: AblationVariant) -> PathBuf {
        self.variant_dir(v).join("train.json")
    }

    pub fn thresholds(&self, v: AblationVariant) -> PathBuf {
        self.root.join(format!("thresholds-{v}.json"))
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn grids(&self) -> PathBuf {
        self.root.join("grids")
    }

    /// Creates the layout and writes the config echo and split manifest.
    pub fn prepare(&self, config: &ExperimentConfig, split: &OpenSetSplit) -> Result<()> {
        for d in [self.root.join("checkpoints"), self.logs(), self.reports(), self.grids()] {
            std::fs::create_dir_all(d)?;
        }
        std::fs::write(self.config(), config.to_toml())?;
        split.save(&self.split())
    }
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact { path: path.to_path_buf(), hint: hint.into() })
    }
}

fn log_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Loads data and prepares the experiment directory named by `out_dir`.
fn open(config: &ExperimentConfig) -> Result<(ExperimentDirectory, ExperimentData)> {
    config.validate()?;
    let dir = ExperimentDirectory::new(&config.out_dir);
    let data = load_experiment_data(config)?;
    dir.prepare(config, &data.split)?;
    Ok((dir, data))
}

fn load_teacher(dir: &ExperimentDirectory, config: &ExperimentConfig) -> Result<ClassifierNet<f32>> {
    require(&dir.teacher(), "run `train-teacher` first")?;
    Ok(ClassifierNet::load(&dir.teacher(), Some(&config.teacher_fingerprint()))?.0)
}

/// Pretrains the teacher and saves its checkpoint and loss log.
pub fn cmd_train_teacher(config: &ExperimentConfig) -> Result<TeacherSummary> {
    let (dir, data) = open(config)?;
    let mut log = log_file(&dir.logs().join("teacher.csv"))?;
    let (teacher, summary) = train_teacher(config, &data.train, Some(&mut log))?;
    log.flush()?;
    teacher.save(&dir.teacher(), &config.teacher_fingerprint(), summary.steps as u64)?;
    std::fs::write(dir.root.join("checkpoints").join("teacher.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Trains the configured variant and saves its checkpoints, log and summary.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainSummary> {
    let (dir, data) = open(config)?;
    let v = config.variant;
    let teacher = if v.toggles().teacher { Some(load_teacher(&dir, config)?) } else { None };
    std::fs::create_dir_all(dir.variant_dir(v))?;
    let mut log = log_file(&dir.logs().join(format!("train-{v}.csv")))?;
    let trained = train_variant(config, v, &data.train, teacher.as_ref(), Some(&mut log))?;
    log.flush()?;
    let fp = config.model_fingerprint();
    let steps = trained.logs.len();
    if let Some(s) = &trained.models.student {
        s.save(&dir.student(v), &fp, steps as u64)?;
    }
    if let Some(g) = &trained.generator {
        g.save(&dir.generator(v), &fp, steps as u64)?;
    }
    if let Some(d) = &trained.discriminator {
        d.save(&dir.discriminator(v), &fp, steps as u64)?;
    }
    let summary =
        TrainSummary { variant: v, steps, lambda: trained.lambda, final_step: trained.logs.last().copied(), fingerprint: fp };
    std::fs::write(dir.train_summary(v), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Loads the trained networks of `variant` from the experiment directory.
pub fn load_variant(dir: &ExperimentDirectory, config: &ExperimentConfig, variant: AblationVariant) -> Result<VariantModels> {
    let t = variant.toggles();
    let teacher = if t.teacher {
        let base = load_teacher(dir, config)?;
        Some(augment_teacher(&base, config.unknown_slots, config.unknown_init_std, &mut component_rng(config.seed, "augment"))?)
    } else {
        None
    };
    let student = if t.student {
        let hint = format!("run `train` with variant={variant} first");
        require(&dir.student(variant), &hint)?;
        Some(ClassifierNet::load(&dir.student(variant), Some(&config.model_fingerprint()))?.0)
    } else {
        None
    };
    Ok(VariantModels { variant, teacher, student })
}

/// Calibrates the classwise thresholds of the configured variant on the
/// known training set and writes them to the experiment directory.
pub fn cmd_calibrate(config: &ExperimentConfig) -> Result<InferenceThresholds> {
    let (dir, data) = open(config)?;
    let v = config.variant;
    let models = load_variant(&dir, config, v)?;
    let lambda = match std::fs::read_to_string(dir.train_summary(v)) {
        Ok(text) => serde_json::from_str::<TrainSummary>(&text)?.lambda,
        Err(_) => None,
    };
    let thresholds = InferenceThresholds {
        delta: config.delta,
        epsilons: models.calibrate(&data.train, config.epsilon_quantile)?,
        epsilon_quantile: config.epsilon_quantile,
        lambda,
    };
    thresholds.save(&dir.thresholds(v))?;
    Ok(thresholds)
}

/// Decision rule selected on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyChoice {
    Score,
    Classwise,
}

impl std::str::FromStr for StrategyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(Self::Score),
            "classwise" => Ok(Self::Classwise),
            other => Err(Error::invalid(format!("strategy `{other}` is not `score` or `classwise`"))),
        }
    }
}

/// Evaluates the configured variant on the test pool and writes the report
/// (plus the unknown-probability histogram for variants with a student).
pub fn cmd_evaluate(config: &ExperimentConfig, strategy: StrategyChoice) -> Result<EvaluationReport> {
    let (dir, data) = open(config)?;
    let v = config.variant;
    let models = load_variant(&dir, config, v)?;
    let thresholds = InferenceThresholds::load(&dir.thresholds(v))?;
    thresholds.validate(data.train.classes)?;
    let rule = match strategy {
        StrategyChoice::Classwise => Strategy::Classwise,
        StrategyChoice::Score => Strategy::Score {
            delta: config.delta.or(thresholds.delta).ok_or_else(|| {
                Error::invalid("the score strategy needs a threshold, pass `--set delta=<value>`")
            })?,
        },
    };
    let pool = ScoredPool::new(&models, &data.test, thresholds.epsilons)?;
    let report =
        evaluate_pool(&pool, None, rule, &data.split, &config.fingerprint(), derive_seed(config.seed, "balance"))?;
    let stem = match strategy {
        StrategyChoice::Score => format!("evaluate-{v}-score"),
        StrategyChoice::Classwise => format!("evaluate-{v}-classwise"),
    };
    report.write(&dir.reports(), &stem)?;
    if let Some(student) = &models.student {
        emit_unknown_probability_histogram(
            student,
            &data.test.known.images,
            &data.test.unknown_images,
            config.histogram_bins,
            &dir.reports(),
            &format!("histogram-{v}"),
        )?;
    }
    Ok(report)
}

/// Openness sweep over every variant in `sweep_variants`, each of which must
/// already be trained and calibrated.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    let (dir, data) = open(config)?;
    let mut pools = Vec::new();
    for &v in &config.sweep_variants {
        let models = load_variant(&dir, config, v)?;
        let thresholds = InferenceThresholds::load(&dir.thresholds(v))?;
        pools.push(ScoredPool::new(&models, &data.test, thresholds.epsilons)?);
    }
    let result = run_openness_sweep(
        &pools,
        &sweep_pool(&data),
        &config.sweep_counts,
        config.sweep_repeats,
        data.split.c_tr,
        derive_seed(config.seed, "sweep"),
    )?;
    std::fs::write(dir.reports().join("sweep.csv"), result.to_csv())?;
    std::fs::write(dir.reports().join("sweep.svg"), result.to_svg())?;
    Ok(result)
}

/// Trains the full pipeline for every `(tau, alpha)` of the grid on top of
/// the saved teacher and records macro-F1 at each grid openness level.
pub fn cmd_grid(config: &ExperimentConfig) -> Result<SensitivityGrid> {
    let (dir, data) = open(config)?;
    let teacher = load_teacher(&dir, config)?;
    let grid = run_sensitivity_grid(
        &config.grid_taus,
        &config.grid_alphas,
        &config.grid_counts,
        config.sweep_repeats,
        &data.test,
        &data.train,
        config.epsilon_quantile,
        &sweep_pool(&data),
        derive_seed(config.seed, "sweep"),
        |tau, alpha| {
            let cell = ExperimentConfig { temperature: tau, alpha, train_steps: config.grid_steps, ..config.clone() };
            let mut log = log_file(&dir.logs().join(format!("grid-tau{tau}-alpha{alpha}.csv")))?;
            let trained = train_variant(&cell, AblationVariant::TRS, &data.train, Some(&teacher), Some(&mut log))?;
            log.flush()?;
            Ok(trained.models)
        },
    )?;
    std::fs::write(dir.reports().join("grid.csv"), grid.to_csv())?;
    for (o, svg) in grid.to_svgs() {
        std::fs::write(dir.reports().join(format!("grid-openness-{:.2}.svg", o * 100.0)), svg)?;
    }
    Ok(grid)
}

/// Writes a grid of generated samples, one row per synthetic unknown class.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let dir = ExperimentDirectory::new(&config.out_dir);
    let v = config.variant;
    if !v.toggles().recommender {
        return Err(Error::invalid(format!("variant {v} has no generator, use RS or TRS")));
    }
    require(&dir.generator(v), &format!("run `train` with variant={v} first"))?;
    let (generator, _) = GeneratorNet::<f32>::load(&dir.generator(v), Some(&config.model_fingerprint()))?;
    let path = dir.grids().join(format!("{v}.png"));
    emit_sample_grid(&generator, config.samples_per_class, &path, &mut component_rng(config.seed, "generate"))?;
    Ok(path)
}
