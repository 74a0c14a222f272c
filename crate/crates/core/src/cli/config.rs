use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::AblationVariant;
use crate::networks::Backbone;
use crate::recommender::GeneratorObjective;

/// Every hyperparameter and path of one experiment, as a flat TOML table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_root: PathBuf,
    /// Dataset whose test partition supplies unknowns; empty means the
    /// split's unknown classes of `dataset`.
    pub unknown_dataset: String,
    pub num_known: usize,
    /// Explicit known class ids; overrides `num_known` when non-empty.
    pub known_classes: Vec<usize>,
    pub split_seed: u64,
    /// Per-class caps on loaded samples; 0 keeps everything.
    pub max_train_per_class: usize,
    pub max_test_per_class: usize,
    pub backbone: String,
    pub unknown_slots: usize,
    pub temperature: f64,
    pub alpha: f64,
    pub lambda_quantile: f64,
    pub epsilon_quantile: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub teacher_epochs: usize,
    pub train_steps: usize,
    /// Early-stop window on the distillation loss; 0 disables it.
    pub plateau_window: usize,
    pub plateau_min_delta: f64,
    pub generator_objective: GeneratorObjective,
    /// Adam first-moment decay of the generator and discriminator.
    pub gan_beta1: f64,
    pub generator_width: usize,
    pub discriminator_width: usize,
    /// 0 picks the dataset's standard noise size.
    pub noise_dim: usize,
    pub unknown_init_std: f64,
    pub variant: AblationVariant,
    /// Unknown-score threshold of the score strategy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub sweep_variants: Vec<AblationVariant>,
    pub sweep_counts: Vec<usize>,
    pub sweep_repeats: usize,
    pub grid_taus: Vec<f64>,
    pub grid_alphas: Vec<f64>,
    pub grid_counts: Vec<usize>,
    pub grid_steps: usize,
    pub samples_per_class: usize,
    pub histogram_bins: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "mnist".into(),
            data_root: "data".into(),
            unknown_dataset: String::new(),
            num_known: 6,
            known_classes: Vec::new(),
            split_seed: 0,
            max_train_per_class: 0,
            max_test_per_class: 0,
            backbone: "plain".into(),
            unknown_slots: 10,
            temperature: 5.0,
            alpha: 0.5,
            lambda_quantile: 0.01,
            epsilon_quantile: 0.10,
            batch_size: 128,
            lr: 0.002,
            teacher_epochs: 10,
            train_steps: 2000,
            plateau_window: 0,
            plateau_min_delta: 0.0,
            generator_objective: GeneratorObjective::Saturating,
            gan_beta1: 0.5,
            generator_width: 128,
            discriminator_width: 64,
            noise_dim: 0,
            unknown_init_std: 1e-3,
            variant: AblationVariant::TRS,
            delta: None,
            sweep_variants: AblationVariant::ALL.to_vec(),
            sweep_counts: vec![1, 2, 4],
            sweep_repeats: 2,
            grid_taus: vec![1.0, 5.0, 10.0],
            grid_alphas: vec![0.0, 0.5, 1.0],
            grid_counts: vec![1, 4],
            grid_steps: 300,
            samples_per_class: 10,
            histogram_bins: 20,
            out_dir: "runs/default".into(),
            seed: 0,
        }
    }
}

/// Keys that do not change trained weights.
const NON_MODEL_KEYS: &[&str] = &[
    "out_dir",
    "data_root",
    "unknown_dataset",
    "max_test_per_class",
    "epsilon_quantile",
    "delta",
    "variant",
    "sweep_variants",
    "sweep_counts",
    "sweep_repeats",
    "grid_taus",
    "grid_alphas",
    "grid_counts",
    "grid_steps",
    "samples_per_class",
    "histogram_bins",
];

const TEACHER_KEYS: &[&str] = &[
    "dataset",
    "num_known",
    "known_classes",
    "split_seed",
    "max_train_per_class",
    "backbone",
    "batch_size",
    "lr",
    "teacher_epochs",
    "seed",
];

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key=value` overrides, then validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Parse(format!("config: {e}")))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override `{o}` is not key=value")))?;
            table.insert(k.trim().to_owned(), parse_value(v.trim()));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_owned()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::NotFound(format!("config file {}", path.display())));
        }
        Self::from_toml(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        let unit = |x: f64| (0.0..1.0).contains(&x);
        check(!self.dataset.is_empty(), "dataset must be set".into());
        check(
            self.known_classes.len() >= 2 || (self.known_classes.is_empty() && self.num_known >= 2),
            "need at least 2 known classes".into(),
        );
        let backbone = self.backbone.parse::<Backbone>();
        check(backbone.is_ok(), format!("backbone: {}", backbone.err().map(|e| e.to_string()).unwrap_or_default()));
        check(self.unknown_slots >= 1, "unknown_slots must be at least 1".into());
        check(self.temperature > 0.0 && self.temperature.is_finite(), format!("temperature must be positive, got {}", self.temperature));
        check(self.alpha >= 0.0 && self.alpha.is_finite(), format!("alpha must be non-negative, got {}", self.alpha));
        check(unit(self.lambda_quantile), format!("lambda_quantile must be in [0, 1), got {}", self.lambda_quantile));
        check(unit(self.epsilon_quantile), format!("epsilon_quantile must be in [0, 1), got {}", self.epsilon_quantile));
        check(self.batch_size >= 1, "batch_size must be at least 1".into());
        check(self.lr > 0.0 && self.lr.is_finite(), format!("lr must be positive, got {}", self.lr));
        check(self.teacher_epochs >= 1, "teacher_epochs must be at least 1".into());
        check(self.train_steps >= 1, "train_steps must be at least 1".into());
        check(self.plateau_min_delta >= 0.0, "plateau_min_delta must be non-negative".into());
        check((0.0..1.0).contains(&self.gan_beta1), format!("gan_beta1 must be in [0, 1), got {}", self.gan_beta1));
        check(self.generator_width >= 1, "generator_width must be at least 1".into());
        check(self.discriminator_width >= 1, "discriminator_width must be at least 1".into());
        check(self.unknown_init_std >= 0.0, "unknown_init_std must be non-negative".into());
        if let Some(d) = self.delta {
            check((0.0..=1.0).contains(&d), format!("delta must be in [0, 1], got {d}"));
        }
        check(!self.sweep_variants.is_empty(), "sweep_variants must not be empty".into());
        check(
            !self.sweep_counts.is_empty() && self.sweep_counts.iter().all(|&c| c >= 1),
            "sweep_counts must be non-empty positive counts".into(),
        );
        check(self.sweep_repeats >= 1, "sweep_repeats must be at least 1".into());
        check(
            !self.grid_taus.is_empty() && self.grid_taus.iter().all(|&t| t > 0.0),
            "grid_taus must be non-empty positive temperatures".into(),
        );
        check(
            !self.grid_alphas.is_empty() && self.grid_alphas.iter().all(|&a| a >= 0.0),
            "grid_alphas must be non-empty non-negative weights".into(),
        );
        check(
            !self.grid_counts.is_empty() && self.grid_counts.iter().all(|&c| c >= 1),
            "grid_counts must be non-empty positive counts".into(),
        );
        check(self.grid_steps >= 1, "grid_steps must be at least 1".into());
        check(self.samples_per_class >= 1, "samples_per_class must be at least 1".into());
        check(self.histogram_bins >= 1, "histogram_bins must be at least 1".into());
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone.parse().expect("validated")
    }

    fn digest(&self, skip: &[&str]) -> String {
        let mut table: toml::Table = toml::Value::try_from(self).expect("config serializes").try_into().expect("table");
        for k in skip {
            table.remove(*k);
        }
        let text = toml::to_string(&table).expect("table serializes");
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Hash of every setting except the output directory.
    pub fn fingerprint(&self) -> String {
        self.digest(&["out_dir"])
    }

    /// Hash of the settings that determine trained weights.
    pub fn model_fingerprint(&self) -> String {
        self.digest(NON_MODEL_KEYS)
    }

    /// Hash of the settings that determine the pretrained teacher.
    pub fn teacher_fingerprint(&self) -> String {
        let table: toml::Table = toml::Value::try_from(self).expect("config serializes").try_into().expect("table");
        let skip: Vec<&str> = table.keys().map(String::as_str).filter(|k| !TEACHER_KEYS.contains(k)).collect();
        self.digest(&skip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml(), &[]).unwrap(), c);
        let with_delta = ExperimentConfig { delta: Some(0.3), ..c };
        assert_eq!(ExperimentConfig::from_toml(&with_delta.to_toml(), &[]).unwrap(), with_delta);
    }

    #[test]
    fn overrides_and_typos() {
        let c = ExperimentConfig::from_toml("alpha = 0.1", &["temperature=2".into(), "variant=RS".into()]).unwrap();
        assert_eq!((c.alpha, c.temperature, c.variant), (0.1, 2.0, AblationVariant::RS));
        let c = ExperimentConfig::from_toml("", &["known_classes=[1,2]".into(), "dataset=fashion-mnist".into()]).unwrap();
        assert_eq!((c.known_classes, c.dataset.as_str()), (vec![1, 2], "fashion-mnist"));
        assert!(matches!(ExperimentConfig::from_toml("temprature = 5", &[]), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("", &["alpha".into()]).is_err());
    }

    #[test]
    fn validation_lists_every_field() {
        let err = ExperimentConfig::from_toml("alpha = -1\nlr = 0\nbatch_size = 0", &[]).unwrap_err();
        match err {
            Error::Config(v) => assert_eq!(v.len(), 3, "{v:?}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn fingerprints() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { out_dir: "elsewhere".into(), delta: Some(0.5), ..a.clone() };
        assert_eq!(a.fingerprint(), ExperimentConfig { delta: None, ..b.clone() }.fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.model_fingerprint(), b.model_fingerprint());
        let c = ExperimentConfig { alpha: 0.0, ..a.clone() };
        assert_ne!(a.model_fingerprint(), c.model_fingerprint());
        assert_eq!(a.teacher_fingerprint(), c.teacher_fingerprint());
        assert_ne!(a.teacher_fingerprint(), ExperimentConfig { seed: 1, ..a.clone() }.teacher_fingerprint());
    }
}
