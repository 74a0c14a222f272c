//! Test-time decision rules combining teacher and student posteriors.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{KnownSet, Label};
use crate::distillation::{argmax, joint_probs_batch, JointProbabilityVector};
use crate::error::{Error, Result};
use crate::networks::ClassifierNet;
use crate::stats::nearest_rank_lower;
use crate::tensor::Tensor;

/// `(1 - max known teacher probability) * (student unknown mass)`.
pub fn unknown_score(teacher: &JointProbabilityVector, student: &JointProbabilityVector) -> f64 {
    (1.0 - teacher.max_known()) * student.unknown_mass()
}

/// Score-threshold rule: unknown iff `score > delta`, otherwise the teacher's
/// most probable known class.
pub fn detect_unknown(score: f64, delta: f64, teacher: &JointProbabilityVector) -> Label {
    if score > delta {
        Label::Unknown
    } else {
        Label::Class(teacher.argmax_known())
    }
}

/// Per-class mean of the teacher and student known probabilities.
pub fn known_class_scores(teacher: &JointProbabilityVector, student: &JointProbabilityVector) -> Vec<f64> {
    teacher.known.iter().zip(&student.known).map(|(q, p)| (q + p) / 2.0).collect()
}

/// Classwise rule on precomputed known scores: take the best class (lowest
/// index on ties) and accept it only if its score is strictly above its threshold.
pub fn classwise_decision(known_scores: &[f64], epsilons: &[f64]) -> Label {
    let k = argmax(known_scores);
    if known_scores[k] > epsilons[k] {
        Label::Class(k)
    } else {
        Label::Unknown
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub decision: Label,
    pub unknown_score: f64,
    pub known_scores: Vec<f64>,
}

/// Classwise recognition of one sample.
pub fn recognize(
    teacher: &JointProbabilityVector,
    student: &JointProbabilityVector,
    epsilons: &[f64],
) -> Result<RecognitionResult> {
    if teacher.known.len() != student.known.len() || epsilons.len() != teacher.known.len() {
        return Err(Error::invalid(format!(
            "{} teacher / {} student known slots with {} thresholds",
            teacher.known.len(),
            student.known.len(),
            epsilons.len()
        )));
    }
    let known_scores = known_class_scores(teacher, student);
    Ok(RecognitionResult {
        decision: classwise_decision(&known_scores, epsilons),
        unknown_score: unknown_score(teacher, student),
        known_scores,
    })
}

/// Per class `k`, the lower nearest-rank `quantile` of `scores[i][k]` over samples labelled `k`.
pub fn calibrate_epsilons_from_scores(
    scores: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    quantile: f64,
) -> Result<Vec<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("one score vector per label required"));
    }
    (0..classes)
        .map(|k| {
            let own: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == k).map(|(s, _)| s[k]).collect();
            if own.is_empty() {
                return Err(Error::invalid(format!("class {k} has no calibration samples")));
            }
            nearest_rank_lower(&own, quantile)
        })
        .collect()
}

/// Posteriors at temperature 1 for a batch of images.
pub fn posteriors(net: &ClassifierNet<f32>, images: &Tensor<f32>) -> Result<Vec<JointProbabilityVector>> {
    joint_probs_batch(&net.forward_logits(images)?, net.spec.known, 1.0)
}

/// Thresholds `eps_k` from the averaged known scores of the teacher and student on `data`.
pub fn calibrate_epsilons(
    teacher: &ClassifierNet<f32>,
    student: &ClassifierNet<f32>,
    data: &KnownSet,
    quantile: f64,
) -> Result<Vec<f64>> {
    let q = posteriors(teacher, &data.images)?;
    let p = posteriors(student, &data.images)?;
    let scores: Vec<Vec<f64>> = q.iter().zip(&p).map(|(a, b)| known_class_scores(a, b)).collect();
    calibrate_epsilons_from_scores(&scores, &data.labels, data.classes, quantile)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceThresholds {
    /// Unknown-score threshold for the score rule, if one was chosen.
    pub delta: Option<f64>,
    pub epsilons: Vec<f64>,
    pub epsilon_quantile: f64,
    /// Teacher confidence threshold used while training, kept for reference.
    pub lambda: Option<f64>,
}

impl InferenceThresholds {
    pub fn validate(&self, classes: usize) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.epsilons.len() != classes {
            return Err(Error::invalid(format!("{} thresholds for {classes} classes", self.epsilons.len())));
        }
        if !self.epsilons.iter().all(|&e| in_unit(e)) || !self.delta.is_none_or(in_unit) {
            return Err(Error::invalid("thresholds must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `calibrate` first".into(),
            });
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Writes `id,teacher_max,student_unknown_mass,unknown_score,k_1..k_C,decision` rows.
pub fn write_scores_csv(
    out: &mut dyn Write,
    teacher: &[JointProbabilityVector],
    student: &[JointProbabilityVector],
    decisions: &[Label],
) -> Result<()> {
    let c = teacher.first().map_or(0, |t| t.known.len());
    write!(out, "id,teacher_max,student_unknown_mass,unknown_score")?;
    for k in 0..c {
        write!(out, ",k_{k}")?;
    }
    writeln!(out, ",decision")?;
    for (i, ((q, p), d)) in teacher.iter().zip(student).zip(decisions).enumerate() {
        write!(out, "{i},{},{},{}", q.max_known(), p.unknown_mass(), unknown_score(q, p))?;
        for k in known_class_scores(q, p) {
            write!(out, ",{k}")?;
        }
        match d {
            Label::Class(k) => writeln!(out, ",{k}")?,
            Label::Unknown => writeln!(out, ",unknown")?,
        }
    }
    Ok(())
}
