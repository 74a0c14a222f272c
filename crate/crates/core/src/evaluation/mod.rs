//! Metrics, ablation variants, openness sweeps, sensitivity grids and reports.

mod metrics;
pub mod plot;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distillation::argmax;
use crate::datasets::{openness, KnownSet, Label, OpenSetSplit};
use crate::error::{Error, Result};
use crate::inference::{
    calibrate_epsilons_from_scores, classwise_decision, known_class_scores, posteriors, unknown_score,
};
use crate::networks::ClassifierNet;
use crate::rng::rng_from_seed;
use crate::tensor::{softmax_rows, Tensor};

pub use metrics::{auroc, macro_f1, ClassScore, F1Report};

pub use crate::cli::run_ablation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationVariant {
    /// Teacher alone, thresholds on its known-class softmax.
    T,
    /// Teacher plus a distilled student without generated unknowns.
    TS,
    /// Student trained from labels with generated unknowns, no teacher.
    RS,
    /// Teacher, distilled student and generated unknowns.
    TRS,
}

/// Which parts of the pipeline a variant uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantToggles {
    pub teacher: bool,
    pub student: bool,
    pub distillation: bool,
    pub recommender: bool,
}

impl AblationVariant {
    pub const ALL: [Self; 4] = [Self::T, Self::TS, Self::RS, Self::TRS];

    pub fn toggles(self) -> VariantToggles {
        let (teacher, student, distillation, recommender) = match self {
            Self::T => (true, false, false, false),
            Self::TS => (true, true, true, false),
            Self::RS => (false, true, false, true),
            Self::TRS => (true, true, true, true),
        };
        VariantToggles { teacher, student, distillation, recommender }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::T => "T",
            Self::TS => "TS",
            Self::RS => "RS",
            Self::TRS => "TRS",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`, expected one of T, TS, RS, TRS")))
    }
}

/// Trained networks of one variant. The teacher, when present, is the
/// augmented one; its first `C` logits are the pretrained teacher's.
#[derive(Clone, Debug)]
pub struct VariantModels {
    pub variant: AblationVariant,
    pub teacher: Option<ClassifierNet<f32>>,
    pub student: Option<ClassifierNet<f32>>,
}

/// Decision inputs of one sample under one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScores {
    pub known_scores: Vec<f64>,
    pub unknown_score: f64,
    /// `1 - max` of the teacher's known-class softmax, when a teacher exists.
    pub baseline_score: Option<f64>,
    pub student_unknown_mass: Option<f64>,
    /// Closed-set prediction of the score rule: the teacher's argmax, or the
    /// student's when there is no teacher.
    pub closed_set_class: usize,
}

fn known_softmax(net: &ClassifierNet<f32>, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
    let logits = net.forward_logits(images)?.to_f64_vec();
    let (w, c) = (net.num_outputs(), net.spec.known);
    Ok(logits.chunks(w.max(1)).map(|r| softmax_rows(&r[..c], c, 1.0)).collect())
}

impl VariantModels {
    pub fn classes(&self) -> usize {
        self.teacher.as_ref().or(self.student.as_ref()).map_or(0, |n| n.spec.known)
    }

    fn check(&self) -> Result<()> {
        let t = self.variant.toggles();
        if t.teacher != self.teacher.is_some() || t.student != self.student.is_some() {
            return Err(Error::invalid(format!("models do not match variant {}", self.variant)));
        }
        Ok(())
    }

    /// Scores every image.
    pub fn score(&self, images: &Tensor<f32>) -> Result<Vec<SampleScores>> {
        self.check()?;
        let base = match &self.teacher {
            Some(t) => Some(known_softmax(t, images)?),
            None => None,
        };
        let n = images.rows();
        let baseline = |i: usize| base.as_ref().map(|b| 1.0 - b[i].iter().cloned().fold(0.0, f64::max));
        let out = match (self.variant, &self.teacher, &self.student) {
            (AblationVariant::T, _, _) => {
                let b = base.as_ref().expect("teacher present");
                (0..n)
                    .map(|i| SampleScores {
                        closed_set_class: argmax(&b[i]),
                        known_scores: b[i].clone(),
                        unknown_score: baseline(i).unwrap_or(0.0),
                        baseline_score: baseline(i),
                        student_unknown_mass: None,
                    })
                    .collect()
            }
            (AblationVariant::RS, _, Some(s)) => posteriors(s, images)?
                .into_iter()
                .map(|p| SampleScores {
                    closed_set_class: p.argmax_known(),
                    unknown_score: p.unknown_mass(),
                    student_unknown_mass: Some(p.unknown_mass()),
                    known_scores: p.known,
                    baseline_score: None,
                })
                .collect(),
            (_, Some(t), Some(s)) => {
                let q = posteriors(t, images)?;
                let p = posteriors(s, images)?;
                q.iter()
                    .zip(&p)
                    .enumerate()
                    .map(|(i, (q, p))| SampleScores {
                        closed_set_class: q.argmax_known(),
                        known_scores: known_class_scores(q, p),
                        unknown_score: unknown_score(q, p),
                        baseline_score: baseline(i),
                        student_unknown_mass: Some(p.unknown_mass()),
                    })
                    .collect()
            }
            _ => unreachable!("checked above"),
        };
        Ok(out)
    }

    /// Classwise thresholds from this variant's known scores on `data`.
    pub fn calibrate(&self, data: &KnownSet, quantile: f64) -> Result<Vec<f64>> {
        let scores: Vec<Vec<f64>> = self.score(&data.images)?.into_iter().map(|s| s.known_scores).collect();
        calibrate_epsilons_from_scores(&scores, &data.labels, data.classes, quantile)
    }
}

/// Known test samples (dense labels) plus unknown samples tagged with their source class.
#[derive(Clone, Debug)]
pub struct TestPool {
    pub known: KnownSet,
    pub unknown_images: Tensor<f32>,
    /// Source class of each unknown sample; `None` for unlabeled sources.
    pub unknown_classes: Vec<Option<usize>>,
}

/// A pool scored once by a variant; metrics on any subset reuse the scores.
#[derive(Clone, Debug)]
pub struct ScoredPool {
    pub variant: AblationVariant,
    pub known: Vec<SampleScores>,
    pub known_labels: Vec<usize>,
    pub unknown: Vec<SampleScores>,
    pub unknown_classes: Vec<Option<usize>>,
    pub epsilons: Vec<f64>,
}

impl ScoredPool {
    pub fn new(models: &VariantModels, pool: &TestPool, epsilons: Vec<f64>) -> Result<Self> {
        if epsilons.len() != models.classes() {
            return Err(Error::invalid("one threshold per known class required"));
        }
        Ok(Self {
            variant: models.variant,
            known: models.score(&pool.known.images)?,
            known_labels: pool.known.labels.clone(),
            unknown: models.score(&pool.unknown_images)?,
            unknown_classes: pool.unknown_classes.clone(),
            epsilons,
        })
    }

    /// Indices of unknown samples drawn from `classes` (all samples when `None`).
    pub fn unknown_indices(&self, classes: Option<&[usize]>) -> Vec<usize> {
        (0..self.unknown.len())
            .filter(|&i| match classes {
                None => true,
                Some(cs) => self.unknown_classes[i].is_some_and(|c| cs.contains(&c)),
            })
            .collect()
    }
}

/// Subsamples the larger side so known and unknown counts match.
pub fn balance(known: usize, unknown: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let mut k: Vec<usize> = (0..known).collect();
    let mut u = unknown.to_vec();
    let m = k.len().min(u.len());
    if k.len() > m {
        k.shuffle(&mut rng);
        k.truncate(m);
        k.sort_unstable();
    }
    if u.len() > m {
        u.shuffle(&mut rng);
        u.truncate(m);
        u.sort_unstable();
    }
    (k, u)
}

/// Mean student unknown mass over the known and unknown populations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnknownMassSummary {
    pub known_mean: f64,
    pub unknown_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variant: AblationVariant,
    pub strategy: String,
    pub auroc: f64,
    /// AUROC of `1 - max` teacher softmax on the same samples.
    pub baseline_auroc: Option<f64>,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScore>,
    pub openness: f64,
    pub known_samples: usize,
    pub unknown_samples: usize,
    pub unknown_mass: Option<UnknownMassSummary>,
    pub split_manifest: String,
    pub fingerprint: String,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-class table followed by summary rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,support\n");
        for c in &self.per_class {
            s += &format!("{},{},{},{},{}\n", c.label, c.precision, c.recall, c.f1, c.support);
        }
        s += &format!("macro,,,{},{}\n", self.macro_f1, self.known_samples + self.unknown_samples);
        s
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        Ok(())
    }
}

/// Which decision rule produces the predicted labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    /// Unknown iff the unknown score exceeds `delta`, else the closed-set class.
    Score { delta: f64 },
    /// Best known class if its score beats its threshold.
    Classwise,
}

/// Metrics on the balanced subset `(known_idx, unknown_idx)` of a scored pool.
pub fn evaluate_subset(
    pool: &ScoredPool,
    known_idx: &[usize],
    unknown_idx: &[usize],
    strategy: Strategy,
) -> Result<(f64, Option<f64>, F1Report)> {
    let c = pool.epsilons.len();
    let samples = known_idx.iter().map(|&i| &pool.known[i]).chain(unknown_idx.iter().map(|&i| &pool.unknown[i]));
    let truth: Vec<Label> = known_idx
        .iter()
        .map(|&i| Label::Class(pool.known_labels[i]))
        .chain(unknown_idx.iter().map(|_| Label::Unknown))
        .collect();
    let is_unknown: Vec<bool> = truth.iter().map(|l| *l == Label::Unknown).collect();
    let mut scores = Vec::with_capacity(truth.len());
    let mut base = Vec::with_capacity(truth.len());
    let mut preds = Vec::with_capacity(truth.len());
    for s in samples {
        scores.push(s.unknown_score);
        base.extend(s.baseline_score);
        preds.push(match strategy {
            Strategy::Classwise => classwise_decision(&s.known_scores, &pool.epsilons),
            Strategy::Score { delta } if s.unknown_score > delta => Label::Unknown,
            Strategy::Score { .. } => Label::Class(s.closed_set_class),
        });
    }
    let a = auroc(&scores, &is_unknown)?;
    let b = if base.len() == scores.len() { Some(auroc(&base, &is_unknown)?) } else { None };
    Ok((a, b, macro_f1(&preds, &truth, c)?))
}

/// Full report for one variant on a balanced draw of the pool.
pub fn evaluate_pool(
    pool: &ScoredPool,
    unknown_classes: Option<&[usize]>,
    strategy: Strategy,
    split: &OpenSetSplit,
    fingerprint: &str,
    seed: u64,
) -> Result<EvaluationReport> {
    let candidates = pool.unknown_indices(unknown_classes);
    if candidates.is_empty() {
        return Err(Error::invalid("no unknown samples to evaluate against"));
    }
    let (k, u) = balance(pool.known.len(), &candidates, seed);
    let (auroc, baseline_auroc, f1) = evaluate_subset(pool, &k, &u, strategy)?;
    let mean = |v: &mut dyn Iterator<Item = Option<f64>>| -> Option<f64> {
        let xs: Vec<f64> = v.collect::<Option<Vec<f64>>>()?;
        Some(xs.iter().sum::<f64>() / xs.len().max(1) as f64)
    };
    let unknown_mass = mean(&mut k.iter().map(|&i| pool.known[i].student_unknown_mass))
        .zip(mean(&mut u.iter().map(|&i| pool.unknown[i].student_unknown_mass)))
        .map(|(known_mean, unknown_mean)| UnknownMassSummary { known_mean, unknown_mean });
    let c_te = split.c_tr + unknown_classes.map_or(split.unknown_class_ids.len(), <[usize]>::len);
    Ok(EvaluationReport {
        variant: pool.variant,
        strategy: match strategy {
            Strategy::Score { delta } => format!("score(delta={delta})"),
            Strategy::Classwise => "classwise".into(),
        },
        auroc,
        baseline_auroc,
        macro_f1: f1.macro_f1,
        per_class: f1.per_class,
        openness: openness(split.c_tr, c_te, split.c_r)?,
        known_samples: k.len(),
        unknown_samples: u.len(),
        unknown_mass,
        split_manifest: split.to_manifest(),
        fingerprint: fingerprint.to_owned(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: AblationVariant,
    pub unknown_classes: usize,
    pub openness: f64,
    pub repeat: usize,
    pub drawn: Vec<usize>,
    pub macro_f1: f64,
    pub auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Mean macro-F1 per `(variant, unknown class count)`, in row order.
    pub fn means(&self) -> Vec<(AblationVariant, usize, f64, f64)> {
        let mut out: Vec<(AblationVariant, usize, f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|m| m.0 == r.variant && m.1 == r.unknown_classes) {
                Some(m) => {
                    m.3 += r.macro_f1;
                    m.4 += 1;
                }
                None => out.push((r.variant, r.unknown_classes, r.openness, r.macro_f1, 1)),
            }
        }
        out.into_iter().map(|(v, n, o, s, k)| (v, n, o, s / k as f64)).collect()
    }

    /// Mean macro-F1 of `variant` at the largest swept openness.
    pub fn f1_at_max_openness(&self, variant: AblationVariant) -> Option<f64> {
        self.means()
            .into_iter()
            .filter(|m| m.0 == variant)
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .map(|m| m.3)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,unknown_classes,openness,repeat,drawn,macro_f1,auroc\n");
        for r in &self.rows {
            let drawn: Vec<String> = r.drawn.iter().map(|d| d.to_string()).collect();
            s += &format!(
                "{},{},{},{},{},{},{}\n",
                r.variant,
                r.unknown_classes,
                r.openness,
                r.repeat,
                drawn.join(" "),
                r.macro_f1,
                r.auroc
            );
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for (v, _, o, f) in self.means() {
            match series.iter_mut().find(|s| s.0 == v.tag()) {
                Some(s) => s.1.push((o * 100.0, f)),
                None => series.push((v.tag().to_owned(), vec![(o * 100.0, f)])),
            }
        }
        plot::line_chart("macro-F1 against openness", "openness (%)", "macro-F1", &series)
    }
}

/// Draws of `count` unknown classes per repeat; identical for every caller with the same seed.
pub fn draw_unknown_classes(pool_classes: &[usize], count: usize, repeats: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_from_seed(seed ^ (count as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..repeats)
        .map(|_| {
            let mut ids = pool_classes.to_vec();
            ids.shuffle(&mut rng);
            ids.truncate(count);
            ids.sort_unstable();
            ids
        })
        .collect()
}

/// Macro-F1 (classwise rule) of every scored variant over random draws of
/// `count` unknown classes from the pool, for each count.
pub fn run_openness_sweep(
    pools: &[ScoredPool],
    unknown_class_ids: &[usize],
    counts: &[usize],
    repeats: usize,
    c_tr: usize,
    seed: u64,
) -> Result<SweepResult> {
    if unknown_class_ids.is_empty() {
        return Err(Error::invalid("unknown class pool is empty"));
    }
    if let Some(&bad) = counts.iter().find(|&&c| c == 0 || c > unknown_class_ids.len()) {
        return Err(Error::invalid(format!("cannot draw {bad} of {} unknown classes", unknown_class_ids.len())));
    }
    let mut rows = Vec::new();
    for &count in counts {
        let o = openness(c_tr, c_tr + count, c_tr)?;
        for (repeat, drawn) in draw_unknown_classes(unknown_class_ids, count, repeats, seed).into_iter().enumerate() {
            for pool in pools {
                let candidates = pool.unknown_indices(Some(&drawn));
                let (k, u) = balance(pool.known.len(), &candidates, seed.wrapping_add(repeat as u64));
                let (auroc, _, f1) = evaluate_subset(pool, &k, &u, Strategy::Classwise)?;
                rows.push(SweepRow {
                    variant: pool.variant,
                    unknown_classes: count,
                    openness: o,
                    repeat,
                    drawn: drawn.clone(),
                    macro_f1: f1.macro_f1,
                    auroc,
                });
            }
        }
    }
    Ok(SweepResult { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    pub unknown_counts: Vec<usize>,
    pub openness: Vec<f64>,
    /// `f1[level][tau][alpha]`, averaged over repeats.
    pub f1: Vec<Vec<Vec<f64>>>,
}

impl SensitivityGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("openness,tau,alpha,macro_f1\n");
        for (l, o) in self.openness.iter().enumerate() {
            for (i, t) in self.taus.iter().enumerate() {
                for (j, a) in self.alphas.iter().enumerate() {
                    s += &format!("{o},{t},{a},{}\n", self.f1[l][i][j]);
                }
            }
        }
        s
    }

    /// One heat map per openness level.
    pub fn to_svgs(&self) -> Vec<(f64, String)> {
        let rows: Vec<String> = self.taus.iter().map(|t| format!("tau={t}")).collect();
        let cols: Vec<String> = self.alphas.iter().map(|a| format!("alpha={a}")).collect();
        self.openness
            .iter()
            .zip(&self.f1)
            .map(|(&o, v)| {
                let title = format!("macro-F1 at openness {:.2}%", o * 100.0);
                (o, plot::heatmap(&title, "temperature", "balancing weight", &rows, &cols, v))
            })
            .collect()
    }
}

/// Trains one full-pipeline model per `(tau, alpha)` via `train` and records
/// its mean macro-F1 at each unknown class count.
#[allow(clippy::too_many_arguments)]
pub fn run_sensitivity_grid(
    taus: &[f64],
    alphas: &[f64],
    unknown_counts: &[usize],
    repeats: usize,
    test: &TestPool,
    calibration: &KnownSet,
    epsilon_quantile: f64,
    unknown_class_ids: &[usize],
    seed: u64,
    mut train: impl FnMut(f64, f64) -> Result<VariantModels>,
) -> Result<SensitivityGrid> {
    let c_tr = calibration.classes;
    let levels = unknown_counts.len();
    let mut f1 = vec![vec![vec![0.0; alphas.len()]; taus.len()]; levels];
    for (i, &tau) in taus.iter().enumerate() {
        for (j, &alpha) in alphas.iter().enumerate() {
            let models = train(tau, alpha)?;
            let eps = models.calibrate(calibration, epsilon_quantile)?;
            let pool = ScoredPool::new(&models, test, eps)?;
            let sweep = run_openness_sweep(
                std::slice::from_ref(&pool),
                unknown_class_ids,
                unknown_counts,
                repeats,
                c_tr,
                seed,
            )?;
            for (l, &count) in unknown_counts.iter().enumerate() {
                let m = sweep.means().into_iter().find(|m| m.1 == count).map_or(0.0, |m| m.3);
                f1[l][i][j] = m;
            }
        }
    }
    let openness = unknown_counts.iter().map(|&n| openness(c_tr, c_tr + n, c_tr)).collect::<Result<_>>()?;
    Ok(SensitivityGrid {
        taus: taus.to_vec(),
        alphas: alphas.to_vec(),
        unknown_counts: unknown_counts.to_vec(),
        openness,
        f1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnknownHistogram {
    pub bins: usize,
    pub known_counts: Vec<usize>,
    pub unknown_counts: Vec<usize>,
    pub summary: UnknownMassSummary,
}

impl UnknownHistogram {
    /// `population,bin_low,bin_high,count`, one row per bin and population.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("population,bin_low,bin_high,count\n");
        for (name, counts) in [("known", &self.known_counts), ("unknown", &self.unknown_counts)] {
            for (b, c) in counts.iter().enumerate() {
                let lo = b as f64 / self.bins as f64;
                let hi = (b + 1) as f64 / self.bins as f64;
                s += &format!("{name},{lo},{hi},{c}\n");
            }
        }
        s
    }
}

fn bin_counts(values: &[f64], bins: usize) -> Vec<usize> {
    let mut c = vec![0; bins];
    for &v in values {
        c[((v * bins as f64) as usize).min(bins - 1)] += 1;
    }
    c
}

/// Histograms of the student's summed unknown probability over both
/// populations, written as `<stem>.csv` and `<stem>.svg` under `dir`.
pub fn emit_unknown_probability_histogram(
    student: &ClassifierNet<f32>,
    known: &Tensor<f32>,
    unknown: &Tensor<f32>,
    bins: usize,
    dir: &Path,
    stem: &str,
) -> Result<UnknownHistogram> {
    if bins == 0 || known.rows() == 0 || unknown.rows() == 0 {
        return Err(Error::invalid("histogram needs bins and both populations"));
    }
    let mass = |x: &Tensor<f32>| -> Result<Vec<f64>> {
        Ok(posteriors(student, x)?.iter().map(|p| p.unknown_mass()).collect())
    };
    let (k, u) = (mass(known)?, mass(unknown)?);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let h = UnknownHistogram {
        bins,
        known_counts: bin_counts(&k, bins),
        unknown_counts: bin_counts(&u, bins),
        summary: UnknownMassSummary { known_mean: mean(&k), unknown_mean: mean(&u) },
    };
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), h.to_csv())?;
    let svg = plot::histogram_chart(
        &format!("unknown probability (means {:.3} / {:.3})", h.summary.known_mean, h.summary.unknown_mean),
        "sum of unknown-slot probabilities",
        0.0,
        1.0,
        &[("known".into(), h.known_counts.clone()), ("unknown".into(), h.unknown_counts.clone())],
    );
    std::fs::write(dir.join(format!("{stem}.svg")), svg)?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(known: Vec<f64>, unknown: Vec<f64>, classes: Vec<Option<usize>>) -> ScoredPool {
        let s = |u: f64| SampleScores {
            closed_set_class: 0,
            known_scores: vec![1.0 - u, 0.0],
            unknown_score: u,
            baseline_score: None,
            student_unknown_mass: Some(u),
        };
        ScoredPool {
            variant: AblationVariant::TRS,
            known_labels: (0..known.len()).map(|i| i % 2).collect(),
            known: known
                .into_iter()
                .enumerate()
                .map(|(i, u)| {
                    let mut x = s(u);
                    x.known_scores.swap(0, i % 2);
                    x
                })
                .collect(),
            unknown: unknown.into_iter().map(s).collect(),
            unknown_classes: classes,
            epsilons: vec![0.5, 0.5],
        }
    }

    #[test]
    fn variant_parsing_and_toggles() {
        for v in AblationVariant::ALL {
            assert_eq!(v.tag().parse::<AblationVariant>().unwrap(), v);
        }
        assert!("X".parse::<AblationVariant>().is_err());
        assert!(!AblationVariant::RS.toggles().teacher);
        assert!(AblationVariant::TRS.toggles().recommender);
    }

    #[test]
    fn balancing_is_one_to_one() {
        let (k, u) = balance(10, &[3, 4, 5], 1);
        assert_eq!((k.len(), u), (3, vec![3, 4, 5]));
        assert_eq!(balance(10, &[3, 4, 5], 1), (k, vec![3, 4, 5]));
    }

    #[test]
    fn sweep_shapes() {
        let p = pool(vec![0.1, 0.2, 0.3, 0.1], vec![0.9, 0.8, 0.7, 0.95], vec![Some(6), Some(7), Some(8), Some(9)]);
        let r = run_openness_sweep(std::slice::from_ref(&p), &[6, 7, 8, 9], &[4], 1, 6, 0).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].macro_f1, 1.0);
        assert!(run_openness_sweep(&[p.clone()], &[], &[1], 1, 6, 0).is_err());
        let r = run_openness_sweep(&[p], &[6, 7, 8, 9], &[1, 4], 2, 6, 0).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.to_csv().lines().count() == 5 && r.to_svg().contains("TRS"));
        let a = draw_unknown_classes(&[6, 7, 8, 9], 2, 3, 5);
        assert_eq!(a, draw_unknown_classes(&[6, 7, 8, 9], 2, 3, 5));
    }

    #[test]
    fn report_has_unknown_row() {
        let p = pool(vec![0.1, 0.6], vec![0.9, 0.4], vec![None, None]);
        let split = OpenSetSplit::from_ids("toy", vec![0, 1], vec![2], 0).unwrap();
        let r = evaluate_pool(&p, None, Strategy::Classwise, &split, "fp", 0).unwrap();
        assert_eq!(r.per_class.len(), 3);
        assert_eq!(r.per_class[2].label, Label::Unknown);
        assert!(r.to_csv().starts_with("class,precision"));
        assert!(r.to_json().unwrap().contains("\"fingerprint\": \"fp\""));
        let m = r.unknown_mass.unwrap();
        assert!(m.unknown_mean > m.known_mean);
    }

    #[test]
    fn histogram_rows() {
        let h = UnknownHistogram {
            bins: 4,
            known_counts: bin_counts(&[0.0, 0.3, 1.0], 4),
            unknown_counts: bin_counts(&[0.99], 4),
            summary: UnknownMassSummary { known_mean: 0.0, unknown_mean: 0.0 },
        };
        assert_eq!(h.known_counts, vec![1, 1, 0, 1]);
        assert_eq!(h.to_csv().lines().count(), 1 + 8);
    }
}
