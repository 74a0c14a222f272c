//! The two test-time rules on hand-written posteriors: the unknown score with
//! a threshold delta, and the classwise rule with per-class thresholds.
//!
//! `cargo run --example decision_rules`

use openset_kd::distillation::JointProbabilityVector;
use openset_kd::inference::{calibrate_epsilons_from_scores, detect_unknown, recognize, unknown_score};

fn jpv(known: &[f64], unknown: &[f64]) -> JointProbabilityVector {
    JointProbabilityVector { known: known.to_vec(), unknown: unknown.to_vec(), temperature: 1.0 }
}

fn main() -> openset_kd::error::Result<()> {
    // teacher, student
    let samples = [
        ("confident known", jpv(&[0.96, 0.02, 0.01], &[0.01]), jpv(&[0.90, 0.05, 0.03], &[0.02])),
        ("teacher unsure", jpv(&[0.45, 0.35, 0.15], &[0.05]), jpv(&[0.40, 0.30, 0.05], &[0.25])),
        ("student flags it", jpv(&[0.50, 0.30, 0.18], &[0.02]), jpv(&[0.05, 0.05, 0.05], &[0.85])),
    ];
    // thresholds from a toy calibration set: 10th percentile of each class's own score
    let calib: Vec<Vec<f64>> = (0..30).map(|i| {
        let k = i % 3;
        let mut s = vec![0.05; 3];
        s[k] = 0.5 + 0.015 * i as f64;
        s
    }).collect();
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let eps = calibrate_epsilons_from_scores(&calib, &labels, 3, 0.1)?;
    println!("epsilons {eps:.3?}");
    let delta = 0.1;
    for (name, q, p) in &samples {
        let u = unknown_score(q, p);
        let r = recognize(q, p, &eps)?;
        println!(
            "{name:<18} U = {u:.4}  score rule (delta {delta}): {:<8} classwise: {} (K = {:.3?})",
            detect_unknown(u, delta, q).to_string(),
            r.decision,
            r.known_scores
        );
    }
    Ok(())
}
