//! Trains and evaluates the four ablation variants (teacher only, teacher +
//! student, recommender + student, full pipeline) on one split.
//!
//! `cargo run --release --example ablation -- [steps] [seed]`

mod common;

use openset_kd::evaluation::{run_ablation, AblationVariant};

fn main() -> openset_kd::error::Result<()> {
    let mut cfg = common::quick_config("runs/examples");
    cfg.train_steps = common::arg(1, 150);
    cfg.seed = common::arg(2, 0);
    println!("{:<4} {:>7} {:>9} {:>9} {:>22}", "", "AUROC", "baseline", "macro-F1", "unknown mass k / u");
    for v in AblationVariant::ALL {
        let r = run_ablation(v, &cfg)?;
        let base = r.baseline_auroc.map_or("-".into(), |b| format!("{b:.4}"));
        let mass = r.unknown_mass.map_or("-".into(), |m| format!("{:.3} / {:.3}", m.known_mean, m.unknown_mean));
        println!("{:<4} {:>7.4} {:>9} {:>9.4} {:>22}", v.tag(), r.auroc, base, r.macro_f1, mass);
    }
    Ok(())
}
