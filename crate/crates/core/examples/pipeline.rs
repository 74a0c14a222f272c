//! The command sequence behind the `openset-kd` binary, driven from code:
//! teacher, training, calibration, evaluation with both rules, and a sample grid.
//!
//! `cargo run --release --example pipeline -- [out_dir] [variant]`

mod common;

use openset_kd::cli::{cmd_calibrate, cmd_evaluate, cmd_generate, cmd_train, cmd_train_teacher, StrategyChoice};
use openset_kd::evaluation::AblationVariant;

fn main() -> openset_kd::error::Result<()> {
    let mut cfg = common::quick_config(&common::arg(1, "runs/example-pipeline".to_string()));
    cfg.variant = common::arg(2, AblationVariant::TRS);
    cfg.delta = Some(0.05);

    let t = cmd_train_teacher(&cfg)?;
    println!("teacher: {} steps, train accuracy {:.3}", t.steps, t.train_accuracy);
    let s = cmd_train(&cfg)?;
    println!("{}: {} steps, lambda {:?}", s.variant, s.steps, s.lambda);
    let th = cmd_calibrate(&cfg)?;
    println!("epsilons {:.3?}", th.epsilons);
    for strategy in [StrategyChoice::Score, StrategyChoice::Classwise] {
        let r = cmd_evaluate(&cfg, strategy)?;
        println!("{:<9} AUROC {:.4}  macro-F1 {:.4}", r.strategy, r.auroc, r.macro_f1);
    }
    if cfg.variant.toggles().recommender {
        println!("samples: {}", cmd_generate(&cfg)?.display());
    }
    println!("artifacts under {}", cfg.out_dir.display());
    Ok(())
}
