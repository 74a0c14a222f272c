//! Macro-F1 of the teacher-only and full variants as more unknown classes
//! join the test set. Writes the sweep as CSV and SVG.
//!
//! `cargo run --release --example openness_sweep -- [steps] [out_dir]`

mod common;

use std::path::PathBuf;

use openset_kd::cli::{load_experiment_data, sweep_pool, train_teacher, train_variant};
use openset_kd::evaluation::{run_openness_sweep, AblationVariant, ScoredPool};
use openset_kd::rng::derive_seed;

fn main() -> openset_kd::error::Result<()> {
    let mut cfg = common::quick_config("runs/examples");
    cfg.train_steps = common::arg(1, 150);
    let out = PathBuf::from(common::arg(2, "runs/examples".to_string()));
    std::fs::create_dir_all(&out)?;
    let data = load_experiment_data(&cfg)?;
    let (teacher, _) = train_teacher(&cfg, &data.train, None)?;
    let mut pools = Vec::new();
    for v in [AblationVariant::T, AblationVariant::TRS] {
        let trained = train_variant(&cfg, v, &data.train, Some(&teacher), None)?;
        let eps = trained.models.calibrate(&data.train, cfg.epsilon_quantile)?;
        pools.push(ScoredPool::new(&trained.models, &data.test, eps)?);
    }
    let sweep = run_openness_sweep(&pools, &sweep_pool(&data), &[1, 2, 3, 4], 3, 6, derive_seed(cfg.seed, "sweep"))?;
    for (v, count, openness, f1) in sweep.means() {
        println!("{v:<4} {count} unknown classes  openness {:>5.1}%  mean macro-F1 {f1:.4}", 100.0 * openness);
    }
    std::fs::write(out.join("sweep.csv"), sweep.to_csv())?;
    std::fs::write(out.join("sweep.svg"), sweep.to_svg())?;
    println!("wrote {}/sweep.{{csv,svg}}", out.display());
    Ok(())
}
