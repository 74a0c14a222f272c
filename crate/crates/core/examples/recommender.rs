//! Full alternating training: discriminator, generator and student updates
//! per step, with the teacher-confidence filter. Prints the loss trace and
//! writes a grid of recommended samples, one row per unknown slot.
//!
//! `cargo run --release --example recommender -- [steps] [alpha] [out_dir]`

mod common;

use std::path::PathBuf;

use openset_kd::cli::{load_experiment_data, train_teacher, train_variant};
use openset_kd::evaluation::AblationVariant;
use openset_kd::recommender::{emit_sample_grid, grid_diversity};
use openset_kd::rng::rng_from_seed;

fn main() -> openset_kd::error::Result<()> {
    let mut cfg = common::quick_config("runs/examples");
    cfg.train_steps = common::arg(1, 150);
    cfg.alpha = common::arg(2, 0.5);
    let out = PathBuf::from(common::arg(3, "runs/examples".to_string()));
    std::fs::create_dir_all(&out)?;
    let data = load_experiment_data(&cfg)?;
    let (teacher, _) = train_teacher(&cfg, &data.train, None)?;
    let trained = train_variant(&cfg, AblationVariant::TRS, &data.train, Some(&teacher), None)?;
    println!("lambda {:.4}", trained.lambda.unwrap_or(f64::NAN));
    println!("{:>5} {:>8} {:>8} {:>8} {:>8} {:>9}", "step", "l_d", "l_g", "l_kd", "l_s", "admitted");
    let every = (trained.logs.len() / 10).max(1);
    for l in trained.logs.iter().filter(|l| l.step % every == 0) {
        println!("{:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9.3}", l.step, l.d_loss, l.g_loss, l.kd_loss, l.s_loss, l.masked_in);
    }
    let generator = trained.generator.expect("TRS trains a generator");
    let path = out.join("recommended.png");
    let grid = emit_sample_grid(&generator, 10, &path, &mut rng_from_seed(9))?;
    let (within, between) = grid_diversity(&grid, generator.spec.conditions);
    println!("grid: {} (mean distance within rows {within:.2}, between row means {between:.2})", path.display());
    Ok(())
}
