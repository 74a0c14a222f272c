//! Macro-F1 over a temperature x alpha grid through the CLI layer, reusing
//! one pretrained teacher for every cell.
//!
//! `cargo run --release --example sensitivity_grid -- [out_dir] [steps]`

mod common;

use openset_kd::cli::{cmd_grid, cmd_train_teacher};

fn main() -> openset_kd::error::Result<()> {
    let mut cfg = common::quick_config(&common::arg(1, "runs/example-grid".to_string()));
    cfg.grid_steps = common::arg(2, 100);
    cfg.grid_taus = vec![1.0, 5.0];
    cfg.grid_alphas = vec![0.0, 0.5];
    cfg.grid_counts = vec![2, 4];
    cmd_train_teacher(&cfg)?;
    let grid = cmd_grid(&cfg)?;
    for (l, o) in grid.openness.iter().enumerate() {
        println!("openness {:.1}%", 100.0 * o);
        for (i, tau) in grid.taus.iter().enumerate() {
            let row: Vec<String> = grid.f1[l][i].iter().map(|f| format!("{f:.4}")).collect();
            println!("  tau {tau:<4} alpha {:?}: {}", grid.alphas, row.join("  "));
        }
    }
    println!("reports in {}", cfg.out_dir.join("reports").display());
    Ok(())
}
