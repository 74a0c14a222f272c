use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use openset_kd::cli::{
    cmd_calibrate, cmd_evaluate, cmd_generate, cmd_grid, cmd_sweep, cmd_train, cmd_train_teacher, ExperimentConfig,
    StrategyChoice,
};
use openset_kd::Result;

#[derive(Parser)]
#[command(name = "openset-kd", version, about = "Open-set recognition by distillation with recommended unknowns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Per-field override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the closed-set teacher.
    TrainTeacher,
    /// Train the configured variant.
    Train,
    /// Calibrate classwise thresholds for the configured variant.
    Calibrate,
    /// Evaluate the configured variant on the test pool.
    Evaluate {
        #[arg(long, default_value = "classwise")]
        strategy: StrategyChoice,
    },
    /// Macro-F1 against openness for the calibrated variants.
    Sweep,
    /// Temperature and balancing-weight sensitivity grid.
    Grid,
    /// Write a grid of generated samples.
    Generate,
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut overrides = cli.set.clone();
    if let Some(out) = &cli.out {
        overrides.push(format!("out_dir={:?}", out.display().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::from_toml("", &overrides),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::TrainTeacher => {
            let s = cmd_train_teacher(&cfg)?;
            println!("teacher: {} steps, loss {:.4}, train accuracy {:.4}", s.steps, s.final_loss, s.train_accuracy);
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!("{}: {} steps, lambda {:?}", s.variant, s.steps, s.lambda);
        }
        Command::Calibrate => {
            let t = cmd_calibrate(&cfg)?;
            println!("{}: epsilons {:?}", cfg.variant, t.epsilons);
        }
        Command::Evaluate { strategy } => {
            let r = cmd_evaluate(&cfg, *strategy)?;
            println!("{} {}: auroc {:.4}, macro-F1 {:.4}", r.variant, r.strategy, r.auroc, r.macro_f1);
            if let Some(b) = r.baseline_auroc {
                println!("softmax baseline auroc {b:.4}");
            }
        }
        Command::Sweep => {
            let r = cmd_sweep(&cfg)?;
            for (v, n, o, f1) in r.means() {
                println!("{v} unknown={n} openness={:.2}% macro-F1 {f1:.4}", o * 100.0);
            }
        }
        Command::Grid => {
            let g = cmd_grid(&cfg)?;
            print!("{}", g.to_csv());
        }
        Command::Generate => {
            println!("{}", cmd_generate(&cfg)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
