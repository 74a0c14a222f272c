//! Pretrains a C-way teacher, then appends frozen unknown slots.
//!
//! `cargo run --release --example teacher -- [epochs]`

mod common;

use openset_kd::cli::load_experiment_data;
use openset_kd::distillation::{augment_teacher, evaluate_hard_labels, pretrain_teacher, DistillationConfig};
use openset_kd::networks::{build_classifier, Backbone, ClassifierSpec};
use openset_kd::optim::AdamConfig;
use openset_kd::rng::rng_from_seed;

fn main() -> openset_kd::error::Result<()> {
    let mut cfg = common::quick_config("runs/examples");
    cfg.teacher_epochs = common::arg(1, 2);
    let data = load_experiment_data(&cfg)?;
    let spec = ClassifierSpec { shape: data.test.known.shape, known: 6, unknown: 0, backbone: Backbone::plain_small() };
    let mut teacher = build_classifier::<f32>(spec, &mut rng_from_seed(1))?;
    let train = DistillationConfig {
        epochs: cfg.teacher_epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig { lr: cfg.lr, ..Default::default() },
        ..Default::default()
    };
    let summary = pretrain_teacher(&mut teacher, &data.train, &train, &mut rng_from_seed(2), None)?;
    println!(
        "{} steps: loss {:.3} -> {:.3}, train accuracy {:.3}",
        summary.steps, summary.initial_loss, summary.final_loss, summary.train_accuracy
    );
    let (_, test_acc) = evaluate_hard_labels(&teacher, &data.test.known)?;
    println!("known test accuracy {test_acc:.3}");

    let augmented = augment_teacher(&teacher, 10, 1e-3, &mut rng_from_seed(3))?;
    let before = teacher.forward_logits(&data.test.known.images)?;
    let after = augmented.forward_logits(&data.test.known.images)?;
    let same = (0..before.rows()).all(|i| before.row(i) == &after.row(i)[..6]);
    println!("augmented to {} outputs; known logits unchanged: {same}", augmented.num_outputs());
    Ok(())
}
