//! Distils an augmented teacher into a student over all C + U slots at
//! temperature tau, and reports how much mass the student puts on the
//! unknown slots for known and unknown test digits.
//!
//! `cargo run --release --example distill -- [tau] [steps]`

mod common;

use openset_kd::cli::{load_experiment_data, train_teacher};
use openset_kd::distillation::{augment_teacher, distill_step, DistillationConfig};
use openset_kd::datasets::EpochSampler;
use openset_kd::inference::posteriors;
use openset_kd::networks::{build_classifier, Backbone, ClassifierSpec};
use openset_kd::optim::{Adam, AdamConfig};
use openset_kd::rng::rng_from_seed;

fn main() -> openset_kd::error::Result<()> {
    let cfg = common::quick_config("runs/examples");
    let tau: f64 = common::arg(1, 5.0);
    let steps: usize = common::arg(2, 200);
    let data = load_experiment_data(&cfg)?;
    let (teacher, _) = train_teacher(&cfg, &data.train, None)?;
    let teacher = augment_teacher(&teacher, 10, 1e-3, &mut rng_from_seed(3))?;

    let spec = ClassifierSpec { shape: data.train.shape, known: 6, unknown: 10, backbone: Backbone::plain_small() };
    let mut student = build_classifier::<f32>(spec, &mut rng_from_seed(4))?;
    let config = DistillationConfig { temperature: tau, batch_size: cfg.batch_size, ..Default::default() };
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut sampler = EpochSampler::new(data.train.len());
    let mut rng = rng_from_seed(5);
    for step in 0..steps {
        let (x, _) = data.train.batch(&sampler.next_batch(cfg.batch_size, &mut rng));
        let loss = distill_step(&mut student, &mut adam, &teacher, &x, &config)?.unwrap_or(f64::NAN);
        if step % 50 == 0 || step + 1 == steps {
            println!("step {step:>4}  kd loss {loss:.4}");
        }
    }
    let mass = |images| -> openset_kd::error::Result<f64> {
        let p = posteriors(&student, images)?;
        Ok(p.iter().map(|v| v.unknown_mass()).sum::<f64>() / p.len() as f64)
    };
    println!(
        "mean unknown mass: known digits {:.4}, unknown digits {:.4}",
        mass(&data.test.known.images)?,
        mass(&data.test.unknown_images)?
    );
    Ok(())
}
