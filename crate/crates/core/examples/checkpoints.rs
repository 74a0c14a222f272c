//! Saves and reloads the four networks and shows the fingerprint guard
//! rejecting a checkpoint written under a different configuration.
//!
//! `cargo run --example checkpoints -- [dir]`

use std::path::PathBuf;

use openset_kd::datasets::ImageShape;
use openset_kd::networks::{
    build_classifier, build_discriminator, build_generator, Backbone, ClassifierNet, ClassifierSpec,
    DiscriminatorNet, DiscriminatorSpec, GeneratorNet, GeneratorSpec,
};
use openset_kd::rng::rng_from_seed;

fn main() -> openset_kd::error::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example-checkpoints".into()));
    std::fs::create_dir_all(&dir)?;
    let mut rng = rng_from_seed(0);
    let spec = ClassifierSpec { shape: ImageShape::MNIST, known: 6, unknown: 10, backbone: Backbone::plain_small() };
    let student = build_classifier::<f32>(spec, &mut rng)?;
    let generator = build_generator::<f32>(GeneratorSpec::standard(ImageShape::MNIST, 10)?.with_width(16), &mut rng)?;
    let discriminator =
        build_discriminator::<f32>(DiscriminatorSpec::standard(ImageShape::MNIST)?.with_width(16), &mut rng)?;

    let fp = "demo-config";
    student.save(&dir.join("student.ckpt"), fp, 42)?;
    generator.save(&dir.join("generator.ckpt"), fp, 42)?;
    discriminator.save(&dir.join("discriminator.ckpt"), fp, 42)?;

    let (s, step) = ClassifierNet::<f32>::load(&dir.join("student.ckpt"), Some(fp))?;
    let (g, _) = GeneratorNet::<f32>::load(&dir.join("generator.ckpt"), Some(fp))?;
    let (d, _) = DiscriminatorNet::<f32>::load(&dir.join("discriminator.ckpt"), Some(fp))?;
    println!("reloaded at step {step}");
    println!("student params identical: {}", s.params.flatten() == student.params.flatten());
    println!("generator params identical: {}", g.params.flatten() == generator.params.flatten());
    println!("discriminator params identical: {}", d.params.flatten() == discriminator.params.flatten());

    match ClassifierNet::<f32>::load(&dir.join("student.ckpt"), Some("other-config")) {
        Ok(_) => println!("unexpected: mismatched fingerprint accepted"),
        Err(e) => println!("mismatched fingerprint rejected: {e}"),
    }
    Ok(())
}
