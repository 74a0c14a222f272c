//! Builds the Noise and MNIST-Noise unknown sets and writes a preview PNG.
//!
//! `cargo run --example unknown_sets -- [out_dir]`

use std::path::{Path, PathBuf};

use openset_kd::datasets::{load_dataset, LabeledImage, synthesize_mnist_noise, synthesize_noise, to_batch};
use openset_kd::recommender::write_grid_png;

fn main() -> openset_kd::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/examples".into()));
    std::fs::create_dir_all(&out)?;
    let root = std::env::var("OPENSET_DATA").unwrap_or_else(|_| "data".into());
    let mnist = load_dataset("mnist", Path::new(&root))?;
    let noise = synthesize_noise(mnist.test.len(), mnist.shape, 7)?;
    let mixed = synthesize_mnist_noise(&mnist, &noise)?;
    println!("{} test digits, {} noise images, {} superimposed", mnist.test.len(), noise.test.len(), mixed.test.len());

    // first 8 of each: digits, noise, superimposed
    let rows: Vec<&LabeledImage> =
        [&mnist.test, &noise.test, &mixed.test].into_iter().flat_map(|set| set.iter().take(8)).collect();
    let path = out.join("unknown-sets.png");
    write_grid_png(&to_batch(mnist.shape, &rows), 3, &path)?;
    println!("preview: {}", path.display());
    Ok(())
}
