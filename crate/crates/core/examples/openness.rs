//! Openness of the benchmark protocols and a seeded known/unknown split.
//!
//! `cargo run --example openness -- [seed]`

use openset_kd::datasets::{make_open_set_split, openness};

fn main() -> openset_kd::error::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    println!("{:<28} {:>5} {:>5} {:>5} {:>9}", "protocol", "C_TR", "C_TE", "C_R", "openness");
    let rows = [
        ("MNIST / SVHN / CIFAR10", 6, 10, 6),
        ("CIFAR+10", 4, 14, 4),
        ("CIFAR+50", 4, 54, 4),
        ("TinyImageNet", 20, 200, 20),
        ("MNIST + 47 letters", 10, 57, 10),
    ];
    for (name, tr, te, r) in rows {
        println!("{name:<28} {tr:>5} {te:>5} {r:>5} {:>8.1}%", 100.0 * openness(tr, te, r)?);
    }
    let split = make_open_set_split(&(0..10).collect::<Vec<_>>(), 6, seed)?;
    println!("\nseed {seed}: known {:?}, unknown {:?}", split.known_class_ids, split.unknown_class_ids);
    print!("{}", split.to_manifest());
    Ok(())
}
