pub mod gradients;
