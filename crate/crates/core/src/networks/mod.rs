//! The four trainable networks (teacher, student, generator, discriminator)
//! and their checkpoint container.

mod checkpoint;
mod classifier;
mod params;
mod recommender_nets;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use classifier::{build_classifier, Backbone, ClassifierNet, ClassifierSpec};
pub use params::{glorot_uniform, normal, uniform_fan_in, Bound, Param, ParamId, ParamSet};
pub use recommender_nets::{
    build_discriminator, build_generator, DiscriminatorNet, DiscriminatorSpec, GeneratorNet, GeneratorSpec,
};

/// Negative slope of every leaky rectifier in the recommender networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Rows evaluated per graph when running inference over large batches.
pub(crate) const INFERENCE_CHUNK: usize = 256;
