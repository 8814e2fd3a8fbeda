//! Generator with normalized edge attention, and the adversarial discriminator.

mod discriminator;
mod generator;
pub mod layers;
mod nea;
mod params;

pub use discriminator::{DiscBlock, Discriminator, DiscriminatorConfig, LEAKY_SLOPE, MIN_INPUT_SIDE};
pub use generator::{upsample_factors, Generator, GeneratorConfig, Upsample};
pub use layers::NormSettings;
pub use nea::{Conditioner, EdgeEncoder, HybridEdgeResBlock, NeaBlock, NeaTrace};
pub use params::{Bound, ModelParams, ParamBuilder, ParamEntry, ParamId, ParamKind, PRELU_INIT};

/// Forward mode: batch statistics (train) or running statistics (eval).
pub use crate::tensor::BatchNormMode as Mode;
