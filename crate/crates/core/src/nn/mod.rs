//! Generator, discriminator, and frozen feature extractor.

pub mod discriminator;
pub mod features;
pub mod generator;
pub mod layers;
pub mod params;

pub use discriminator::{decision, Discriminator, DiscriminatorConfig};
pub use features::{ConvFeatureExtractor, FeatureExtractor, IdentityExtractor, Provenance};
pub use generator::{Generator, GeneratorConfig};
pub use params::{ParamBuilder, ParamStore};
