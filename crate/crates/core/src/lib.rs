//! Skeleton-conditioned hand gesture-to-gesture translation.
//!
//! The crate covers the full pipeline: hand pose annotations and their
//! conditioning maps, a U-shaped generator with dual patch discriminators,
//! the reconstruction, cycle, identity, and adversarial objectives, paired
//! dataset construction, a seeded training loop with checkpoints, and the
//! evaluation metrics (MSE, PSNR, IS, FID, FRD).

pub mod dataset;
pub mod error;
pub mod image_tensor;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pose;
pub mod raster;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use image_tensor::Image;
pub use pose::{HandPose, Keypoint};
pub use raster::{ConditioningMap, RasterParams, Variant};
pub use train::{TrainConfig, TrainState};
