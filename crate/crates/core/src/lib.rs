//! Virtual unwrapping and ink detection for CT volumes of papyrus: synthetic
//! phantoms, surface tracing, conformal flattening, label alignment, a patch
//! classifier and evaluation metrics.

pub mod evaluation;
pub mod ink_model;
pub mod labeling;
pub mod mesh;
pub mod phantom;
pub mod raster;
pub mod segmentation;
pub mod unwrap;
pub mod volume;

pub use evaluation::{CharMetrics, PixelMetrics, Transcription};
pub use ink_model::{ModelParams, PredictionImage, Region, TrainConfig};
pub use labeling::{AffineTransform2D, LabelImage};
pub use mesh::SurfaceMesh;
pub use phantom::{GroundTruth, PhantomSpec, SurfacePhoto};
pub use raster::{Image2, Mask, Rect};
pub use volume::{IntensityWindow, Slab, VoxelGrid};
pub use segmentation::ParticleChain;
pub use unwrap::{FlattenedMesh, SurfaceVolume, TextureImage};
