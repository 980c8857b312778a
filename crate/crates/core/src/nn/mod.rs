//! Miniature CNN backbones with classifier and projection heads.

pub mod checkpoint;
pub mod model;
pub mod preset;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{build_backbone, Model, TrainingMeta, NUM_CLASSES};
pub use preset::{BackbonePreset, Family, PROJECTION_DIM};
