//! Corpus ingestion, augmentation, splitting and training-set curation.

mod augment;
mod curate;
pub mod image_io;
mod manifest;
mod sample;
mod split;
mod synth;

pub use augment::{augment, transform, AugmentParams, AugmentPolicy};
pub use curate::{curate_training_set, merge_pseudo, Curated, CurationLedger, Setting, TrainingSetSpec};
pub use manifest::{attach_hidden_truth, load_corpus, load_manifest, write_corpus, write_manifest, write_truth};
pub use sample::{Class, ClassCounts, Dataset, Image, LabelSource, Sample, Tripwire};
pub use split::{split_train_eval, TRAIN_FRACTION};
pub use synth::{generate as generate_synthetic, SynthConfig};
