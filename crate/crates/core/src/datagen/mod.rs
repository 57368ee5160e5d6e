//! The mixed-feature data distribution and external dataset ingestion.
//!
//! Each input concatenates `M` patches. Patch `m` is the representation of
//! a feature name `z_m` drawn from the vocabulary: the feature's mean plus
//! a bounded uniform perturbation, passed through a randomly chosen affine
//! transform. The label is drawn from the normalized elementwise geometric
//! mean of the features' label distributions, which every generated example
//! also carries as exact ground truth.

mod external;
mod sample;
mod store;
mod transform;
mod vocab;

pub use external::{
    load_external, parse_csv, parse_idx_images, parse_idx_labels, ExternalSource, IDX_IMAGE_MAGIC,
    IDX_LABEL_MAGIC,
};
pub use sample::{
    feature_cooccurrence_stats, sample_dataset, sample_splits, FeatureCounts, MixedFeatureDataset,
    MixedFeatureExample, Split, SplitRange, SplitSizes,
};
pub use store::{load_dataset, save_dataset, ArrayEntry, DatasetManifest};
pub use transform::{AffineTransform, TransformSet};
pub use vocab::{
    geometric_mean, Cooccurrence, FeatureSpec, FeatureVocabulary, Layout, VocabularySpec,
};
