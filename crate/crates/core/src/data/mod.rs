//! Dataset ingestion and desk-scale generators.

mod bundle;
mod idx;
mod split;
mod synthetic;
mod tabular;

pub use bundle::{
    load_feature_bundle, FeatureBundle, BUNDLE_MAGIC, BUNDLE_VERSION, META_BASE_LOSS, META_BASE_TRAIN_LOSS,
    META_OLD_LOSS, META_SOURCE_MODEL,
};
pub use idx::{
    load_idx, parse_images, parse_labels, write_idx_images, write_idx_labels, IDX_CLASSES, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use split::{split, SplitSpec};
pub use synthetic::{gen_synthetic, SyntheticKind};
pub use tabular::{load_csv, standardize};
