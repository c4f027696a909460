//! Patch extraction, normalization, augmentation, labeling and dataset I/O.

mod augment;
mod dataset;
mod grid;
mod image;
mod labeling;
mod manifest;
mod mask;
mod pairs;
mod patch;
mod split;

pub use augment::{augment, Dihedral};
pub use dataset::{assemble_study, load_pair_sets, PairSets, StudyPatches};
pub use grid::{ingest_patch_grid, write_patch_grid, PatchGridDataset, GRID_PATCH, GRID_SIDE};
pub use image::{load_gray, save_gray16, Image};
pub use labeling::{label_candidate, CandidateLabel, Labeling, DEFAULT_DELTA};
pub use manifest::{DetectionCandidate, GroundTruthLesion, Manifest, Polygon, Study, View};
pub use mask::{dice, polygon_bbox, polygon_dice, rasterize_polygon, Mask};
pub use pairs::{make_training_pairs, LabeledPatch, NegativeSource, PatchPair, PatchSource};
pub use patch::{
    enlarge_bbox, extract_patch, normalize_patch, resize_bilinear, BBox, EnlargeMode, NormalizedPatch, PATCH_SIZE,
};
pub use split::{split_by_patient, Split, SplitManifest, TRAIN_RATIO};

pub(crate) use dataset::resolve;
