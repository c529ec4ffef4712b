//! Data side of the pipeline: rasters, masks, augmentation, the 1:2 split/merge
//! algebra, segmenters and dataset manifests.

mod augment;
mod cityscapes;
mod grid;
pub mod io;
mod manifest;
mod mask;
mod profile;
mod segmenter;
pub mod synthetic;
mod types;

pub use augment::{augment, augment_with, flip_sample, resize_layout, resize_mask, resize_pixels, AugmentConfig, AugmentParams};
pub use cityscapes::{cityscapes_merge, cityscapes_split};
pub use manifest::{parse_manifest, Manifest, ManifestRecord, Split};
pub use mask::{apply_mask, composite_pixels, composite_tensor, known_columns, make_right_mask, mask_pixels, mask_with_known_columns};
pub use profile::{DatasetProfile, Palette};
pub use segmenter::{AnnotationOracle, ConstantSegmenter, PrecomputedLayouts, SegmentInput, Segmenter};
pub use types::{BinaryMask, ImageSample, MaskedLayout, Pixels, SemanticLayout};
