//! Seeded image transforms.
//!
//! All randomized transforms take the random stream explicitly, so each is a
//! pure function of its input and the stream.

pub(crate) mod geometric;
mod jigsaw;
mod rcm;

pub use geometric::{center_crop, random_crop, random_crop_offsets, resize, rotate90, Preprocess, RotationLabel};
pub use jigsaw::{extract_jigsaw_patches, PatchSet};
pub use rcm::{
    apply_rcm, location_targets, permutation_from_offsets, rcm_permutation, reassemble, JigsawPermutation,
    LocationTargets,
};
