//! Mask refinement applied after prediction.

mod aoi;
mod barrier;
mod bmc;
mod patches;

pub use aoi::{aoi_filter, build_aoi, AreaOfInterest};
pub use barrier::{barrier_filter, is_downstream, BarrierOutcome};
pub use bmc::{bmc_threshold, BmcConfig};
pub use patches::{crop_field, merge_patches, process_patches, split_patches, PatchGrid, PixelRect};
