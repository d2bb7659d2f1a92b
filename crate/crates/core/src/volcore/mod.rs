//! Volumetric images: storage, VVF files, resampling, cropping and a
//! threshold-based mask fallback.

mod resample;
mod segment;
mod volume;
mod vvf;

pub use resample::{
    crop, crop_box, crop_mask, crop_to_mask, mask_bounding_box, resample_isotropic, resize_mask_nearest,
    resize_trilinear,
};
pub use segment::naive_lung_mask;
pub use volume::{slice_extract, Mask, Slice2D, Volume, VoxelCoord};
pub use vvf::{load_mask, load_volume, read_header, save_mask, save_volume, volume_stem, Dtype, VvfHeader};
