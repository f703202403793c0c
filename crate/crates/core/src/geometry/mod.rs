//! Camera math and the point-cloud observation pipeline: back-projection,
//! clipping, ground removal, resampling, frame stacking and augmentation.

mod augment;
mod camera;
mod cloud;
mod process;

pub use augment::{augment, augment_with, pixel_shift_augment, shift_image, AugmentKind, AugmentSpec};
pub use camera::{CameraModel, Projection};
pub use cloud::PointCloud;
pub use process::{back_project, depth_clip, ground_split, sample_or_pad, stack_frames, Raster};
