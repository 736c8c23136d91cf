//! Bird's-eye-view rasterization of simulator states.

pub mod downsample;
pub mod fill;
pub mod png_io;
pub mod render;
pub mod scenes;
pub mod spec;

pub use downsample::{block_sums, downsample};
pub use render::{render_future_mask, render_input, world_to_pixel, BevImage, BinaryMask, EgoFrame};
pub use spec::{BevSpec, ColorTable};
