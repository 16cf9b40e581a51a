//! Volumetric segmentation laboratory.
//!
//! The crate covers the whole path from a raw CT-like volume to a scored
//! segmentation:
//!
//! * [`volume`]: grids, intensity windowing, cropping, rotation and resampling.
//! * [`nn`]: a small 3-D encoder-decoder network with exact backpropagation.
//! * [`metrics`]: Dice, Hausdorff distance, sample statistics and dose-to-structure.
//! * [`pipeline`]: training, thresholded inference, window/threshold sweeps,
//!   eye-centred cropping and bounding-box merging.
//! * [`phantom`]: seeded synthetic head phantoms and toy dose grids.
//! * [`io`]: the `VVOL1` volume format, run configuration and report writers.
//!
//! Inner loops run on rayon when the `parallel` feature is enabled (the
//! default); without it every kernel falls back to a sequential loop with
//! bit-identical results.

pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Axis, BinaryMask, CropBox, Grid, LabelMap, Volume, WindowSpec};
