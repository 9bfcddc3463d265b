//! Volumetric segmentation benchmarking toolkit.
//!
//! Grids and NRRD I/O live in [`volume`] and [`nrrd`]; per-case scoring in
//! [`metrics`]; scan quality in [`quality`]; mask clean-up in
//! [`postprocess`]; intensity transforms and augmentation in [`preprocess`];
//! the localize/crop/segment/pad geometry and its sweeps in [`pipeline`];
//! cross-team statistics in [`stats`] and their file formats in [`report`];
//! synthetic test data in [`phantom`].

pub mod error;
pub mod metrics;
pub mod nrrd;
pub mod phantom;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod quality;
pub mod registry;
pub mod report;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Dims, IntensityType, Mask, Spacing, Volume, VolumeData, VoxelIndex};
