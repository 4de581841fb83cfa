//! Group-equivariant point cloud feature extractors.
//!
//! Point cloud layers in the PointNet++ and PointConv families are lifted to
//! feature maps on `P × G` for a finite rotation group `G`. Every lifted layer
//! commutes with rigid motions in `ℝ³ ⋊ G`, and pooling over the group axis
//! yields invariant predictions.
//!
//! Module map:
//!
//! - [`group_algebra`]: finite rotation groups, rigid motions and their actions.
//! - [`diffcore`]: a small reverse-mode autodiff tape, MLPs and the Adam optimizer.
//! - [`cloud_ops`]: point cloud containers, farthest point sampling and kNN grouping.
//! - [`equivariant_layers`]: lifting, the lifted grouping layers, pooling and upsampling.
//! - [`models`]: classification and segmentation networks.
//! - [`data_io`]: synthetic datasets, file formats, mesh sampling and augmentation.
//! - [`harness`]: training, evaluation and verification commands behind the `gpx` CLI.

pub mod cloud_ops;
pub mod data_io;
pub mod diffcore;
pub mod equivariant_layers;
mod error;
pub mod group_algebra;
pub mod harness;
pub mod models;

pub use error::{Error, Result};
