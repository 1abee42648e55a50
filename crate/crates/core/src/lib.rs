//! LiDAR-to-camera registration through reflectance-map edge matching.
//!
//! A point cloud is projected to a ring × azimuth reflectance map, vertical
//! edge pixels are extracted from the map and from the red channel of the
//! camera image, described, matched through a dual-softmax partial
//! assignment, lifted to 3D–2D correspondences and solved with EPnP inside
//! RANSAC.

pub mod data_io;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image_ops;
pub mod io_util;
pub mod matcher;
pub mod pipeline;
pub mod pose;
pub mod projection;

pub use error::{Error, ErrorClass, Result};
