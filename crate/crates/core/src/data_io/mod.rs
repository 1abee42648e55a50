//! Scan, image and calibration ingestion, the perturbation protocol, and
//! synthetic scenes with exact ground truth.

mod dataset;
mod kitti;
mod perturb;
mod rings;
mod synthetic;

pub use dataset::{
    list_frames, sequence_dir, write_kitti_frame, FrameFiles, TEST_SEQUENCES, TRAIN_SEQUENCES,
};
pub use kitti::{
    decode_velodyne, encode_velodyne, load_calib, load_camera_frame, load_kitti_scan,
    parse_calib, save_kitti_scan, save_png_rgb, scan_from_records, KittiCalib,
};
pub use perturb::{apply_perturbation, Perturbation, PerturbationStage};
pub use rings::{infer_rings, infer_rings_theta_bins, RingMode};
pub use synthetic::{
    generate_synthetic_scene, lidar_to_camera_axes, parse_scene_config, IntrinsicsDoc,
    Primitive, SceneConfig, SurfacePattern, SyntheticScene,
};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Vec3};

/// Laser count of the HDL-64E used by KITTI.
pub const HDL64_RINGS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub position: Vec3,
    /// Unitless return intensity in `[0, 1]`.
    pub reflectance: f64,
    pub ring: u16,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, reflectance: f64, ring: u16) -> Self {
        Self {
            position: Vec3::new(x, y, z),
            reflectance,
            ring,
        }
    }
}

/// A LiDAR sweep: the 3D side of the registration problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    points: Vec<LidarPoint>,
    num_rings: usize,
}

impl LidarScan {
    pub fn new(points: Vec<LidarPoint>, num_rings: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyScan);
        }
        if num_rings == 0 || num_rings > u16::MAX as usize + 1 {
            return Err(Error::Contract(format!("invalid ring count {num_rings}")));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Format(format!("point {i} has non-finite coordinates")));
            }
            if !(0.0..=1.0).contains(&p.reflectance) {
                return Err(Error::Format(format!(
                    "point {i} reflectance {} outside [0, 1]",
                    p.reflectance
                )));
            }
            if p.ring as usize >= num_rings {
                return Err(Error::Contract(format!(
                    "point {i} ring {} >= ring count {num_rings}",
                    p.ring
                )));
            }
        }
        Ok(Self { points, num_rings })
    }

    pub fn points(&self) -> &[LidarPoint] {
        &self.points
    }

    pub fn num_rings(&self) -> usize {
        self.num_rings
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Option<&LidarPoint> {
        self.points.get(index)
    }

    /// Applies `f` to every position, keeping reflectance and ring.
    pub fn map_positions(&self, f: impl Fn(&Vec3) -> Vec3) -> LidarScan {
        LidarScan {
            points: self
                .points
                .iter()
                .map(|p| LidarPoint {
                    position: f(&p.position),
                    ..*p
                })
                .collect(),
            num_rings: self.num_rings,
        }
    }
}

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract("image dimensions must be positive".into()));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Contract(format!(
                "RGB buffer of {} bytes does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub image: RgbImage,
    pub intrinsics: Intrinsics,
    pub frame_id: u64,
}
