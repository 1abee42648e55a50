//! KITTI odometry formats: velodyne `.bin`, `calib.txt`, PNG frames.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra as na;

use super::rings::{infer_rings, infer_rings_theta_bins, RingMode};
use super::{CameraFrame, LidarPoint, LidarScan, RgbImage, HDL64_RINGS};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Mat3, RigidTransform, Vec3};
use crate::io_util::{read_bytes, read_string, write_atomic};

const RECORD_BYTES: usize = 16;

/// Splits a velodyne buffer into `(x, y, z, reflectance)` float32 records.
pub fn decode_velodyne(bytes: &[u8]) -> Result<Vec<[f32; 4]>> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "velodyne buffer of {} bytes is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(RECORD_BYTES)
        .map(|rec| {
            let mut out = [0f32; 4];
            for (k, field) in rec.chunks_exact(4).enumerate() {
                out[k] = f32::from_le_bytes([field[0], field[1], field[2], field[3]]);
            }
            out
        })
        .collect())
}

pub fn encode_velodyne(records: &[[f32; 4]]) -> Vec<u8> {
    records
        .iter()
        .flat_map(|r| r.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

/// Builds a scan from raw records, reconstructing ring ids.
pub fn scan_from_records(records: &[[f32; 4]], mode: RingMode) -> Result<LidarScan> {
    if records.is_empty() {
        return Err(Error::EmptyScan);
    }
    let positions: Vec<Vec3> = records
        .iter()
        .map(|r| Vec3::new(r[0] as f64, r[1] as f64, r[2] as f64))
        .collect();
    let rings = match mode {
        RingMode::AzimuthWrap => infer_rings(&positions, HDL64_RINGS),
        RingMode::ThetaBins => infer_rings_theta_bins(&positions, HDL64_RINGS),
    };
    let points = records
        .iter()
        .zip(positions)
        .zip(rings)
        .map(|((r, position), ring)| LidarPoint {
            position,
            reflectance: r[3] as f64,
            ring,
        })
        .collect();
    LidarScan::new(points, HDL64_RINGS)
}

pub fn load_kitti_scan(path: &Path, mode: RingMode) -> Result<LidarScan> {
    let bytes = read_bytes(path)?;
    scan_from_records(&decode_velodyne(&bytes)?, mode)
}

/// Writes positions and reflectance as float32 records; ring ids are dropped
/// as in the original format.
pub fn save_kitti_scan(path: &Path, scan: &LidarScan) -> Result<()> {
    let records: Vec<[f32; 4]> = scan
        .points()
        .iter()
        .map(|p| {
            [
                p.position.x as f32,
                p.position.y as f32,
                p.position.z as f32,
                p.reflectance as f32,
            ]
        })
        .collect();
    write_atomic(path, &encode_velodyne(&records))
}

/// Projection and extrinsic rows of an odometry `calib.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiCalib {
    /// Left color camera projection, row-major 3×4.
    pub p2: [f64; 12],
    /// Velodyne → cam0, row-major 3×4.
    pub tr: [f64; 12],
}

impl KittiCalib {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let p = &self.p2;
        Intrinsics::new(Mat3::new(
            p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10],
        ))
    }

    /// Velodyne → cam2 extrinsic: `Tr` followed by the cam0 → cam2 offset
    /// encoded in the fourth column of `P2` (`K⁻¹ · P2[:, 3]`).
    pub fn cam_from_velo(&self) -> Result<RigidTransform> {
        let t = &self.tr;
        let velo_to_cam0 = RigidTransform::from_approx(
            Mat3::new(t[0], t[1], t[2], t[4], t[5], t[6], t[8], t[9], t[10]),
            Vec3::new(t[3], t[7], t[11]),
        )?;
        let k = self.intrinsics()?;
        let k_inv = k
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::Format("P2 intrinsic block is singular".into()))?;
        let offset = k_inv * na::Vector3::new(self.p2[3], self.p2[7], self.p2[11]);
        Ok(RigidTransform::from_translation(offset).compose(&velo_to_cam0))
    }

    pub fn to_text(&self) -> String {
        let row = |key: &str, v: &[f64; 12]| {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            format!("{key}: {}\n", vals.join(" "))
        };
        let mut out = String::new();
        for key in ["P0", "P1"] {
            let mut p0 = self.p2;
            p0[3] = 0.0;
            p0[7] = 0.0;
            p0[11] = 0.0;
            out.push_str(&row(key, &p0));
        }
        out.push_str(&row("P2", &self.p2));
        out.push_str(&row("P3", &self.p2));
        out.push_str(&row("Tr", &self.tr));
        out
    }

    pub fn from_parts(k: &Intrinsics, cam_from_velo: &RigidTransform) -> Self {
        let m = k.matrix();
        let mut p2 = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                p2[r * 4 + c] = m[(r, c)];
            }
        }
        let r = cam_from_velo.rotation();
        let t = cam_from_velo.translation();
        let mut tr = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                tr[i * 4 + j] = r[(i, j)];
            }
            tr[i * 4 + 3] = t[i];
        }
        KittiCalib { p2, tr }
    }
}

/// Parses `KEY: v1 v2 ...` lines. `P2` and `Tr` (or `Tr_velo_to_cam`) must be
/// present with 12 values each; other keys are ignored.
pub fn parse_calib(text: &str) -> Result<KittiCalib> {
    let mut rows: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("calib line {} lacks `KEY:`", lineno + 1)))?;
        let values = rest
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::Format(format!("calib line {}: bad number `{tok}`", lineno + 1))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.insert(key.trim(), values);
    }
    let take12 = |keys: &[&str]| -> Result<[f64; 12]> {
        let v = keys
            .iter()
            .find_map(|k| rows.get(k))
            .ok_or_else(|| Error::Format(format!("calib is missing `{}`", keys[0])))?;
        v.as_slice()
            .try_into()
            .map_err(|_| Error::Format(format!("`{}` needs 12 values, got {}", keys[0], v.len())))
    };
    Ok(KittiCalib {
        p2: take12(&["P2"])?,
        tr: take12(&["Tr", "Tr_velo_to_cam"])?,
    })
}

pub fn load_calib(path: &Path) -> Result<KittiCalib> {
    parse_calib(&read_string(path)?)
}

pub fn load_camera_frame(path: &Path, intrinsics: Intrinsics, frame_id: u64) -> Result<CameraFrame> {
    let bytes = read_bytes(path)?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let image = RgbImage::new(h as usize, w as usize, decoded.into_raw())?;
    Ok(CameraFrame {
        image,
        intrinsics,
        frame_id,
    })
}

pub fn save_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::Contract("RGB buffer size mismatch".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CALIB: &str = "P0: 7.188560000000e+02 0.000000000000e+00 6.071928000000e+02 0.000000000000e+00 0.000000000000e+00 7.188560000000e+02 1.852157000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P1: 7.188560000000e+02 0.000000000000e+00 6.071928000000e+02 -3.861448000000e+02 0.000000000000e+00 7.188560000000e+02 1.852157000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P2: 7.188560000000e+02 0.000000000000e+00 6.071928000000e+02 4.538225000000e+01 0.000000000000e+00 7.188560000000e+02 1.852157000000e+02 -1.130887000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 3.779761000000e-03
P3: 7.188560000000e+02 0.000000000000e+00 6.071928000000e+02 -3.372877000000e+02 0.000000000000e+00 7.188560000000e+02 1.852157000000e+02 2.369057000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 4.915215000000e-03
Tr: 4.276802385584e-04 -9.999672484946e-01 -8.084491683471e-03 -1.198459927713e-02 -7.210626507497e-03 8.081198471645e-03 -9.999413164504e-01 -5.403984729748e-02 9.999738645903e-01 4.859485810390e-04 -7.206933692422e-03 -2.921968648686e-01
";

    #[test]
    fn single_record_decodes() {
        let bytes = encode_velodyne(&[[1.0, 0.0, 0.0, 0.5]]);
        assert_eq!(bytes.len(), 16);
        let scan = scan_from_records(&decode_velodyne(&bytes).unwrap(), RingMode::AzimuthWrap)
            .unwrap();
        assert_eq!(scan.len(), 1);
        assert_eq!(scan.points()[0].reflectance, 0.5);
        assert_eq!(scan.points()[0].position, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn misaligned_length_is_format_error() {
        assert!(matches!(decode_velodyne(&[0u8; 17]), Err(Error::Format(_))));
    }

    #[test]
    fn empty_file_is_empty_scan() {
        let recs = decode_velodyne(&[]).unwrap();
        assert!(matches!(
            scan_from_records(&recs, RingMode::AzimuthWrap),
            Err(Error::EmptyScan)
        ));
    }

    #[test]
    fn calib_parses_real_layout() {
        let c = parse_calib(CALIB).unwrap();
        let k = c.intrinsics().unwrap();
        assert_eq!(k.fx(), 718.856);
        assert_eq!(k.cy(), 185.2157);
        let t = c.cam_from_velo().unwrap();
        // LiDAR forward axis becomes camera +z
        let fwd = t.rotation() * Vec3::new(1.0, 0.0, 0.0);
        assert!(fwd.z > 0.99);
        // cam2 sits ~6 cm left of cam0
        let offset = c.intrinsics().unwrap().matrix().try_inverse().unwrap()
            * na::Vector3::new(c.p2[3], c.p2[7], c.p2[11]);
        assert!((offset.x - 0.0599).abs() < 1e-3);
    }

    #[test]
    fn calib_missing_row_or_bad_count() {
        assert!(parse_calib("P2: 1 2 3\nTr: 1 2 3 4 5 6 7 8 9 10 11 12").is_err());
        assert!(parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0").is_err());
        assert!(parse_calib("garbage line").is_err());
        assert!(parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 x").is_err());
    }

    #[test]
    fn calib_text_roundtrip() {
        let k = Intrinsics::from_params(163.0, 163.0, 255.5, 79.5).unwrap();
        let t = RigidTransform::rot_z(0.3)
            .compose(&RigidTransform::from_translation(Vec3::new(0.1, -0.2, 0.3)));
        let c = KittiCalib::from_parts(&k, &t);
        let back = parse_calib(&c.to_text()).unwrap();
        assert_eq!(back.intrinsics().unwrap(), k);
        let t2 = back.cam_from_velo().unwrap();
        assert!((t2.rotation() - t.rotation()).norm() < 1e-12);
        assert!((t2.translation() - t.translation()).norm() < 1e-12);
    }
}
