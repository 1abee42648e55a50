//! 2D–2D matches → 3D–2D correspondences → pose by EPnP inside RANSAC.

mod epnp;
mod ransac;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::LidarScan;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, TransformDoc, Vec3};
use crate::image_ops::EdgeSet;
use crate::io_util::write_atomic_str;
use crate::matcher::CorrespondenceSet;
use crate::projection::{lift, ProjectionMap};

pub use epnp::{absolute_orientation, epnp, reprojection_error};
pub use ransac::{ransac_epnp, RansacConfig, DEFAULT_EPSILON_E};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence3d2d {
    /// LiDAR-frame point (after perturbation), meters.
    pub world: Vec3,
    /// Camera pixel `(u, v)` = `(col, row)`.
    pub pixel: (f64, f64),
}

impl Correspondence3d2d {
    pub fn new(world: Vec3, pixel: (f64, f64)) -> Self {
        Self { world, pixel }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lifted {
    pub correspondences: Vec<Correspondence3d2d>,
    /// `(i, j)` edge indices behind each correspondence.
    pub sources: Vec<(usize, usize)>,
    pub dropped_unoccupied: usize,
    pub dropped_duplicates: usize,
}

/// Lifts each match's reflectance edge pixel to its source point and pairs
/// it with the camera edge pixel. Padded (repeated) edges collapse onto
/// their first occurrence; a pair seen twice is kept once.
pub fn lift_correspondences(
    matches: &CorrespondenceSet,
    edges_r: &EdgeSet,
    edges_c: &EdgeSet,
    map: &ProjectionMap,
    scan: &LidarScan,
) -> Result<Lifted> {
    let mut out = Lifted {
        correspondences: Vec::new(),
        sources: Vec::new(),
        dropped_unoccupied: 0,
        dropped_duplicates: 0,
    };
    let mut seen = std::collections::HashSet::new();
    for m in &matches.pairs {
        if m.i >= edges_r.len() || m.j >= edges_c.len() {
            return Err(Error::Contract(format!("match ({}, {}) outside the edge sets", m.i, m.j)));
        }
        let key = (edges_r.canonical_index(m.i), edges_c.canonical_index(m.j));
        if !seen.insert(key) {
            out.dropped_duplicates += 1;
            continue;
        }
        let world = match lift(map, edges_r.pixels()[key.0], scan) {
            Ok(p) => p,
            Err(Error::NoCorrespondence { .. }) => {
                out.dropped_unoccupied += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let (row, col) = edges_c.pixels()[key.1];
        out.correspondences.push(Correspondence3d2d::new(world, (col as f64, row as f64)));
        out.sources.push(key);
    }
    if out.dropped_unoccupied + out.dropped_duplicates > 0 {
        log::debug!(
            "lift: dropped {} unoccupied, {} duplicate matches",
            out.dropped_unoccupied,
            out.dropped_duplicates
        );
    }
    if out.correspondences.len() < 4 {
        return Err(Error::InsufficientCorrespondences {
            found: out.correspondences.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub transform: RigidTransform,
    /// Indices into the input correspondences, ascending.
    pub inliers: Vec<usize>,
    pub reprojection_rmse: f64,
    pub iterations_used: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseDoc {
    rotation: [f64; 9],
    translation: [f64; 3],
    inliers: Vec<usize>,
    reprojection_rmse: f64,
    iterations: usize,
}

impl PoseEstimate {
    pub fn to_json(&self) -> String {
        let t = TransformDoc::from(&self.transform);
        let doc = PoseDoc {
            rotation: t.rotation,
            translation: t.translation,
            inliers: self.inliers.clone(),
            reprojection_rmse: self.reprojection_rmse,
            iterations: self.iterations_used,
        };
        serde_json::to_string_pretty(&doc).expect("plain data serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic_str(path, &self.to_json())
    }
}

pub fn parse_pose(text: &str) -> Result<PoseEstimate> {
    let doc: PoseDoc = serde_json::from_str(text).map_err(|e| Error::Format(format!("pose: {e}")))?;
    let transform = TransformDoc {
        rotation: doc.rotation,
        translation: doc.translation,
    }
    .to_transform()?;
    Ok(PoseEstimate {
        transform,
        inliers: doc.inliers,
        reprojection_rmse: doc.reprojection_rmse,
        iterations_used: doc.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::LidarPoint;
    use crate::matcher::Match;
    use crate::projection::{project, MapKind};

    fn setup() -> (LidarScan, ProjectionMap, EdgeSet, EdgeSet) {
        let pts: Vec<LidarPoint> = (0..6)
            .map(|k| LidarPoint::new(5.0, -1.0 + 0.4 * k as f64, 0.1 * k as f64, 0.5, k as u16))
            .collect();
        let scan = LidarScan::new(pts, 64).unwrap();
        let map = project(&scan, 1024, MapKind::Reflectance).unwrap();
        let px: Vec<(usize, usize)> = map.occupied_pixels().collect();
        let er = EdgeSet::from_ranked(px.clone(), vec![1.0; px.len()], 8).unwrap();
        let ec = EdgeSet::from_ranked((0..6).map(|k| (10 + k, 20 + 3 * k)).collect(), vec![1.0; 6], 8).unwrap();
        (scan, map, er, ec)
    }

    fn set(pairs: &[(usize, usize)]) -> CorrespondenceSet {
        CorrespondenceSet {
            pairs: pairs.iter().map(|&(i, j)| Match { i, j, confidence: 0.5 }).collect(),
        }
    }

    #[test]
    fn lifts_and_dedups_padding() {
        let (scan, map, er, ec) = setup();
        let l = lift_correspondences(&set(&[(0, 0), (1, 1), (2, 2), (3, 3), (5, 5), (6, 5), (7, 5)]), &er, &ec, &map, &scan).unwrap();
        assert_eq!(l.correspondences.len(), 5);
        assert_eq!(l.dropped_duplicates, 2);
        let i = l.sources.iter().position(|s| *s == (1, 1)).unwrap();
        assert_eq!(l.correspondences[i].world, lift(&map, er.pixels()[1], &scan).unwrap());
        assert_eq!(l.correspondences[i].pixel, (23.0, 11.0));
    }

    #[test]
    fn three_matches_is_an_error() {
        let (scan, map, er, ec) = setup();
        assert!(matches!(
            lift_correspondences(&set(&[(0, 0), (1, 1), (2, 2)]), &er, &ec, &map, &scan),
            Err(Error::InsufficientCorrespondences { found: 3 })
        ));
    }

    #[test]
    fn pose_json_roundtrip() {
        let p = PoseEstimate {
            transform: RigidTransform::rot_z(0.3),
            inliers: vec![1, 4, 9],
            reprojection_rmse: 0.75,
            iterations_used: 12,
        };
        let back = parse_pose(&p.to_json()).unwrap();
        assert_eq!(back.inliers, p.inliers);
        assert!(back.transform.rotation_angle_to(&p.transform) < 1e-12);
    }
}
