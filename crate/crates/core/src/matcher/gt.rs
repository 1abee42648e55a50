//! Ground-truth correspondences from the known extrinsic.

use crate::data_io::LidarScan;
use crate::geometry::{project_point, Intrinsics, RigidTransform};
use crate::image_ops::EdgeSet;
use crate::projection::ProjectionMap;

use super::Target;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// `(i, nearest j)` for every reflectance edge with a camera edge closer
    /// than ε; only the first occurrence of a padded pixel takes part.
    pub pairs: Vec<(usize, usize)>,
    pub sigma_r: Vec<f64>,
    pub sigma_c: Vec<f64>,
}

impl GroundTruth {
    pub fn into_target(self) -> Target {
        Target {
            pairs: self.pairs,
            sigma_r: self.sigma_r,
            sigma_c: self.sigma_c,
        }
    }
}

/// Projected pixel `(u, v)` of every reflectance edge, `None` when the pixel
/// is unoccupied or the point lies behind the camera.
fn projected(
    map: &ProjectionMap,
    scan: &LidarScan,
    edges_r: &EdgeSet,
    t_gt: &RigidTransform,
    k: &Intrinsics,
) -> Vec<Option<(f64, f64)>> {
    edges_r.pixels()[..edges_r.real_count()]
        .iter()
        .map(|&(r, c)| {
            let idx = map.point_index(r, c)?;
            project_point(k, t_gt, &scan.point(idx)?.position)
        })
        .collect()
}

fn finish(mut gt: GroundTruth, edges_r: &EdgeSet, edges_c: &EdgeSet) -> GroundTruth {
    // padding copies share their pixel's flag
    for i in edges_r.real_count()..edges_r.len() {
        gt.sigma_r[i] = gt.sigma_r[edges_r.canonical_index(i)];
    }
    for j in edges_c.real_count()..edges_c.len() {
        gt.sigma_c[j] = gt.sigma_c[edges_c.canonical_index(j)];
    }
    gt
}

/// Lifts every reflectance edge pixel, projects it with `T_gt` and `K`, and
/// pairs it with the nearest camera edge pixel closer than `epsilon`
/// (ties to the smaller index). `σ_gt` flags every edge in at least one
/// pair within `epsilon`.
pub fn gt_correspondences(
    map: &ProjectionMap,
    scan: &LidarScan,
    edges_r: &EdgeSet,
    edges_c: &EdgeSet,
    t_gt: &RigidTransform,
    k: &Intrinsics,
    epsilon: f64,
) -> GroundTruth {
    let proj = projected(map, scan, edges_r, t_gt, k);
    let real_c = &edges_c.pixels()[..edges_c.real_count()];
    let (max_r, max_c) = real_c
        .iter()
        .fold((0, 0), |(a, b), &(r, c)| (a.max(r), b.max(c)));
    let (h, w) = (max_r + 1, max_c + 1);
    let mut lookup = vec![u32::MAX; h * w];
    for (j, &(r, c)) in real_c.iter().enumerate().rev() {
        lookup[r * w + c] = j as u32;
    }
    let reach = epsilon.ceil().max(0.0) as isize;
    let mut gt = GroundTruth {
        pairs: Vec::new(),
        sigma_r: vec![0.0; edges_r.len()],
        sigma_c: vec![0.0; edges_c.len()],
    };
    for (i, uv) in proj.iter().enumerate() {
        let Some((u, v)) = *uv else { continue };
        if !(u.is_finite() && v.is_finite()) {
            continue;
        }
        let (r0, c0) = (v.round() as isize, u.round() as isize);
        let mut best: Option<(f64, usize)> = None;
        for r in r0 - reach - 1..=r0 + reach + 1 {
            for c in c0 - reach - 1..=c0 + reach + 1 {
                if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
                    continue;
                }
                let j = lookup[r as usize * w + c as usize];
                if j == u32::MAX {
                    continue;
                }
                let dist = ((c as f64 - u).powi(2) + (r as f64 - v).powi(2)).sqrt();
                if dist < epsilon {
                    let j = j as usize;
                    gt.sigma_c[j] = 1.0;
                    if best.map_or(true, |(bd, bj)| dist < bd || (dist == bd && j < bj)) {
                        best = Some((dist, j));
                    }
                }
            }
        }
        if let Some((_, j)) = best {
            gt.sigma_r[i] = 1.0;
            gt.pairs.push((i, j));
        }
    }
    finish(gt, edges_r, edges_c)
}

/// All-pairs reference for [`gt_correspondences`].
pub fn brute_force_gt(
    map: &ProjectionMap,
    scan: &LidarScan,
    edges_r: &EdgeSet,
    edges_c: &EdgeSet,
    t_gt: &RigidTransform,
    k: &Intrinsics,
    epsilon: f64,
) -> GroundTruth {
    let proj = projected(map, scan, edges_r, t_gt, k);
    let mut gt = GroundTruth {
        pairs: Vec::new(),
        sigma_r: vec![0.0; edges_r.len()],
        sigma_c: vec![0.0; edges_c.len()],
    };
    for (i, uv) in proj.iter().enumerate() {
        let Some((u, v)) = *uv else { continue };
        let mut best: Option<(f64, usize)> = None;
        for (j, &(r, c)) in edges_c.pixels()[..edges_c.real_count()].iter().enumerate() {
            let dist = ((c as f64 - u).powi(2) + (r as f64 - v).powi(2)).sqrt();
            if dist < epsilon {
                gt.sigma_c[j] = 1.0;
                if best.map_or(true, |(bd, _)| dist < bd) {
                    best = Some((dist, j));
                }
            }
        }
        if let Some((_, j)) = best {
            gt.sigma_r[i] = 1.0;
            gt.pairs.push((i, j));
        }
    }
    finish(gt, edges_r, edges_c)
}
