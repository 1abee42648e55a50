//! Laser (ring) index reconstruction. KITTI velodyne files carry no laser id.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::Error;
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RingMode {
    /// Count backward azimuth wraps in on-disk scan order.
    #[default]
    AzimuthWrap,
    /// Bin the polar angle; for clouds whose order has been shuffled.
    ThetaBins,
}

impl FromStr for RingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "azimuth-wrap" => Ok(RingMode::AzimuthWrap),
            "theta-bins" => Ok(RingMode::ThetaBins),
            other => Err(Error::Config(format!("unknown ring mode `{other}`"))),
        }
    }
}

/// Ring index per point: starts at 0 and increments whenever the azimuth
/// drops by more than π from one point to the next. Saturates at
/// `num_rings - 1`.
pub fn infer_rings(points: &[Vec3], num_rings: usize) -> Vec<u16> {
    let max_ring = num_rings.saturating_sub(1).min(u16::MAX as usize) as u16;
    let mut ring: u16 = 0;
    let mut prev: Option<f64> = None;
    points
        .iter()
        .map(|p| {
            let phi = p.y.atan2(p.x);
            if let Some(prev_phi) = prev {
                if prev_phi - phi > PI && ring < max_ring {
                    ring += 1;
                }
            }
            prev = Some(phi);
            ring
        })
        .collect()
}

/// Uniform bins of θ = arccos(z / r) between the extremes of the cloud;
/// ring 0 holds the highest-elevation (smallest θ) points.
pub fn infer_rings_theta_bins(points: &[Vec3], num_rings: usize) -> Vec<u16> {
    let thetas: Vec<Option<f64>> = points
        .iter()
        .map(|p| {
            let r = p.norm();
            (r > 0.0).then(|| (p.z / r).clamp(-1.0, 1.0).acos())
        })
        .collect();
    let (lo, hi) = thetas
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });
    let max_ring = num_rings.saturating_sub(1).min(u16::MAX as usize);
    let span = hi - lo;
    thetas
        .iter()
        .map(|t| match t {
            Some(t) if span > 0.0 => {
                let bin = ((t - lo) / span * num_rings as f64).floor() as usize;
                bin.min(max_ring) as u16
            }
            _ => 0,
        })
        .collect()
}
