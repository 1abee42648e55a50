use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::epnp::{epnp, reprojection_error};
use super::{Correspondence3d2d, PoseEstimate};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, RigidTransform};

pub const DEFAULT_EPSILON_E: f64 = 6.0;
const SAMPLE_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    /// Inlier radius in pixels.
    pub epsilon_e: f64,
    pub max_iter: usize,
    pub confidence: f64,
    /// Inliers a hypothesis needs besides its own sample. A minimal sample
    /// is always consistent with the pose fitted to it, so only the other
    /// correspondences count as support.
    pub min_support: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            epsilon_e: DEFAULT_EPSILON_E,
            max_iter: 1000,
            confidence: 0.999,
            min_support: 4,
            seed: 0,
        }
    }
}

fn cmp_corr(a: &Correspondence3d2d, b: &Correspondence3d2d) -> Ordering {
    let ka = [a.world.x, a.world.y, a.world.z, a.pixel.0, a.pixel.1];
    let kb = [b.world.x, b.world.y, b.world.z, b.pixel.0, b.pixel.1];
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn inliers_of(t: &RigidTransform, k: &Intrinsics, corrs: &[Correspondence3d2d], eps: f64) -> Vec<usize> {
    (0..corrs.len())
        .filter(|&i| reprojection_error(t, k, &corrs[i]) < eps)
        .collect()
}

/// Iterations needed to draw one all-inlier sample with the given
/// confidence at inlier ratio `w`.
fn adaptive_bound(w: f64, confidence: f64, max_iter: usize) -> usize {
    let p_good = w.powi(SAMPLE_SIZE as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return max_iter;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, max_iter)
    } else {
        max_iter
    }
}

/// RANSAC over 4-point EPnP hypotheses with adaptive termination, then an
/// EPnP refit on the consensus set.
///
/// The input is first put in a canonical order, so the result depends only
/// on the set of correspondences and the seed.
pub fn ransac_epnp(corrs: &[Correspondence3d2d], k: &Intrinsics, cfg: &RansacConfig) -> Result<PoseEstimate> {
    if corrs.len() < SAMPLE_SIZE {
        return Err(Error::InsufficientCorrespondences { found: corrs.len() });
    }
    if !(cfg.epsilon_e > 0.0) || !(0.0..1.0).contains(&cfg.confidence) || cfg.max_iter == 0 {
        return Err(Error::Config("invalid RANSAC settings".into()));
    }
    let mut order: Vec<usize> = (0..corrs.len()).collect();
    order.sort_by(|&a, &b| cmp_corr(&corrs[a], &corrs[b]));
    let sorted: Vec<Correspondence3d2d> = order.iter().map(|&i| corrs[i]).collect();
    let n = sorted.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<usize>, RigidTransform)> = None;
    let mut bound = cfg.max_iter;
    let mut iter = 0;
    while iter < bound {
        iter += 1;
        let pick = sample(&mut rng, n, SAMPLE_SIZE);
        let subset: Vec<Correspondence3d2d> = pick.iter().map(|i| sorted[i]).collect();
        let Ok(t) = epnp(&subset, k) else { continue };
        let inl = inliers_of(&t, k, &sorted, cfg.epsilon_e);
        let support = inl.iter().filter(|i| !pick.iter().any(|p| p == **i)).count();
        if support >= cfg.min_support && best.as_ref().map_or(true, |(b, _)| inl.len() > b.len()) {
            bound = adaptive_bound(inl.len() as f64 / n as f64, cfg.confidence, cfg.max_iter);
            best = Some((inl, t));
        }
    }
    let (mut inl, mut t) = best.ok_or_else(|| {
        Error::RegistrationFailed(format!(
            "no hypothesis gathered {} supporting inliers in {iter} iterations",
            cfg.min_support
        ))
    })?;

    // refit on the consensus set; keep it unless it loses support
    let consensus: Vec<Correspondence3d2d> = inl.iter().map(|&i| sorted[i]).collect();
    if let Ok(refit) = epnp(&consensus, k) {
        let refit_inl = inliers_of(&refit, k, &sorted, cfg.epsilon_e);
        if refit_inl.len() >= inl.len().max(SAMPLE_SIZE) {
            inl = refit_inl;
            t = refit;
        }
    }
    let rmse = (inl.iter().map(|&i| reprojection_error(&t, k, &sorted[i]).powi(2)).sum::<f64>()
        / inl.len() as f64)
        .sqrt();
    let mut inliers: Vec<usize> = inl.iter().map(|&i| order[i]).collect();
    inliers.sort_unstable();
    Ok(PoseEstimate {
        transform: t,
        inliers,
        reprojection_rmse: rmse,
        iterations_used: iter,
    })
}
