//! EPnP: world points as barycentric combinations of control points, the
//! camera-frame control points from the null space of `MᵀM`, metric scale
//! from inter-control distances, then absolute orientation.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use super::Correspondence3d2d;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Mat3, RigidTransform, Vec3};

const GN_MAX_ITER: usize = 10;
const GN_STEP_TOL: f64 = 1e-10;

struct Controls {
    /// World control points.
    pts: Vec<Vec3>,
    /// `alphas[i][k]`: weight of control `k` for world point `i`.
    alphas: Vec<Vec<f64>>,
}

/// Centroid plus principal directions scaled by the spread along each; three
/// controls when the points are planar.
fn choose_controls(world: &[Vec3]) -> Result<Controls> {
    let n = world.len() as f64;
    let c0 = world.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for p in world {
        let d = p - c0;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lam: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    if !(lam[0] > 0.0) || lam[1] <= 1e-12 * lam[0] {
        return Err(Error::DegenerateGeometry("world points are collinear or coincident".into()));
    }
    let planar = lam[2] <= 1e-10 * lam[0];
    let dirs = if planar { 2 } else { 3 };
    let mut pts = vec![c0];
    for k in 0..dirs {
        pts.push(c0 + eig.eigenvectors.column(order[k]).into_owned() * lam[k].sqrt());
    }
    // barycentric weights in the scaled principal frame
    let alphas = world
        .iter()
        .map(|p| {
            let d = p - c0;
            let mut a = vec![0.0; dirs + 1];
            for k in 0..dirs {
                let axis = eig.eigenvectors.column(order[k]);
                a[k + 1] = d.dot(&axis) / lam[k].sqrt();
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();
    Ok(Controls { pts, alphas })
}

fn pair_indices(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            out.push((a, b));
        }
    }
    out
}

/// Control-point displacement `v[a] − v[b]` of a kernel vector.
fn diff(v: &DVector<f64>, a: usize, b: usize) -> Vec3 {
    Vec3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().svd(true, true).solve(b, 1e-14).ok()
}

/// Closed-form initial β for a kernel of size `n` using the linearized
/// squared-distance constraints (products `β_k β_l` as unknowns).
fn initial_betas(kernel: &[DVector<f64>], n: usize, pairs: &[(usize, usize)], dist2: &[f64]) -> Option<Vec<f64>> {
    let mut betas = vec![0.0; kernel.len()];
    match n {
        1 => {
            let (mut num, mut den) = (0.0, 0.0);
            for (k, &(a, b)) in pairs.iter().enumerate() {
                let v = diff(&kernel[0], a, b).norm();
                num += v * dist2[k].sqrt();
                den += v * v;
            }
            if den <= 0.0 {
                return None;
            }
            betas[0] = num / den;
        }
        2 | 3 => {
            let terms: Vec<(usize, usize)> = (0..n).flat_map(|k| (k..n).map(move |l| (k, l))).collect();
            if terms.len() > pairs.len() {
                return None;
            }
            let l = DMatrix::from_fn(pairs.len(), terms.len(), |r, c| {
                let (a, b) = pairs[r];
                let (k, m) = terms[c];
                let d = diff(&kernel[k], a, b).dot(&diff(&kernel[m], a, b));
                if k == m {
                    d
                } else {
                    2.0 * d
                }
            });
            let rho = DVector::from_column_slice(dist2);
            let x = least_squares(&l, &rho)?;
            let idx = |k: usize, m: usize| terms.iter().position(|&t| t == (k, m)).unwrap();
            let b0 = x[idx(0, 0)].abs().sqrt();
            betas[0] = b0;
            for k in 1..n {
                let bk = x[idx(k, k)].abs().sqrt();
                // relative sign from the cross term
                betas[k] = if x[idx(0, k)] < 0.0 { -bk } else { bk };
            }
        }
        _ => return None,
    }
    Some(betas)
}

/// Gauss–Newton on `‖Σ β_k v_k,ab‖² = d_ab²`, solved through the small
/// normal equations (SVD fallback when they are not positive definite).
fn refine_betas(kernel: &[DVector<f64>], pairs: &[(usize, usize)], dist2: &[f64], betas: &mut [f64]) {
    let nk = kernel.len();
    let diffs: Vec<Vec<Vec3>> = pairs
        .iter()
        .map(|&(a, b)| kernel.iter().map(|v| diff(v, a, b)).collect())
        .collect();
    let scale = dist2.iter().cloned().fold(0.0, f64::max);
    let mut j = DMatrix::zeros(pairs.len(), nk);
    let mut r = DVector::zeros(pairs.len());
    for _ in 0..GN_MAX_ITER {
        for (row, d) in diffs.iter().enumerate() {
            let cur: Vec3 = d.iter().zip(betas.iter()).map(|(d, &be)| d * be).sum();
            r[row] = cur.norm_squared() - dist2[row];
            for k in 0..nk {
                j[(row, k)] = 2.0 * cur.dot(&d[k]);
            }
        }
        if r.amax() <= 1e-15 * scale {
            return;
        }
        let jt = j.transpose();
        let rhs = -(&jt * &r);
        let step = match (&jt * &j).cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => match least_squares(&j, &(-&r)) {
                Some(s) => s,
                None => return,
            },
        };
        for k in 0..nk {
            betas[k] += step[k];
        }
        if step.norm() < GN_STEP_TOL {
            return;
        }
    }
}

/// Best rigid `R, t` with `cam ≈ R·world + t` (Kabsch / Horn).
pub fn absolute_orientation(world: &[Vec3], cam: &[Vec3]) -> Result<RigidTransform> {
    let n = world.len() as f64;
    let cw = world.iter().sum::<Vec3>() / n;
    let cc = cam.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (w - cw) * (c - cc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    RigidTransform::from_approx(r, cc - r * cw)
}

/// Pixel reprojection error; infinite behind the camera.
pub fn reprojection_error(t: &RigidTransform, k: &Intrinsics, c: &Correspondence3d2d) -> f64 {
    match k.project_camera(&t.apply(&c.world)) {
        Some((u, v)) => ((u - c.pixel.0).powi(2) + (v - c.pixel.1).powi(2)).sqrt(),
        None => f64::INFINITY,
    }
}

fn rms_error(t: &RigidTransform, k: &Intrinsics, corrs: &[Correspondence3d2d]) -> f64 {
    let s: f64 = corrs.iter().map(|c| reprojection_error(t, k, c).powi(2)).sum();
    (s / corrs.len() as f64).sqrt()
}

/// Camera-frame points for a β vector, sign-fixed for positive mean depth.
fn camera_points(ctrl: &Controls, kernel: &[DVector<f64>], betas: &[f64]) -> Vec<Vec3> {
    let m = ctrl.pts.len();
    let mut cc = vec![Vec3::zeros(); m];
    for (v, &b) in kernel.iter().zip(betas) {
        for (j, c) in cc.iter_mut().enumerate() {
            *c += Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]) * b;
        }
    }
    let mut pts: Vec<Vec3> = ctrl
        .alphas
        .iter()
        .map(|a| a.iter().zip(&cc).map(|(w, c)| c * *w).sum())
        .collect();
    let mean_z = pts.iter().map(|p| p.z).sum::<f64>() / pts.len() as f64;
    if mean_z < 0.0 {
        pts.iter_mut().for_each(|p| *p = -*p);
    }
    pts
}

/// EPnP on `≥ 4` correspondences.
pub fn epnp(corrs: &[Correspondence3d2d], k: &Intrinsics) -> Result<RigidTransform> {
    if corrs.len() < 4 {
        return Err(Error::InsufficientCorrespondences { found: corrs.len() });
    }
    let world: Vec<Vec3> = corrs.iter().map(|c| c.world).collect();
    let ctrl = choose_controls(&world)?;
    let m = ctrl.pts.len();
    let k_inv = k
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("intrinsics are singular".into()))?;

    // two rows per correspondence on normalized image coordinates
    let mut mm = DMatrix::<f64>::zeros(2 * corrs.len(), 3 * m);
    for (i, c) in corrs.iter().enumerate() {
        let x = k_inv * Vec3::new(c.pixel.0, c.pixel.1, 1.0);
        let (xn, yn) = (x.x / x.z, x.y / x.z);
        for (j, &a) in ctrl.alphas[i].iter().enumerate() {
            mm[(2 * i, 3 * j)] = a;
            mm[(2 * i, 3 * j + 2)] = -a * xn;
            mm[(2 * i + 1, 3 * j + 1)] = a;
            mm[(2 * i + 1, 3 * j + 2)] = -a * yn;
        }
    }
    let mtm = mm.transpose() * &mm;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let nk = if m == 4 { 4 } else { 3 };
    let kernel: Vec<DVector<f64>> = order[..nk].iter().map(|&c| eig.eigenvectors.column(c).into_owned()).collect();

    let pairs = pair_indices(m);
    let dist2: Vec<f64> = pairs.iter().map(|&(a, b)| (ctrl.pts[a] - ctrl.pts[b]).norm_squared()).collect();

    let mut best: Option<(f64, RigidTransform)> = None;
    let cases = if m == 4 { 3 } else { 2 };
    for n in 1..=cases {
        let Some(mut betas) = initial_betas(&kernel, n, &pairs, &dist2) else { continue };
        refine_betas(&kernel, &pairs, &dist2, &mut betas);
        if betas.iter().any(|b| !b.is_finite()) {
            continue;
        }
        let cam = camera_points(&ctrl, &kernel, &betas);
        let Ok(t) = absolute_orientation(&world, &cam) else { continue };
        let err = rms_error(&t, k, corrs);
        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, t));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::DegenerateGeometry("no EPnP case produced a pose".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics::from_params(700.0, 690.0, 320.0, 240.0).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let r = nalgebra::Rotation3::from_scaled_axis(axis.normalize() * rng.gen_range(0.0..3.0));
        RigidTransform::new(*r.matrix(), Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap()
    }

    /// World points whose camera-frame image lies in front of the camera.
    fn corrs_for(t: &RigidTransform, cam_pts: &[Vec3]) -> Vec<Correspondence3d2d> {
        let inv = t.inverse();
        cam_pts
            .iter()
            .map(|pc| {
                let w = inv.apply(pc);
                Correspondence3d2d::new(w, project_point(&k(), t, &w).unwrap())
            })
            .collect()
    }

    fn errors(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
        (a.rotation_angle_to(b), (a.translation() - b.translation()).norm())
    }

    #[test]
    fn general_position_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t = random_pose(&mut rng);
            let pts: Vec<Vec3> = (0..6)
                .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(4.0..9.0)))
                .collect();
            let est = epnp(&corrs_for(&t, &pts), &k()).unwrap();
            let (er, et) = errors(&est, &t);
            assert!(er < 1e-6 && et < 1e-6, "{er} {et}");
        }
    }

    #[test]
    fn identity_on_axis_family() {
        let k = Intrinsics::from_params(500.0, 500.0, 0.0, 0.0).unwrap();
        let pts = [
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(0.5, 0.0, 4.0),
            Vec3::new(0.0, 0.5, 5.0),
            Vec3::new(-0.5, 0.2, 6.0),
            Vec3::new(0.3, -0.4, 7.0),
            Vec3::new(-0.2, -0.3, 8.0),
        ];
        let corrs: Vec<_> = pts
            .iter()
            .map(|p| Correspondence3d2d::new(*p, (500.0 * p.x / p.z, 500.0 * p.y / p.z)))
            .collect();
        let est = epnp(&corrs, &k).unwrap();
        let (er, et) = errors(&est, &RigidTransform::identity());
        assert!(er < 1e-6 && et < 1e-6);
    }

    #[test]
    fn planar_four_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t = random_pose(&mut rng);
            // plane z = 5 in the world frame
            let world: Vec<Vec3> = (0..4)
                .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 5.0))
                .collect();
            // keep the pose in front of the camera
            let t = RigidTransform::new(*t.rotation(), Vec3::zeros()).unwrap();
            let shift = Vec3::new(0.0, 0.0, 12.0) - t.apply(&Vec3::new(0.0, 0.0, 5.0));
            let t = RigidTransform::new(*t.rotation(), shift).unwrap();
            if world.iter().any(|w| t.apply(w).z < 1.0) {
                continue;
            }
            let corrs: Vec<_> = world
                .iter()
                .map(|w| Correspondence3d2d::new(*w, project_point(&k(), &t, w).unwrap()))
                .collect();
            let est = epnp(&corrs, &k()).unwrap();
            let (er, et) = errors(&est, &t);
            assert!(er < 1e-5 && et < 1e-5, "{er} {et}");
        }
    }

    #[test]
    fn collinear_is_degenerate() {
        let corrs: Vec<_> = (0..5)
            .map(|i| Correspondence3d2d::new(Vec3::new(i as f64, 0.0, 5.0), (i as f64 * 10.0, 0.0)))
            .collect();
        assert!(matches!(epnp(&corrs, &k()), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(epnp(&corrs[..3], &k()), Err(Error::InsufficientCorrespondences { found: 3 })));
    }
}
