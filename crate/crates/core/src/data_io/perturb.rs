//! Two-stage artificial mis-registration: yaw before map generation,
//! planar translation after.

use std::f64::consts::PI;

use rand::Rng;

use super::LidarScan;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};

pub const MAX_SHIFT_M: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub yaw: f64,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationStage {
    RotationOnly,
    TranslationOnly,
}

impl Perturbation {
    pub fn new(yaw: f64, dx: f64, dy: f64) -> Result<Self> {
        if !(-PI..PI).contains(&yaw) {
            return Err(Error::Contract(format!("yaw {yaw} outside [-pi, pi)")));
        }
        if !(dx.abs() <= MAX_SHIFT_M && dy.abs() <= MAX_SHIFT_M) {
            return Err(Error::Contract(format!(
                "shift ({dx}, {dy}) exceeds {MAX_SHIFT_M} m"
            )));
        }
        Ok(Self { yaw, dx, dy })
    }

    pub fn identity() -> Self {
        Self {
            yaw: 0.0,
            dx: 0.0,
            dy: 0.0,
        }
    }

    /// Yaw uniform on [−π, π), shifts uniform on [−10, 10] m.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            yaw: rng.gen_range(-PI..PI),
            dx: rng.gen_range(-MAX_SHIFT_M..=MAX_SHIFT_M),
            dy: rng.gen_range(-MAX_SHIFT_M..=MAX_SHIFT_M),
        }
    }

    pub fn rotation(&self) -> RigidTransform {
        RigidTransform::rot_z(self.yaw)
    }

    pub fn translation(&self) -> RigidTransform {
        RigidTransform::from_translation(Vec3::new(self.dx, self.dy, 0.0))
    }

    /// The full perturbation: rotation first, then translation.
    pub fn as_transform(&self) -> RigidTransform {
        self.translation().compose(&self.rotation())
    }

    /// Ground truth for the perturbed cloud: `cam_from_velo ∘ perturbation⁻¹`.
    pub fn ground_truth(&self, cam_from_velo: &RigidTransform) -> RigidTransform {
        cam_from_velo.compose(&self.as_transform().inverse())
    }
}

pub fn apply_perturbation(scan: &LidarScan, p: &Perturbation, stage: PerturbationStage) -> LidarScan {
    let t = match stage {
        PerturbationStage::RotationOnly => p.rotation(),
        PerturbationStage::TranslationOnly => p.translation(),
    };
    scan.map_positions(|x| t.apply(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::LidarPoint;
    use rand::SeedableRng;

    fn one(x: f64, y: f64, z: f64) -> LidarScan {
        LidarScan::new(vec![LidarPoint::new(x, y, z, 0.25, 3)], 64).unwrap()
    }

    #[test]
    fn half_turn() {
        let p = Perturbation::new(-PI, 0.0, 0.0).unwrap();
        let out = apply_perturbation(&one(1.0, 0.0, 0.0), &p, PerturbationStage::RotationOnly);
        assert!((out.points()[0].position - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(out.points()[0].reflectance, 0.25);
        assert_eq!(out.points()[0].ring, 3);
    }

    #[test]
    fn pure_translation() {
        let p = Perturbation::new(0.3, 10.0, -10.0).unwrap();
        let out = apply_perturbation(&one(0.0, 0.0, 5.0), &p, PerturbationStage::TranslationOnly);
        assert_eq!(out.points()[0].position, Vec3::new(10.0, -10.0, 5.0));
    }

    #[test]
    fn rotation_then_translation() {
        let p = Perturbation::new(PI / 2.0, 1.0, 1.0).unwrap();
        let s = apply_perturbation(&one(1.0, 0.0, 0.0), &p, PerturbationStage::RotationOnly);
        assert!((s.points()[0].position - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        let s = apply_perturbation(&s, &p, PerturbationStage::TranslationOnly);
        assert!((s.points()[0].position - Vec3::new(1.0, 2.0, 0.0)).norm() < 1e-12);
        let direct = p.as_transform().apply(&Vec3::new(1.0, 0.0, 0.0));
        assert!((direct - Vec3::new(1.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn bounds_enforced() {
        assert!(Perturbation::new(PI, 0.0, 0.0).is_err());
        assert!(Perturbation::new(0.0, 10.5, 0.0).is_err());
        assert!(Perturbation::new(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn sampling_stays_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = Perturbation::sample(&mut rng);
            assert!(Perturbation::new(p.yaw, p.dx, p.dy).is_ok());
        }
    }
}
