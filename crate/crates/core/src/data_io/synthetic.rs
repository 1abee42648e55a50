//! Ray-cast scenes with exact ground truth.
//!
//! The LiDAR sweeps its rings top-down, each in increasing azimuth from −π,
//! so a scene written to disk round-trips through ring inference. The camera
//! image puts `reflectance × 255` in the red channel: the reflectance map and
//! the red channel show the same material pattern.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraFrame, LidarPoint, LidarScan, RgbImage};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, RigidTransform, TransformDoc, Vec3};

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IntrinsicsDoc {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfacePattern {
    Uniform {
        value: f64,
    },
    /// Bands of `width` meters along `axis`, cycling through `values`.
    Stripes {
        axis: [f64; 3],
        width: f64,
        values: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// Running-bond bricks on the `(u_axis, v_axis)` surface frame; each
    /// brick and each course offset is drawn from a hash of `seed`.
    Bricks {
        u_axis: [f64; 3],
        v_axis: [f64; 3],
        width: f64,
        height: f64,
        seed: u64,
        #[serde(default = "default_lo")]
        min: f64,
        #[serde(default = "default_hi")]
        max: f64,
    },
}

fn default_lo() -> f64 {
    0.05
}
fn default_hi() -> f64 {
    0.95
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        pattern: SurfacePattern,
    },
    /// Axis-aligned box; seen from inside when it contains the ray origin.
    Box {
        min: [f64; 3],
        max: [f64; 3],
        pattern: SurfacePattern,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneConfig {
    pub rings: usize,
    pub points_per_ring: usize,
    pub primitives: Vec<Primitive>,
    pub intrinsics: IntrinsicsDoc,
    /// LiDAR → camera.
    pub extrinsic: TransformDoc,
    /// `[height, width]`.
    pub image_size: [usize; 2],
    /// Elevation of the first and last ring, degrees.
    #[serde(default = "default_elevation")]
    pub elevation_deg: [f64; 2],
    /// Azimuth jitter as a fraction of the angular step, uniform in ±value.
    #[serde(default = "default_jitter")]
    pub azimuth_jitter: f64,
    #[serde(default = "default_range")]
    pub max_range: f64,
    #[serde(default)]
    pub reflectance_noise: f64,
    #[serde(default)]
    pub frame_id: u64,
}

fn default_elevation() -> [f64; 2] {
    [2.0, -24.8]
}
fn default_jitter() -> f64 {
    0.25
}
fn default_range() -> f64 {
    120.0
}

pub fn parse_scene_config(text: &str) -> Result<SceneConfig> {
    let cfg: SceneConfig =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("scene config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rings == 0 || self.rings > u16::MAX as usize {
            return bad("rings must be in 1..=65535");
        }
        if self.points_per_ring == 0 || self.rings.saturating_mul(self.points_per_ring) > 50_000_000 {
            return bad("points_per_ring must be positive and the scan at most 5e7 points");
        }
        let [h, w] = self.image_size;
        if h == 0 || w == 0 || h.saturating_mul(w) > 50_000_000 {
            return bad("image_size must be positive and at most 5e7 pixels");
        }
        if !(0.0..=0.5).contains(&self.azimuth_jitter) {
            return bad("azimuth_jitter must be in [0, 0.5]");
        }
        if !(self.max_range > 0.0) || !(0.0..=1.0).contains(&self.reflectance_noise) {
            return bad("max_range must be positive and reflectance_noise in [0, 1]");
        }
        if !self.elevation_deg.iter().all(|e| e.is_finite() && e.abs() < 90.0) {
            return bad("elevations must be finite and within (-90, 90) degrees");
        }
        self.intrinsics()?;
        self.extrinsic.to_transform()?;
        for p in &self.primitives {
            p.validate()?;
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let i = &self.intrinsics;
        Intrinsics::from_params(i.fx, i.fy, i.cx, i.cy)
    }
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        let (ok, pattern) = match self {
            Primitive::Plane {
                point,
                normal,
                pattern,
            } => (
                finite3(point) && finite3(normal) && Vec3::from(*normal).norm() > 0.0,
                pattern,
            ),
            Primitive::Box { min, max, pattern } => (
                finite3(min) && finite3(max) && (0..3).all(|k| min[k] < max[k]),
                pattern,
            ),
        };
        if !ok {
            return Err(Error::Config("malformed primitive geometry".into()));
        }
        pattern.validate()
    }

    /// Nearest hit distance along a unit ray.
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        match self {
            Primitive::Plane { point, normal, .. } => {
                let n = Vec3::from(*normal);
                let denom = d.dot(&n);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (Vec3::from(*point) - o).dot(&n) / denom;
                (t > HIT_EPS).then_some(t)
            }
            Primitive::Box { min, max, .. } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - o[k]) / d[k];
                    let b = (max[k] - o[k]) / d[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t1 < t0 {
                    return None;
                }
                if t0 > HIT_EPS {
                    Some(t0)
                } else if t1 > HIT_EPS {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    fn pattern(&self) -> &SurfacePattern {
        match self {
            Primitive::Plane { pattern, .. } | Primitive::Box { pattern, .. } => pattern,
        }
    }
}

impl SurfacePattern {
    fn validate(&self) -> Result<()> {
        let in01 = |v: f64| (0.0..=1.0).contains(&v);
        let ok = match self {
            SurfacePattern::Uniform { value } => in01(*value),
            SurfacePattern::Stripes {
                axis,
                width,
                values,
                offset,
            } => {
                finite3(axis)
                    && Vec3::from(*axis).norm() > 0.0
                    && *width > 0.0
                    && offset.is_finite()
                    && !values.is_empty()
                    && values.iter().all(|v| in01(*v))
            }
            SurfacePattern::Bricks {
                u_axis,
                v_axis,
                width,
                height,
                min,
                max,
                ..
            } => {
                finite3(u_axis)
                    && finite3(v_axis)
                    && Vec3::from(*u_axis).norm() > 0.0
                    && Vec3::from(*v_axis).norm() > 0.0
                    && *width > 0.0
                    && *height > 0.0
                    && in01(*min)
                    && in01(*max)
                    && min <= max
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("malformed surface pattern".into()))
        }
    }

    pub fn reflectance_at(&self, p: &Vec3) -> f64 {
        match self {
            SurfacePattern::Uniform { value } => *value,
            SurfacePattern::Stripes {
                axis,
                width,
                values,
                offset,
            } => {
                let a = Vec3::from(*axis).normalize();
                let band = ((p.dot(&a) - offset) / width).floor() as i64;
                values[band.rem_euclid(values.len() as i64) as usize]
            }
            SurfacePattern::Bricks {
                u_axis,
                v_axis,
                width,
                height,
                seed,
                min,
                max,
            } => {
                let u = p.dot(&Vec3::from(*u_axis).normalize());
                let v = p.dot(&Vec3::from(*v_axis).normalize());
                let course = (v / height).floor() as i64;
                let shift = unit_hash(*seed, course, i64::MIN) * width;
                let brick = ((u - shift) / width).floor() as i64;
                min + (max - min) * unit_hash(*seed, course, brick)
            }
        }
    }
}

/// Deterministic value in [0, 1) from a splitmix64 mix of the inputs.
fn unit_hash(seed: u64, a: i64, b: i64) -> f64 {
    let mut z = seed
        .wrapping_add((a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn cast<'a>(primitives: &'a [Primitive], o: &Vec3, d: &Vec3) -> Option<(f64, &'a Primitive)> {
    primitives
        .iter()
        .filter_map(|p| p.intersect(o, d).map(|t| (t, p)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scan: LidarScan,
    pub frame: CameraFrame,
    /// Exact LiDAR → camera extrinsic.
    pub cam_from_velo: RigidTransform,
}

pub fn generate_synthetic_scene(seed: u64, config: &SceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Vec3::zeros();
    let [top, bottom] = config.elevation_deg;
    let step = std::f64::consts::TAU / config.points_per_ring as f64;

    let mut points = Vec::with_capacity(config.rings * config.points_per_ring);
    for ring in 0..config.rings {
        let elev = if config.rings == 1 {
            top
        } else {
            top + (bottom - top) * ring as f64 / (config.rings - 1) as f64
        }
        .to_radians();
        let (se, ce) = elev.sin_cos();
        for m in 0..config.points_per_ring {
            let jitter = if config.azimuth_jitter > 0.0 {
                rng.gen_range(-config.azimuth_jitter..=config.azimuth_jitter)
            } else {
                0.0
            };
            let noise = if config.reflectance_noise > 0.0 {
                rng.gen_range(-config.reflectance_noise..=config.reflectance_noise)
            } else {
                0.0
            };
            let phi = -std::f64::consts::PI + (m as f64 + 0.5 + jitter) * step;
            let (sp, cp) = phi.sin_cos();
            let dir = Vec3::new(ce * cp, ce * sp, se);
            if let Some((t, prim)) = cast(&config.primitives, &origin, &dir) {
                if t <= config.max_range {
                    let p = dir * t;
                    let refl = (prim.pattern().reflectance_at(&p) + noise).clamp(0.0, 1.0);
                    points.push(LidarPoint {
                        position: p,
                        reflectance: refl,
                        ring: ring as u16,
                    });
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::DegenerateScene("LiDAR rays hit no primitive".into()));
    }
    let scan = LidarScan::new(points, config.rings)?;

    let k = config.intrinsics()?;
    let cam_from_velo = config.extrinsic.to_transform()?;
    let velo_from_cam = cam_from_velo.inverse();
    let center = *velo_from_cam.translation();
    let [h, w] = config.image_size;
    let mut image = RgbImage::filled(h, w, [0, 0, 0])?;
    let mut hits = 0usize;
    for row in 0..h {
        for col in 0..w {
            let dir = (velo_from_cam.rotation() * k.ray(col as f64, row as f64)).normalize();
            if let Some((t, prim)) = cast(&config.primitives, &center, &dir) {
                let refl = prim.pattern().reflectance_at(&(center + dir * t));
                let red = (refl * 255.0).round() as u8;
                let other = (refl * 150.0 + 40.0).round() as u8;
                image.set_pixel(row, col, [red, other, other]);
                hits += 1;
            }
        }
    }
    if hits == 0 {
        return Err(Error::DegenerateScene("camera sees no primitive".into()));
    }
    Ok(SyntheticScene {
        scan,
        frame: CameraFrame {
            image,
            intrinsics: k,
            frame_id: config.frame_id,
        },
        cam_from_velo,
    })
}

/// LiDAR (x fwd, y left, z up) → camera (x right, y down, z fwd) axis swap.
pub fn lidar_to_camera_axes() -> crate::geometry::Mat3 {
    crate::geometry::Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}
