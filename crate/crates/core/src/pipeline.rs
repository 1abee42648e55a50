//! The full registration chain with per-stage timing, its configuration,
//! the synthetic curriculum used for training and evaluation, and the
//! builder for training examples.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{
    apply_perturbation, generate_synthetic_scene, lidar_to_camera_axes, CameraFrame, IntrinsicsDoc, LidarScan,
    load_calib, load_camera_frame, load_kitti_scan, save_kitti_scan, save_png_rgb, FrameFiles, KittiCalib, Perturbation, PerturbationStage, Primitive, RingMode,
    SceneConfig, SurfacePattern,
};
use crate::descriptor::{
    describe_pair, mirror_columns, mirror_edges, reference_descriptor, sample_fused, DescriptorSet, FeatureField,
    Reduction, DESCRIPTOR_DIM,
};
use crate::error::{Error, Result};
use crate::eval::{EulerConvention, RegistrationResult, StageTimes};
use crate::geometry::{Intrinsics, RigidTransform, TransformDoc, Vec3};
use crate::image_ops::{
    red_channel, sobel_edges, wavelet_filter, EdgeSet, GrayImage, WaveletMode, CAMERA_SOBEL_THRESHOLD,
    DEFAULT_EDGE_COUNT, REFLECTANCE_SOBEL_THRESHOLD, REFLECTANCE_WAVELET_THRESHOLD,
};
use crate::io_util::{read_string, write_atomic_str};
use crate::matcher::{
    gt_correspondences, load_match_params, match_descriptors, toy_train, Combine, CorrespondenceSet, MatchManifest,
    MatchParams, TrainConfig, TrainOutcome, TrainingExample,
};
use crate::pose::{lift_correspondences, ransac_epnp, Lifted, PoseEstimate, RansacConfig, DEFAULT_EPSILON_E};
use crate::projection::{project, MapKind, ProjectionMap, DEFAULT_MAP_WIDTH};

pub const SEED_ENV: &str = "REGFORGE_SEED";
pub const DEFAULT_EPSILON: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `[rings, azimuth columns]`.
    pub map_size: [usize; 2],
    /// `[height, width]` the camera image is resampled to.
    pub image_size: [usize; 2],
    pub wavelet_threshold: f64,
    pub wavelet_mode: WaveletMode,
    pub sobel_threshold_camera: f64,
    pub sobel_threshold_reflectance: f64,
    pub n_edges: usize,
    /// Ground-truth match radius, pixels.
    pub epsilon: f64,
    /// RANSAC inlier radius, pixels.
    pub epsilon_e: f64,
    pub map_kind: MapKind,
    pub combine: Combine,
    pub confidence_floor: f64,
    pub ransac_max_iter: usize,
    pub ransac_confidence: f64,
    pub ring_mode: RingMode,
    pub euler: EulerConvention,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            map_size: [64, DEFAULT_MAP_WIDTH],
            image_size: [160, 512],
            wavelet_threshold: REFLECTANCE_WAVELET_THRESHOLD,
            wavelet_mode: WaveletMode::default(),
            sobel_threshold_camera: CAMERA_SOBEL_THRESHOLD,
            sobel_threshold_reflectance: REFLECTANCE_SOBEL_THRESHOLD,
            n_edges: DEFAULT_EDGE_COUNT,
            epsilon: DEFAULT_EPSILON,
            epsilon_e: DEFAULT_EPSILON_E,
            map_kind: MapKind::Reflectance,
            combine: Combine::Product,
            confidence_floor: 0.0,
            ransac_max_iter: 1000,
            ransac_confidence: 0.999,
            ring_mode: RingMode::default(),
            euler: EulerConvention::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.map_size.contains(&0) || self.image_size.contains(&0) {
            return bad("map and image sizes must be positive");
        }
        if self.image_size[0] < 8 || self.image_size[1] < 8 {
            return bad("image size must be at least 8x8");
        }
        let nonneg = [
            self.wavelet_threshold,
            self.sobel_threshold_camera,
            self.sobel_threshold_reflectance,
            self.confidence_floor,
        ];
        if nonneg.iter().any(|t| t.is_nan() || *t < 0.0) {
            return bad("thresholds must be >= 0");
        }
        if self.n_edges == 0 {
            return bad("n_edges must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) || !(self.epsilon_e > 0.0 && self.epsilon_e.is_finite()) {
            return bad("epsilon and epsilon_e must be positive");
        }
        if self.ransac_max_iter == 0 || !(0.0..1.0).contains(&self.ransac_confidence) {
            return bad("ransac_max_iter must be positive and ransac_confidence in [0, 1)");
        }
        Ok(())
    }

    /// Defaults, then `REGFORGE_SEED`, then the JSON file (if any). Command-
    /// line flags are applied by the caller on top.
    pub fn resolve(file: Option<&Path>) -> Result<Self> {
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        let mut cfg = match file {
            Some(p) => Self::from_json(&read_string(p)?)?,
            None => Self::default(),
        };
        let file_has_seed = match file {
            Some(p) => serde_json::from_str::<serde_json::Value>(&read_string(p)?)
                .map(|v| v.get("seed").is_some())
                .unwrap_or(false),
            None => false,
        };
        if let (Some(s), false) = (env_seed, file_has_seed) {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            epsilon_e: self.epsilon_e,
            max_iter: self.ransac_max_iter,
            confidence: self.ransac_confidence,
            seed: self.seed,
            ..Default::default()
        }
    }
}

/// Matching layer plus the two descriptor reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: MatchParams,
    pub reduction_r: Reduction,
    pub reduction_c: Reduction,
}

impl Model {
    pub fn untrained() -> Self {
        Self {
            params: MatchParams::default_for(DESCRIPTOR_DIM),
            reduction_r: Reduction::default(),
            reduction_c: Reduction::default(),
        }
    }

    /// Parameters from disk; reductions fall back to the defaults when the
    /// file carries none.
    pub fn load(path: &Path) -> Result<Self> {
        let (params, reductions, _) = load_match_params(path)?;
        let (reduction_r, reduction_c) =
            reductions.unwrap_or_else(|| (Reduction::default(), Reduction::default()));
        Ok(Self {
            params,
            reduction_r,
            reduction_c,
        })
    }
}

/// Red channel at the working resolution with matching intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCamera {
    pub image: GrayImage,
    pub intrinsics: Intrinsics,
}

pub fn prepare_camera(frame: &CameraFrame, cfg: &PipelineConfig) -> Result<PreparedCamera> {
    let [h, w] = cfg.image_size;
    let image = red_channel(frame, Some((h, w)))?;
    let sx = w as f64 / frame.image.width() as f64;
    let sy = h as f64 / frame.image.height() as f64;
    let intrinsics = if sx == 1.0 && sy == 1.0 {
        frame.intrinsics
    } else {
        frame.intrinsics.scaled(sx, sy)?
    };
    Ok(PreparedCamera { image, intrinsics })
}

/// Intermediate products of one registration.
#[derive(Debug, Clone)]
pub struct Registration {
    pub map: ProjectionMap,
    pub edges_r: EdgeSet,
    pub edges_c: EdgeSet,
    pub matches: CorrespondenceSet,
    pub lifted: Lifted,
    pub pose: PoseEstimate,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f();
    *slot += t0.elapsed().as_secs_f64();
    out
}

/// Reflectance-side edges: map image, Haar filter, Sobel.
pub fn map_edges(map: &ProjectionMap, cfg: &PipelineConfig) -> Result<(GrayImage, EdgeSet)> {
    let gray = map.to_gray()?;
    let filtered = wavelet_filter(&gray, cfg.wavelet_threshold, cfg.wavelet_mode)?;
    let edges = sobel_edges(&filtered, cfg.sobel_threshold_reflectance, cfg.n_edges)?;
    Ok((gray, edges))
}

/// Feature fields for both branches. Map azimuth grows to the left while
/// image columns grow to the right, so the map is described column-reversed
/// and its edges must go through [`mirror_edges`] before sampling.
pub fn feature_fields(map_gray: &GrayImage, camera: &GrayImage) -> Result<(FeatureField, FeatureField)> {
    Ok((reference_descriptor(&mirror_columns(map_gray)?)?, reference_descriptor(camera)?))
}

/// Everything up to and including matching.
#[derive(Debug, Clone)]
pub struct Matched {
    pub map: ProjectionMap,
    pub edges_r: EdgeSet,
    pub edges_c: EdgeSet,
    pub camera: PreparedCamera,
    pub d_r: DescriptorSet,
    pub d_c: DescriptorSet,
    pub matches: CorrespondenceSet,
}

/// Projection, edges, descriptors and matching for one scene.
pub fn describe_and_match(
    map_scan: &LidarScan,
    frame: &CameraFrame,
    model: &Model,
    cfg: &PipelineConfig,
    times: &mut StageTimes,
) -> Result<Matched> {
    cfg.validate()?;
    let map = timed(&mut times.project, || project(map_scan, cfg.map_size[1], cfg.map_kind))?;
    if map.height() != cfg.map_size[0] {
        log::warn!("scan has {} rings, configured map height is {}", map.height(), cfg.map_size[0]);
    }
    let (gray, edges_r, camera, edges_c) = timed(&mut times.edges, || {
        let (gray, edges_r) = map_edges(&map, cfg)?;
        let camera = prepare_camera(frame, cfg)?;
        let edges_c = sobel_edges(&camera.image, cfg.sobel_threshold_camera, cfg.n_edges)?;
        Ok((gray, edges_r, camera, edges_c))
    })?;
    let (d_r, d_c) = timed(&mut times.describe, || {
        let (map_field, cam_field) = feature_fields(&gray, &camera.image)?;
        let mirrored = mirror_edges(&edges_r, gray.width())?;
        describe_pair(&map_field, &cam_field, &mirrored, &edges_c, &model.reduction_r, &model.reduction_c)
    })?;
    let matches = timed(&mut times.matching, || {
        match_descriptors(&d_r, &d_c, &model.params, cfg.combine, cfg.confidence_floor)
    })?;
    Ok(Matched {
        map,
        edges_r,
        edges_c,
        camera,
        d_r,
        d_c,
        matches,
    })
}

/// Runs the chain on one scene. The map is built from `map_scan`; matched
/// pixels lift into `lift_scan`, which must list the same points in the
/// same order (they may differ by a rigid motion). Stage times accumulate
/// into `times` even when a stage fails.
pub fn register(
    map_scan: &LidarScan,
    lift_scan: &LidarScan,
    frame: &CameraFrame,
    model: &Model,
    cfg: &PipelineConfig,
    times: &mut StageTimes,
) -> Result<Registration> {
    if map_scan.len() != lift_scan.len() {
        return Err(Error::Contract("map and lift scans differ in length".into()));
    }
    let m = describe_and_match(map_scan, frame, model, cfg, times)?;
    let (lifted, pose) = timed(&mut times.pose, || {
        let lifted = lift_correspondences(&m.matches, &m.edges_r, &m.edges_c, &m.map, lift_scan)?;
        let pose = ransac_epnp(&lifted.correspondences, &m.camera.intrinsics, &cfg.ransac())?;
        Ok((lifted, pose))
    })?;
    Ok(Registration {
        map: m.map,
        edges_r: m.edges_r,
        edges_c: m.edges_c,
        matches: m.matches,
        lifted,
        pose,
    })
}

/// An unperturbed scene, its exact extrinsic and the perturbation to apply.
#[derive(Debug, Clone)]
pub struct EvalScene {
    pub name: String,
    pub scan: LidarScan,
    pub frame: CameraFrame,
    pub cam_from_velo: RigidTransform,
    pub perturbation: Perturbation,
}

impl EvalScene {
    /// `(map scan, lift scan)`: yaw before projection, translation after.
    pub fn perturbed_scans(&self) -> (LidarScan, LidarScan) {
        let rotated = apply_perturbation(&self.scan, &self.perturbation, PerturbationStage::RotationOnly);
        let moved = apply_perturbation(&rotated, &self.perturbation, PerturbationStage::TranslationOnly);
        (rotated, moved)
    }

    pub fn ground_truth(&self) -> RigidTransform {
        self.perturbation.ground_truth(&self.cam_from_velo)
    }
}

pub fn evaluate_scene(
    scene: &EvalScene,
    model: &Model,
    cfg: &PipelineConfig,
) -> (RegistrationResult, Result<Registration>) {
    let (map_scan, lift_scan) = scene.perturbed_scans();
    let mut times = StageTimes::default();
    let reg = register(&map_scan, &lift_scan, &scene.frame, model, cfg, &mut times);
    let result = match &reg {
        Ok(r) => RegistrationResult::from_transforms(
            scene.name.clone(),
            &scene.ground_truth(),
            &r.pose.transform,
            cfg.euler,
            times,
        ),
        Err(e) => {
            log::debug!("{}: {e}", scene.name);
            RegistrationResult::failed(scene.name.clone(), times)
        }
    };
    (result, reg)
}

/// Evaluates scenes on up to `jobs` threads; results come back in input order.
pub fn evaluate_scenes(scenes: &[EvalScene], model: &Model, cfg: &PipelineConfig, jobs: usize) -> Vec<RegistrationResult> {
    let jobs = jobs.clamp(1, scenes.len().max(1));
    if jobs == 1 {
        return scenes.iter().map(|s| evaluate_scene(s, model, cfg).0).collect();
    }
    let chunk = scenes.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = scenes
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| evaluate_scene(s, model, cfg).0).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    })
}

/// Synthetic scene families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneFamily {
    /// A closed room whose walls carry random-reflectance bricks.
    BrickRoom,
    /// A closed room whose only texture is vertical reflectance stripes:
    /// the range image has no edges at all.
    StripeRoom,
}

impl std::str::FromStr for SceneFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brick-room" => Ok(SceneFamily::BrickRoom),
            "stripe-room" => Ok(SceneFamily::StripeRoom),
            other => Err(Error::Config(format!("unknown scene family `{other}`"))),
        }
    }
}

/// Camera center in the LiDAR frame, roughly the KITTI rig offset.
const CAMERA_OFFSET: [f64; 3] = [0.27, 0.0, -0.08];
const SENSOR_HEIGHT: f64 = 1.73;

/// Scene description for one curriculum member. The focal length makes one
/// pixel at the image center subtend one map column, and the rings span
/// the elevation band that keeps the row pitch equal to the column pitch.
pub fn curriculum_config(family: SceneFamily, seed: u64) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D);
    let col_pitch = std::f64::consts::TAU / DEFAULT_MAP_WIDTH as f64;
    let f = 1.0 / col_pitch.tan();
    let half_band = (63.0 * col_pitch / 2.0).to_degrees();
    let (x0, x1) = (-rng.gen_range(8.0..14.0), rng.gen_range(8.0..14.0));
    let (y0, y1) = (-rng.gen_range(6.0..12.0), rng.gen_range(6.0..12.0));
    let top = rng.gen_range(3.0..4.5);
    let pattern = match family {
        SceneFamily::BrickRoom => SurfacePattern::Bricks {
            u_axis: [1.0, 1.0, 0.0],
            v_axis: [0.0, 0.0, 1.0],
            width: rng.gen_range(0.7..1.1),
            height: rng.gen_range(0.35..0.55),
            seed: rng.gen(),
            min: 0.05,
            max: 0.95,
        },
        SceneFamily::StripeRoom => SurfacePattern::Stripes {
            axis: [1.0, 1.0, 0.0],
            width: rng.gen_range(0.5..0.8),
            values: (0..23).map(|_| rng.gen_range(0.05..0.95)).collect(),
            offset: rng.gen_range(0.0..10.0),
        },
    };
    let axes = lidar_to_camera_axes();
    let t = -(axes * Vec3::from(CAMERA_OFFSET));
    SceneConfig {
        rings: 64,
        points_per_ring: 2 * DEFAULT_MAP_WIDTH,
        primitives: vec![Primitive::Box {
            min: [x0, y0, -SENSOR_HEIGHT],
            max: [x1, y1, top],
            pattern,
        }],
        intrinsics: IntrinsicsDoc {
            fx: f,
            fy: f,
            cx: 255.5,
            cy: 79.5,
        },
        extrinsic: TransformDoc {
            rotation: axes.transpose().as_slice().try_into().expect("3x3"),
            translation: [t.x, t.y, t.z],
        },
        image_size: [160, 512],
        elevation_deg: [half_band, -half_band],
        azimuth_jitter: 0.25,
        max_range: 120.0,
        reflectance_noise: 0.0,
        frame_id: seed,
    }
}

/// Generates a curriculum scene and draws its perturbation, both from `seed`.
pub fn synthetic_eval_scene(family: SceneFamily, seed: u64) -> Result<EvalScene> {
    let cfg = curriculum_config(family, seed);
    let scene = generate_synthetic_scene(seed, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5);
    Ok(EvalScene {
        name: format!("{}-{seed:06}", match family {
            SceneFamily::BrickRoom => "brick",
            SceneFamily::StripeRoom => "stripe",
        }),
        scan: scene.scan,
        frame: scene.frame,
        cam_from_velo: scene.cam_from_velo,
        perturbation: Perturbation::sample(&mut rng),
    })
}

pub fn synthetic_eval_set(family: SceneFamily, first_seed: u64, count: usize) -> Result<Vec<EvalScene>> {
    (0..count as u64).map(|k| synthetic_eval_scene(family, first_seed + k)).collect()
}

/// Builds one training example: the chain up to the fused samples, on a
/// random subset of at most `max_edges` real edges per side. Up to half the
/// budget goes to ground-truth pairs, taken with both ends, so the small
/// sets still carry supervision; the rest is drawn from the remaining edges.
pub fn training_example(
    scene: &EvalScene,
    cfg: &PipelineConfig,
    max_edges: usize,
    seed: u64,
) -> Result<TrainingExample> {
    if max_edges < 2 {
        return Err(Error::Config("max_edges must be at least 2".into()));
    }
    let (map_scan, lift_scan) = scene.perturbed_scans();
    let map = project(&map_scan, cfg.map_size[1], cfg.map_kind)?;
    let (gray, edges_r) = map_edges(&map, cfg)?;
    let camera = prepare_camera(&scene.frame, cfg)?;
    let edges_c = sobel_edges(&camera.image, cfg.sobel_threshold_camera, cfg.n_edges)?.unpadded();
    let edges_r = edges_r.unpadded();
    let gt = scene.ground_truth();
    let full = gt_correspondences(&map, &lift_scan, &edges_r, &edges_c, &gt, &camera.intrinsics, cfg.epsilon);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut in_r, mut in_c) = (vec![false; edges_r.len()], vec![false; edges_c.len()]);
    let mut budget = max_edges / 2;
    for k in sample(&mut rng, full.pairs.len(), full.pairs.len()) {
        if budget == 0 {
            break;
        }
        let (i, j) = full.pairs[k];
        if !in_r[i] && !in_c[j] {
            in_r[i] = true;
            in_c[j] = true;
            budget -= 1;
        }
    }
    let fill = |rng: &mut ChaCha8Rng, taken: &mut Vec<bool>, edges: &EdgeSet| -> Result<EdgeSet> {
        let rest: Vec<usize> = (0..taken.len()).filter(|&i| !taken[i]).collect();
        let have = taken.len() - rest.len();
        for k in sample(rng, rest.len(), rest.len().min(max_edges.saturating_sub(have))) {
            taken[rest[k]] = true;
        }
        let chosen: Vec<usize> = (0..taken.len()).filter(|&i| taken[i]).collect();
        let px: Vec<(usize, usize)> = chosen.iter().map(|&i| edges.pixels()[i]).collect();
        let sc: Vec<f64> = chosen.iter().map(|&i| edges.scores()[i]).collect();
        let len = px.len();
        EdgeSet::from_ranked(px, sc, len)
    };
    let sub_r = fill(&mut rng, &mut in_r, &edges_r)?;
    let sub_c = fill(&mut rng, &mut in_c, &edges_c)?;

    let (map_field, cam_field) = feature_fields(&gray, &camera.image)?;
    let x_r = sample_fused(&map_field, cam_field.global(), &mirror_edges(&sub_r, gray.width())?)?;
    let x_c = sample_fused(&cam_field, map_field.global(), &sub_c)?;
    let target = gt_correspondences(&map, &lift_scan, &sub_r, &sub_c, &gt, &camera.intrinsics, cfg.epsilon).into_target();
    Ok(TrainingExample { x_r, x_c, target })
}

/// Scene seeds at or above this are reserved for held-out evaluation.
pub const HELD_OUT_FIRST_SEED: u64 = 100_000;
/// Edges kept per side in a training example.
pub const TRAINING_MAX_EDGES: usize = 256;

/// Recipe for training on the synthetic curriculum.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumTraining {
    pub family: SceneFamily,
    pub scenes: usize,
    pub first_seed: u64,
    pub max_edges: usize,
    pub train: TrainConfig,
}

impl Default for CurriculumTraining {
    fn default() -> Self {
        Self {
            family: SceneFamily::BrickRoom,
            scenes: 200,
            first_seed: 0,
            max_edges: TRAINING_MAX_EDGES,
            train: TrainConfig {
                train_reduction: true,
                ..TrainConfig::default()
            },
        }
    }
}

/// Generates the training scenes, builds their examples and trains from the
/// untrained model. Scenes without edges on either side are skipped.
pub fn train_on_curriculum(recipe: &CurriculumTraining, cfg: &PipelineConfig) -> Result<(Model, TrainOutcome)> {
    if recipe.first_seed.saturating_add(recipe.scenes as u64) > HELD_OUT_FIRST_SEED {
        return Err(Error::Config(format!(
            "training seeds must stay below {HELD_OUT_FIRST_SEED} (held-out range)"
        )));
    }
    let mut examples = Vec::with_capacity(recipe.scenes);
    for k in 0..recipe.scenes as u64 {
        let scene = synthetic_eval_scene(recipe.family, recipe.first_seed + k)?;
        match training_example(&scene, cfg, recipe.max_edges, recipe.train.seed ^ k) {
            Ok(ex) => examples.push(ex),
            Err(Error::EmptyEdges { .. }) => log::warn!("{}: no edges, skipped", scene.name),
            Err(e) => return Err(e),
        }
    }
    log::info!("training on {} examples", examples.len());
    let init = Model::untrained();
    let out = toy_train(&examples, &init.params, (&init.reduction_r, &init.reduction_c), &recipe.train)?;
    let model = Model {
        params: out.params.clone(),
        reduction_r: out.reduction_r.clone(),
        reduction_c: out.reduction_c.clone(),
    };
    Ok((model, out))
}

impl Model {
    pub fn save(&self, path: &Path, manifest: MatchManifest) -> Result<()> {
        self.params.save(path, Some((&self.reduction_r, &self.reduction_c)), manifest)
    }
}

/// Manifest recording how a curriculum model was trained.
pub fn training_manifest(recipe: &CurriculumTraining, out: &TrainOutcome) -> MatchManifest {
    MatchManifest {
        seed: recipe.train.seed,
        epochs: recipe.train.epochs,
        learning_rate: recipe.train.lr,
        batch_size: recipe.train.batch_size,
        scenes: recipe.scenes,
        epoch_losses: out.epoch_losses.clone(),
        ..MatchManifest::untrained(DESCRIPTOR_DIM)
    }
}

/// A KITTI frame from disk with a perturbation drawn from `seed` and the
/// frame's identity, so each frame gets its own draw.
pub fn load_eval_scene(files: &FrameFiles, ring_mode: RingMode, seed: u64) -> Result<EvalScene> {
    let calib = load_calib(&files.calib)?;
    let scan = load_kitti_scan(&files.scan, ring_mode)?;
    let frame = load_camera_frame(&files.image, calib.intrinsics()?, files.index)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(files.sequence) << 40) ^ files.index.wrapping_mul(0x9E37_79B9));
    Ok(EvalScene {
        name: format!("{:02}/{:06}", files.sequence, files.index),
        scan,
        frame,
        cam_from_velo: calib.cam_from_velo()?,
        perturbation: Perturbation::sample(&mut rng),
    })
}

/// Files of a single-frame registration bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleFiles {
    pub scan: PathBuf,
    pub image: PathBuf,
    pub calib: PathBuf,
    pub ground_truth: PathBuf,
}

impl BundleFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            scan: dir.join("scan.bin"),
            image: dir.join("image.png"),
            calib: dir.join("calib.txt"),
            ground_truth: dir.join("gt.json"),
        }
    }
}

/// Writes a scene as one registration input: the yaw-perturbed cloud (the
/// translation is left out, since a single cloud is both projected and
/// lifted), the camera image, the calibration and the ground-truth
/// transform for that cloud. Points are stored ring by ring in ascending
/// azimuth, the order the default ring inference expects.
pub fn write_scene_bundle(scene: &EvalScene, dir: &Path) -> Result<BundleFiles> {
    let files = BundleFiles::in_dir(dir);
    let rotated = apply_perturbation(&scene.scan, &scene.perturbation, PerturbationStage::RotationOnly);
    let mut points = rotated.points().to_vec();
    points.sort_by(|a, b| {
        a.ring
            .cmp(&b.ring)
            .then(a.position.y.atan2(a.position.x).total_cmp(&b.position.y.atan2(b.position.x)))
    });
    save_kitti_scan(&files.scan, &LidarScan::new(points, rotated.num_rings())?)?;
    save_png_rgb(&files.image, &scene.frame.image)?;
    let calib = KittiCalib::from_parts(&scene.frame.intrinsics, &scene.cam_from_velo);
    write_atomic_str(&files.calib, &calib.to_text())?;
    let gt = scene.cam_from_velo.compose(&scene.perturbation.rotation().inverse());
    write_atomic_str(&files.ground_truth, &transform_json(&gt))?;
    Ok(files)
}

pub fn transform_json(t: &RigidTransform) -> String {
    serde_json::to_string_pretty(&TransformDoc::from(t)).expect("plain data serializes")
}

/// Reads a transform written by [`transform_json`]; a pose file (which has
/// extra fields) is accepted too.
pub fn parse_transform_json(text: &str) -> Result<RigidTransform> {
    #[derive(Deserialize)]
    struct Doc {
        rotation: [f64; 9],
        translation: [f64; 3],
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| Error::Format(format!("transform: {e}")))?;
    TransformDoc {
        rotation: doc.rotation,
        translation: doc.translation,
    }
    .to_transform()
}
