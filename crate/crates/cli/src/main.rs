//! `regforge`: project scans, detect edges, match, register and evaluate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use regforge::data_io::{list_frames, load_calib, load_camera_frame, load_kitti_scan, write_kitti_frame, TEST_SEQUENCES};
use regforge::eval::{aggregate, write_report, RegistrationResult, StageTimes, Summary};
use regforge::geometry::Intrinsics;
use regforge::image_ops::{load_gray_png, sobel_edges, wavelet_filter, ImageOrigin};
use regforge::io_util::{read_string, write_atomic_str};
use regforge::matcher::Combine;
use regforge::pipeline::{
    describe_and_match, evaluate_scenes, load_eval_scene, parse_transform_json, prepare_camera, register,
    synthetic_eval_scene, synthetic_eval_set, train_on_curriculum, training_manifest, transform_json,
    write_scene_bundle, CurriculumTraining, EvalScene, Model, PipelineConfig, SceneFamily, HELD_OUT_FIRST_SEED,
};
use regforge::projection::{project, MapKind};
use regforge::{Error, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   usage error
  10  io                   file missing or unreadable
  11  format               malformed input file
  12  config               invalid configuration or flag value
  13  data                 empty or degenerate scan
  14  empty-edges          no edge pixel above the Sobel threshold
  15  contract             inconsistent inputs (shapes, sizes)
  16  numeric              non-finite values
  17  training-diverged    loss exceeded 10x its initial value
  18  degenerate-geometry  too few or degenerate 2D-3D correspondences
  19  registration-failed  RANSAC found no supported pose

Configuration precedence: flag > --config file > REGFORGE_SEED (seed only) > defaults.";

#[derive(Parser)]
#[command(name = "regforge", version, about = "LiDAR-to-camera registration by reflectance-map edge matching")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a KITTI scan to a spherical map (image, index grid, header).
    Project {
        scan: PathBuf,
        /// Map image path (`.png` or `.pgm`); index files go next to it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Detect vertical Sobel edges in a camera image or a projected map.
    Edges {
        image: PathBuf,
        #[arg(long, value_enum, default_value_t = EdgeSource::Camera)]
        source: EdgeSource,
        /// Edge CSV (`row,col,score`).
        #[arg(long)]
        out: PathBuf,
        /// Also write the edges as a white-on-black PNG.
        #[arg(long)]
        render: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Edges, descriptors and matches for one frame.
    Match {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Full registration of one frame: pose, correspondences, timings.
    Register {
        #[command(flatten)]
        frame: FrameArgs,
        /// Ground-truth transform JSON; adds error metrics.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Perturb, register and score every scene of a dataset.
    Evaluate {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Worker threads; results are reported in scene order.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Report directory (summary.json, summary.txt, scenes.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the matching layer on the synthetic curriculum.
    TrainToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "brick-room")]
        family: SceneFamily,
        #[arg(long, default_value_t = 200)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        /// Edges kept per side in each training example.
        #[arg(long, default_value_t = regforge::pipeline::TRAINING_MAX_EDGES)]
        max_edges: usize,
        /// Keep the descriptor reductions fixed.
        #[arg(long)]
        freeze_reduction: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate the grid of inlier radii x map kinds.
    Ablate {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
        epsilons: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "reflectance,depth")]
        kinds: Vec<MapKind>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Directory for ablation.csv and ablation.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write synthetic scenes in the KITTI layout, or one registration bundle.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "brick-room")]
        family: SceneFamily,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = HELD_OUT_FIRST_SEED)]
        first_seed: u64,
        #[arg(long, default_value_t = TEST_SEQUENCES[0])]
        sequence: u32,
        /// Write `scan.bin`, `image.png`, `calib.txt` and `gt.json` for the
        /// first scene instead of a dataset.
        #[arg(long)]
        bundle: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeSource {
    Camera,
    Map,
}

#[derive(Args)]
struct FrameArgs {
    scan: PathBuf,
    image: PathBuf,
    calib: PathBuf,
    /// Trained matcher; the untrained defaults otherwise.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetArgs {
    /// KITTI odometry root holding `sequences/NN/...`.
    root: Option<PathBuf>,
    /// Sequences to read (default: the test split).
    #[arg(long, value_delimiter = ',')]
    sequences: Vec<u32>,
    /// Generate scenes of this family instead of reading a dataset.
    #[arg(long, conflicts_with = "root")]
    synthetic: Option<SceneFamily>,
    /// Number of generated scenes.
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = HELD_OUT_FIRST_SEED)]
    first_seed: u64,
    /// Use at most this many frames.
    #[arg(long)]
    limit: Option<usize>,
}

/// Pipeline overrides; unset flags keep the file or default value.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Map kind: reflectance or depth.
    #[arg(long)]
    kind: Option<MapKind>,
    /// Ground-truth match radius in pixels.
    #[arg(long)]
    epsilon: Option<f64>,
    /// RANSAC inlier radius in pixels.
    #[arg(long)]
    epsilon_e: Option<f64>,
    #[arg(long)]
    n_edges: Option<usize>,
    #[arg(long)]
    wavelet_threshold: Option<f64>,
    /// suppress-above or suppress-below.
    #[arg(long)]
    wavelet_mode: Option<regforge::image_ops::WaveletMode>,
    #[arg(long)]
    sobel_threshold_camera: Option<f64>,
    #[arg(long)]
    sobel_threshold_reflectance: Option<f64>,
    /// product or mean.
    #[arg(long)]
    combine: Option<Combine>,
    #[arg(long)]
    confidence_floor: Option<f64>,
    /// azimuth-wrap or theta-bins.
    #[arg(long)]
    ring_mode: Option<regforge::data_io::RingMode>,
    /// xyz or zyx.
    #[arg(long)]
    euler: Option<regforge::eval::EulerConvention>,
    #[arg(long)]
    ransac_max_iter: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::resolve(self.config.as_deref())?;
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { cfg.$target = v; })*
            };
        }
        set!(
            seed => seed,
            kind => map_kind,
            epsilon => epsilon,
            epsilon_e => epsilon_e,
            n_edges => n_edges,
            wavelet_threshold => wavelet_threshold,
            wavelet_mode => wavelet_mode,
            sobel_threshold_camera => sobel_threshold_camera,
            sobel_threshold_reflectance => sobel_threshold_reflectance,
            combine => combine,
            confidence_floor => confidence_floor,
            ring_mode => ring_mode,
            euler => euler,
            ransac_max_iter => ransac_max_iter,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_model(path: Option<&Path>) -> Result<Model> {
    match path {
        Some(p) => Model::load(p),
        None => {
            warn!("no --params given; using the untrained matcher");
            Ok(Model::untrained())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

impl DatasetArgs {
    fn scenes(&self, cfg: &PipelineConfig) -> Result<Vec<EvalScene>> {
        let mut scenes = match (&self.root, self.synthetic) {
            (Some(root), None) => {
                let seqs = if self.sequences.is_empty() {
                    TEST_SEQUENCES.to_vec()
                } else {
                    self.sequences.clone()
                };
                let mut frames = list_frames(root, &seqs)?;
                if let Some(n) = self.limit {
                    frames.truncate(n);
                }
                frames
                    .iter()
                    .map(|f| load_eval_scene(f, cfg.ring_mode, cfg.seed))
                    .collect::<Result<Vec<_>>>()?
            }
            (None, Some(family)) => synthetic_eval_set(family, self.first_seed, self.count)?,
            _ => return Err(Error::Config("give a dataset root or --synthetic <family>".into())),
        };
        if let Some(n) = self.limit {
            scenes.truncate(n);
        }
        if scenes.is_empty() {
            return Err(Error::Config("no scenes to evaluate".into()));
        }
        Ok(scenes)
    }
}

fn load_frame(frame: &FrameArgs, cfg: &PipelineConfig) -> Result<(regforge::data_io::LidarScan, regforge::data_io::CameraFrame)> {
    let calib = load_calib(&frame.calib)?;
    let scan = load_kitti_scan(&frame.scan, cfg.ring_mode)?;
    let camera = load_camera_frame(&frame.image, calib.intrinsics()?, 0)?;
    Ok((scan, camera))
}

fn timings_json(t: &StageTimes) -> String {
    let mut v = serde_json::to_value(t).expect("plain data serializes");
    v["total"] = serde_json::json!(t.total());
    serde_json::to_string_pretty(&v).expect("plain data serializes")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Project { scan, out, cfg } => {
            let cfg = cfg.resolve()?;
            let scan = load_kitti_scan(&scan, cfg.ring_mode)?;
            let map = project(&scan, cfg.map_size[1], cfg.map_kind)?;
            let (index, header) = map.save(&out)?;
            println!("{}\n{}\n{}", out.display(), index.display(), header.display());
            info!("{} of {} pixels occupied", map.occupied_count(), map.height() * map.width());
        }
        Command::Edges {
            image,
            source,
            out,
            render,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let (img, edges) = match source {
                EdgeSource::Camera => {
                    // intrinsics do not matter for edge detection
                    let k = Intrinsics::from_params(1.0, 1.0, 0.0, 0.0)?;
                    let cam = prepare_camera(&load_camera_frame(&image, k, 0)?, &cfg)?;
                    let edges = sobel_edges(&cam.image, cfg.sobel_threshold_camera, cfg.n_edges)?;
                    (cam.image, edges)
                }
                EdgeSource::Map => {
                    let gray = load_gray_png(&image, ImageOrigin::ReflectanceMap)?;
                    let filtered = wavelet_filter(&gray, cfg.wavelet_threshold, cfg.wavelet_mode)?;
                    let edges = sobel_edges(&filtered, cfg.sobel_threshold_reflectance, cfg.n_edges)?;
                    (gray, edges)
                }
            };
            edges.save_csv(&out)?;
            if let Some(path) = render {
                edges.render(img.height(), img.width())?.save(&path)?;
            }
            println!("{} edges ({} before padding)", edges.len(), edges.real_count());
        }
        Command::Match { frame, out, cfg } => {
            let cfg = cfg.resolve()?;
            let model = load_model(frame.params.as_deref())?;
            let (scan, camera) = load_frame(&frame, &cfg)?;
            let mut times = StageTimes::default();
            let m = describe_and_match(&scan, &camera, &model, &cfg, &mut times)?;
            create_dir(&out)?;
            m.edges_r.save_csv(&out.join("edges_r.csv"))?;
            m.edges_c.save_csv(&out.join("edges_c.csv"))?;
            m.d_r.save(&out.join("desc_r.bin"))?;
            m.d_c.save(&out.join("desc_c.bin"))?;
            m.matches.save_csv(&out.join("matches.csv"), &m.edges_r, &m.edges_c)?;
            write_atomic_str(&out.join("timings.json"), &timings_json(&times))?;
            println!("{} matches", m.matches.len());
        }
        Command::Register { frame, gt, out, cfg } => {
            let cfg = cfg.resolve()?;
            let model = load_model(frame.params.as_deref())?;
            let (scan, camera) = load_frame(&frame, &cfg)?;
            let gt = gt.map(|p| read_string(&p).and_then(|t| parse_transform_json(&t))).transpose()?;
            let mut times = StageTimes::default();
            create_dir(&out)?;
            let reg = register(&scan, &scan, &camera, &model, &cfg, &mut times);
            write_atomic_str(&out.join("timings.json"), &timings_json(&times))?;
            let reg = reg?;
            reg.pose.save(&out.join("pose.json"))?;
            reg.matches.save_csv(&out.join("matches.csv"), &reg.edges_r, &reg.edges_c)?;
            println!("{}", transform_json(&reg.pose.transform));
            println!(
                "{} matches, {} inliers, rmse {:.3} px, {} iterations, {:.3} s",
                reg.matches.len(),
                reg.pose.inliers.len(),
                reg.pose.reprojection_rmse,
                reg.pose.iterations_used,
                times.total()
            );
            if let Some(gt) = gt {
                let r = RegistrationResult::from_transforms(String::from("scene"), &gt, &reg.pose.transform, cfg.euler, times);
                let doc = serde_json::json!({
                    "rre": r.rre,
                    "rte": r.rte,
                    "success": r.success,
                    "bad": r.bad,
                });
                write_atomic_str(&out.join("metrics.json"), &serde_json::to_string_pretty(&doc).expect("json"))?;
                println!("rre {:.3} deg, rte {:.3} m, success {}", r.rre, r.rte, r.success);
            }
        }
        Command::Evaluate {
            data,
            params,
            jobs,
            out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let model = load_model(params.as_deref())?;
            let scenes = data.scenes(&cfg)?;
            let results = evaluate_scenes(&scenes, &model, &cfg, jobs);
            let summary = aggregate(&results)?;
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_report(&dir, &summary, &results)?;
            }
            print!("{}", summary.to_table());
        }
        Command::TrainToy {
            out,
            family,
            scenes,
            first_seed,
            epochs,
            lr,
            batch_size,
            max_edges,
            freeze_reduction,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let recipe = CurriculumTraining {
                family,
                scenes,
                first_seed,
                max_edges,
                train: regforge::matcher::TrainConfig {
                    epochs,
                    lr,
                    batch_size,
                    seed: cfg.seed,
                    combine: cfg.combine,
                    train_reduction: !freeze_reduction,
                    ..Default::default()
                },
            };
            let t0 = Instant::now();
            let (model, outcome) = train_on_curriculum(&recipe, &cfg)?;
            model.save(&out, training_manifest(&recipe, &outcome))?;
            println!("initial loss {:.5}", outcome.initial_loss);
            for (k, l) in outcome.epoch_losses.iter().enumerate() {
                println!("epoch {:>3}: loss {l:.5}", k + 1);
            }
            println!("trained in {:.1} s -> {}", t0.elapsed().as_secs_f64(), out.display());
        }
        Command::Ablate {
            data,
            params,
            epsilons,
            kinds,
            jobs,
            out,
            cfg,
        } => {
            let base = cfg.resolve()?;
            let model = load_model(params.as_deref())?;
            let scenes = data.scenes(&base)?;
            let mut rows = Vec::new();
            for &kind in &kinds {
                for &eps in &epsilons {
                    let cfg = PipelineConfig {
                        map_kind: kind,
                        epsilon_e: eps,
                        ..base.clone()
                    };
                    cfg.validate()?;
                    let t0 = Instant::now();
                    let results = evaluate_scenes(&scenes, &model, &cfg, jobs);
                    let wall = t0.elapsed().as_secs_f64();
                    rows.push((kind, eps, aggregate(&results)?, wall));
                }
            }
            let mut csv = String::from("kind,epsilon_e,acc,bad_rate,failed,rte_mean,rre_mean,wall_time\n");
            let mut json = Vec::new();
            println!("{:<12} {:>6} {:>7} {:>7} {:>6} {:>9}", "kind", "eps_e", "acc%", "bad%", "failed", "time[s]");
            for (kind, eps, s, wall) in &rows {
                let name = map_kind_name(*kind);
                csv.push_str(&format!(
                    "{name},{eps},{},{},{},{},{},{wall}\n",
                    s.acc_percent, s.bad_rate_percent, s.failed, s.rte.mean, s.rre.mean
                ));
                json.push(ablation_row(name, *eps, s, *wall));
                println!(
                    "{name:<12} {eps:>6} {:>7.1} {:>7.1} {:>6} {wall:>9.2}",
                    s.acc_percent, s.bad_rate_percent, s.failed
                );
            }
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_atomic_str(&dir.join("ablation.csv"), &csv)?;
                let text = serde_json::to_string_pretty(&json).expect("json");
                write_atomic_str(&dir.join("ablation.json"), &text)?;
            }
        }
        Command::Synth {
            out,
            family,
            count,
            first_seed,
            sequence,
            bundle,
        } => {
            if bundle {
                let scene = synthetic_eval_scene(family, first_seed)?;
                create_dir(&out)?;
                let files = write_scene_bundle(&scene, &out)?;
                println!("{}", files.scan.display());
                return Ok(());
            }
            for k in 0..count as u64 {
                let seed = first_seed + k;
                let cfg = regforge::pipeline::curriculum_config(family, seed);
                let scene = regforge::data_io::generate_synthetic_scene(seed, &cfg)?;
                write_kitti_frame(&out, sequence, k, &scene)?;
            }
            println!("{count} frames in {}", regforge::data_io::sequence_dir(&out, sequence).display());
        }
    }
    Ok(())
}

fn map_kind_name(kind: MapKind) -> &'static str {
    match kind {
        MapKind::Reflectance => "reflectance",
        MapKind::Depth => "depth",
    }
}

fn ablation_row(kind: &str, eps: f64, s: &Summary, wall: f64) -> serde_json::Value {
    serde_json::json!({
        "kind": kind,
        "epsilon_e": eps,
        "acc": s.acc_percent,
        "bad_rate": s.bad_rate_percent,
        "failed": s.failed,
        "rte_mean": s.rte.mean,
        "rre_mean": s.rre.mean,
        "wall_time": wall,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            eprintln!("error [{}]: {e}", class.name());
            ExitCode::from(class.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use regforge::ErrorClass;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_every_exit_code() {
        for class in ErrorClass::ALL {
            let line = format!("{}  {}", class.exit_code(), class.name());
            assert!(EXIT_CODES.contains(&line), "missing `{line}`");
        }
    }

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cfg.json");
        std::fs::write(&file, r#"{"epsilon_e": 4.0, "n_edges": 500}"#).unwrap();
        let args = ConfigArgs {
            config: Some(file),
            epsilon_e: Some(8.0),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.epsilon_e, 8.0);
        assert_eq!(cfg.n_edges, 500);
        assert_eq!(cfg.sobel_threshold_camera, 80.0);
    }
}
