use nalgebra::{DMatrix, DVector, Rotation3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regforge::data_io::{decode_velodyne, encode_velodyne, parse_calib, KittiCalib, LidarPoint, LidarScan};
use regforge::descriptor::{decode_descriptor_set, parse_descriptor_header, Branch, DescriptorSet};
use regforge::eval::{aggregate, RegistrationResult, StageTimes};
use regforge::geometry::{project_point, Intrinsics, RigidTransform, Vec3};
use regforge::image_ops::{
    convolve3, parse_edge_csv, sobel_edges, wavelet_filter, GrayImage, ImageOrigin, WaveletMode, SOBEL_LEFT,
    SOBEL_RIGHT,
};
use regforge::matcher::{
    col_softmax, extract_matches, match_descriptors, matchability, partial_assignment, row_softmax, score_matrix,
    Combine, MatchParams,
};
use regforge::pipeline::{parse_transform_json, transform_json, PipelineConfig};
use regforge::pose::{epnp, parse_pose, ransac_epnp, Correspondence3d2d, PoseEstimate, RansacConfig};
use regforge::projection::{decode_index_grid, lift, parse_index_header, pixel_of, project, MapKind};

fn scan_strategy() -> impl Strategy<Value = LidarScan> {
    prop::collection::vec(
        (-30.0..30.0f64, -30.0..30.0f64, -3.0..3.0f64, 0.0..1.0f64, 0u16..8),
        1..300,
    )
    .prop_map(|pts| {
        let pts = pts.into_iter().map(|(x, y, z, r, ring)| LidarPoint::new(x, y, z, r, ring)).collect();
        LidarScan::new(pts, 8).unwrap()
    })
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn sized_matrix(lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..9, 1usize..11).prop_flat_map(move |(r, c)| matrix(r, c, lo, hi))
}

fn unit(lo: usize, hi: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..0.99f64, lo..=hi)
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let r = Rotation3::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-1.4..1.4), rng.gen_range(-3.0..3.0));
    let t = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    RigidTransform::new(*r.matrix(), t).unwrap()
}

fn k() -> Intrinsics {
    Intrinsics::from_params(400.0, 400.0, 256.0, 80.0).unwrap()
}

fn correspondences(rng: &mut ChaCha8Rng, pose: &RigidTransform, inliers: usize, outliers: usize) -> Vec<Correspondence3d2d> {
    let inv = pose.inverse();
    let mut out = Vec::new();
    while out.len() < inliers {
        let pc = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0), rng.gen_range(4.0..20.0));
        let w = inv.apply(&pc);
        if let Some(px) = project_point(&k(), pose, &w) {
            out.push(Correspondence3d2d::new(w, px));
        }
    }
    for _ in 0..outliers {
        let pc = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0), rng.gen_range(4.0..20.0));
        out.push(Correspondence3d2d::new(inv.apply(&pc), (rng.gen_range(0.0..512.0), rng.gen_range(0.0..160.0))));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupied_pixels_round_trip(scan in scan_strategy(), width in 1usize..2048) {
        for kind in [MapKind::Reflectance, MapKind::Depth] {
            let map = project(&scan, width, kind).unwrap();
            for (row, col) in map.occupied_pixels().collect::<Vec<_>>() {
                let p = lift(&map, (row, col), &scan).unwrap();
                let ring = scan.point(map.point_index(row, col).unwrap()).unwrap().ring;
                prop_assert_eq!(pixel_of(&p, ring, width), Some((row, col)));
                if kind == MapKind::Depth {
                    prop_assert!((map.value(row, col) - p.norm()).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn kept_point_is_the_nearest_in_its_cell(scan in scan_strategy()) {
        let map = project(&scan, 64, MapKind::Depth).unwrap();
        for p in scan.points() {
            if let Some((row, col)) = pixel_of(&p.position, p.ring, 64) {
                prop_assert!(map.value(row, col) <= p.position.norm());
            }
        }
    }

    #[test]
    fn index_grid_round_trips(scan in scan_strategy()) {
        let map = project(&scan, 128, MapKind::Reflectance).unwrap();
        let header = parse_index_header(&serde_json::to_string(&map.header()).unwrap()).unwrap();
        let grid = decode_index_grid(header, &map.index_bytes()).unwrap();
        for row in 0..map.height() {
            for col in 0..map.width() {
                prop_assert_eq!(grid.index[row * map.width() + col], map.point_index(row, col).map(|i| i as u32));
            }
        }
    }

    #[test]
    fn sobel_kernels_are_negations(h in 3usize..24, w in 3usize..24, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..h * w).map(|_| rng.gen_range(0.0..=255.0)).collect();
        let img = GrayImage::new(h, w, values, ImageOrigin::Other).unwrap();
        let l = convolve3(&img, &SOBEL_LEFT);
        let r = convolve3(&img, &SOBEL_RIGHT);
        prop_assert!(l.iter().zip(&r).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn edges_are_isolated_ranked_and_sized(h in 3usize..24, w in 3usize..24, n in 1usize..50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..h * w).map(|_| rng.gen_range(0.0..=255.0)).collect();
        let img = GrayImage::new(h, w, values, ImageOrigin::Other).unwrap();
        if let Ok(e) = sobel_edges(&img, 50.0, n) {
            prop_assert_eq!(e.len(), n);
            prop_assert!(e.scores().windows(2).all(|s| s[0] >= s[1]));
            let real = &e.pixels()[..e.real_count()];
            for (a, pa) in real.iter().enumerate() {
                for pb in &real[a + 1..] {
                    prop_assert!(pa.0.abs_diff(pb.0) > 1 || pa.1.abs_diff(pb.1) > 1);
                }
            }
            prop_assert_eq!(parse_edge_csv(&e.to_csv()).unwrap(), e);
        }
    }

    #[test]
    fn infinite_threshold_wavelet_is_identity(h in 1usize..30, w in 1usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..h * w).map(|_| rng.gen_range(0.0..=255.0)).collect();
        let img = GrayImage::new(h, w, values, ImageOrigin::Other).unwrap();
        let out = wavelet_filter(&img, f64::INFINITY, WaveletMode::SuppressAbove).unwrap();
        prop_assert!(out.values().iter().zip(img.values()).all(|(a, b)| (a - b).abs() <= 1e-9));
    }

    #[test]
    fn softmaxes_normalize(s in sized_matrix(-30.0, 30.0)) {
        let r = row_softmax(&s);
        let c = col_softmax(&s);
        for row in r.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
        }
        for col in c.column_iter() {
            prop_assert!((col.sum() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn assignment_is_shift_invariant_and_bounded(
        s in sized_matrix(-20.0, 20.0),
        shift in -100.0..100.0f64,
        sr in unit(8, 8),
        sc in unit(10, 10),
        mean in any::<bool>(),
    ) {
        let combine = if mean { Combine::Mean } else { Combine::Product };
        let sr = DVector::from_iterator(s.nrows(), sr.into_iter().take(s.nrows()));
        let sc = DVector::from_iterator(s.ncols(), sc.into_iter().take(s.ncols()));
        let a = partial_assignment(&s, &sr, &sc, combine).unwrap();
        let b = partial_assignment(&s.map(|v| v + shift), &sr, &sc, combine).unwrap();
        prop_assert!((a.p.clone() - b.p).amax() <= 1e-9);
        for i in 0..s.nrows() {
            for j in 0..s.ncols() {
                let p = a.p[(i, j)];
                prop_assert!(p >= 0.0 && p < sr[i] * sc[j] + 1e-9);
            }
        }
    }

    #[test]
    fn extracted_matches_are_injective_mutual_maxima(p in sized_matrix(0.0, 1.0), floor in 0.0..0.5f64) {
        let m = extract_matches(&p, floor);
        let mut rows = std::collections::HashSet::new();
        let mut cols = std::collections::HashSet::new();
        for pair in &m.pairs {
            prop_assert!(rows.insert(pair.i) && cols.insert(pair.j));
            prop_assert!(pair.confidence >= floor);
            prop_assert!(p.row(pair.i).iter().all(|&v| v <= pair.confidence));
            prop_assert!(p.column(pair.j).iter().all(|&v| v <= pair.confidence));
        }
    }

    #[test]
    fn fused_matching_equals_materialized(
        nr in 1usize..40, nc in 1usize..40, pad_r in 0usize..5, pad_c in 0usize..5, seed in any::<u64>(),
    ) {
        let dim = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = |n: usize, pad: usize| {
            let mut v: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let last = v[(n - 1) * dim..].to_vec();
            for _ in 0..pad {
                v.extend_from_slice(&last);
            }
            v
        };
        let dr = DescriptorSet::from_rows(dim, Branch::Reflectance, rows(nr, pad_r)).unwrap();
        let dc = DescriptorSet::from_rows(dim, Branch::Camera, rows(nc, pad_c)).unwrap();
        let p = MatchParams::random(dim, seed, 1.0);
        let s = score_matrix(&dr, &dc, &p).unwrap();
        let sr = matchability(&dr, &p.h_r, p.hb_r).unwrap();
        let sc = matchability(&dc, &p.h_c, p.hb_c).unwrap();
        let pa = partial_assignment(&s, &sr, &sc, Combine::Product).unwrap();
        let slow = extract_matches(&pa.p, 0.0);
        let fast = match_descriptors(&dr, &dc, &p, Combine::Product, 0.0).unwrap();
        prop_assert_eq!(slow.len(), fast.len());
        for (a, b) in slow.pairs.iter().zip(&fast.pairs) {
            prop_assert_eq!((a.i, a.j), (b.i, b.j));
            prop_assert!((a.confidence - b.confidence).abs() <= 1e-12 * a.confidence.max(1e-300));
        }
    }

    #[test]
    fn aggregate_ignores_order(
        rows in prop::collection::vec((0.0..20.0f64, 0.0..8.0f64, any::<bool>()), 1..30),
        seed in any::<u64>(),
    ) {
        let results: Vec<RegistrationResult> = rows
            .iter()
            .enumerate()
            .map(|(k, &(rre, rte, failed))| {
                let t = StageTimes { pose: rre * 1e-3, ..Default::default() };
                if failed {
                    RegistrationResult::failed(format!("s{k}"), t)
                } else {
                    RegistrationResult::new(format!("s{k}"), rre, rte, t)
                }
            })
            .collect();
        let mut shuffled = results.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng);
        // Debug text, so NaN statistics of all-failed sets compare equal
        prop_assert_eq!(format!("{:?}", aggregate(&results).unwrap()), format!("{:?}", aggregate(&shuffled).unwrap()));
    }

    #[test]
    fn velodyne_records_round_trip(recs in prop::collection::vec(prop::array::uniform4(-1e3f32..1e3), 0..200)) {
        prop_assert_eq!(decode_velodyne(&encode_velodyne(&recs)).unwrap(), recs);
    }

    #[test]
    fn documents_round_trip(seed in any::<u64>(), rmse in 0.0..10.0f64, inliers in prop::collection::vec(0usize..1000, 0..20)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_pose(&mut rng);
        let back = parse_transform_json(&transform_json(&t)).unwrap();
        prop_assert!(back.rotation_angle_to(&t) < 1e-12);
        prop_assert!((back.translation() - t.translation()).norm() < 1e-12);

        let est = PoseEstimate { transform: t, inliers, reprojection_rmse: rmse, iterations_used: 17 };
        let pose = parse_pose(&est.to_json()).unwrap();
        prop_assert_eq!(&pose.inliers, &est.inliers);
        prop_assert_eq!(pose.reprojection_rmse, rmse);

        let kk = Intrinsics::from_params(rng.gen_range(100.0..900.0), rng.gen_range(100.0..900.0), 300.0, 90.0).unwrap();
        let calib = parse_calib(&KittiCalib::from_parts(&kk, &t).to_text()).unwrap();
        prop_assert!((calib.intrinsics().unwrap().fx() - kk.fx()).abs() < 1e-9);
        prop_assert!(calib.cam_from_velo().unwrap().rotation_angle_to(&t) < 1e-9);

        let cfg = PipelineConfig { epsilon_e: rmse + 0.5, seed, ..Default::default() };
        prop_assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn descriptor_bytes_round_trip(n in 1usize..20, dim in 1usize..16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DescriptorSet::from_rows(dim, Branch::Camera, (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let header = parse_descriptor_header(&serde_json::to_string(&d.header()).unwrap()).unwrap();
        // float32 on disk
        let back = decode_descriptor_set(header, &d.to_bytes()).unwrap();
        prop_assert_eq!((back.len(), back.dim(), back.source()), (d.len(), d.dim(), d.source()));
        prop_assert!(back.as_slice().iter().zip(d.as_slice()).all(|(a, b)| (a - b).abs() <= 1e-6));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn epnp_is_exact_on_noiseless_points(seed in any::<u64>(), n in 6usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng);
        let corrs = correspondences(&mut rng, &pose, n, 0);
        let est = epnp(&corrs, &k()).unwrap();
        prop_assert!(est.rotation_angle_to(&pose) < 1e-6);
        prop_assert!((est.translation() - pose.translation()).norm() < 1e-6);
    }

    #[test]
    fn ransac_ignores_input_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng);
        let corrs = correspondences(&mut rng, &pose, 20, 20);
        let mut shuffled = corrs.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng);
        let a = ransac_epnp(&corrs, &k(), &RansacConfig::default()).unwrap();
        let b = ransac_epnp(&shuffled, &k(), &RansacConfig::default()).unwrap();
        prop_assert_eq!(a.transform, b.transform);
        let set = |e: &PoseEstimate, c: &[Correspondence3d2d]| {
            let mut v: Vec<_> = e.inliers.iter().map(|&i| format!("{:?}", c[i])).collect();
            v.sort();
            v
        };
        prop_assert_eq!(set(&a, &corrs), set(&b, &shuffled));
    }
}
