//! Training-level properties: these train on the synthetic curriculum and
//! take about a minute each.

use nalgebra::DMatrix;
use regforge::eval::StageTimes;
use regforge::matcher::{extract_matches, forward, gt_correspondences, reduce_rows, Combine};
use regforge::pipeline::{
    describe_and_match, synthetic_eval_scene, train_on_curriculum, training_example, CurriculumTraining, Model,
    PipelineConfig, SceneFamily, HELD_OUT_FIRST_SEED, TRAINING_MAX_EDGES,
};

const TOP_K: usize = 5;

/// Fraction of ground-truth pairs whose camera descriptor is among the
/// `TOP_K` closest to the reflectance descriptor (cosine similarity, all real
/// camera edges as candidates).
fn top_k_rate(pairs: &[(usize, usize)], d_r: &DMatrix<f64>, d_c: &DMatrix<f64>) -> (usize, usize) {
    let normalize = |m: &DMatrix<f64>| {
        let mut m = m.clone();
        for mut row in m.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
        m
    };
    let sim = normalize(d_r) * normalize(d_c).transpose();
    let hits = pairs
        .iter()
        .filter(|&&(i, j)| (0..sim.ncols()).filter(|&k| sim[(i, k)] > sim[(i, j)]).count() < TOP_K)
        .count();
    (hits, pairs.len())
}

#[test]
fn hand_crafted_descriptor_ranks_true_match_in_top_five() {
    let cfg = PipelineConfig::default();
    let (mut hits, mut total) = (0, 0);
    for k in 0..5 {
        let scene = synthetic_eval_scene(SceneFamily::BrickRoom, HELD_OUT_FIRST_SEED + k).unwrap();
        // every real edge on both sides: the fused samples before reduction
        let ex = training_example(&scene, &cfg, cfg.n_edges, k).unwrap();
        let (h, t) = top_k_rate(&ex.target.pairs, &ex.x_r, &ex.x_c);
        hits += h;
        total += t;
    }
    let rate = hits as f64 / total as f64;
    println!("fused descriptor top-{TOP_K}: {hits}/{total} = {rate:.3}");
    assert!(rate >= 0.7, "top-{TOP_K} rate {rate:.3} below 0.7");
}

#[test]
fn trained_descriptor_ranks_true_match_in_top_five() {
    let cfg = PipelineConfig::default();
    let (model, _) = train_on_curriculum(&CurriculumTraining::default(), &cfg).unwrap();
    let (mut hits, mut total) = (0, 0);
    for k in 0..5 {
        let scene = synthetic_eval_scene(SceneFamily::BrickRoom, HELD_OUT_FIRST_SEED + k).unwrap();
        let (map_scan, lift_scan) = scene.perturbed_scans();
        let m = describe_and_match(&map_scan, &scene.frame, &model, &cfg, &mut StageTimes::default()).unwrap();
        let gt = gt_correspondences(
            &m.map,
            &lift_scan,
            &m.edges_r,
            &m.edges_c,
            &scene.ground_truth(),
            &m.camera.intrinsics,
            cfg.epsilon,
        );
        let nc = m.edges_c.real_count();
        let pairs: Vec<_> = gt.pairs.iter().copied().filter(|&(i, _)| i < m.edges_r.real_count()).collect();
        let d_c = m.d_c.to_matrix().rows(0, nc).into_owned();
        let (h, t) = top_k_rate(&pairs, &m.d_r.to_matrix(), &d_c);
        hits += h;
        total += t;
    }
    let rate = hits as f64 / total as f64;
    println!("trained descriptor top-{TOP_K}: {hits}/{total} = {rate:.3}");
    assert!(rate >= 0.7, "top-{TOP_K} rate {rate:.3} below 0.7");
}

#[test]
fn stripe_curriculum_matches_are_precise() {
    let cfg = PipelineConfig::default();
    let recipe = CurriculumTraining {
        family: SceneFamily::StripeRoom,
        ..Default::default()
    };
    let (model, outcome) = train_on_curriculum(&recipe, &cfg).unwrap();
    assert_eq!(outcome.epoch_losses.len(), 30);
    let (mut hits, mut total) = (0, 0);
    for k in 0..20 {
        let scene = synthetic_eval_scene(SceneFamily::StripeRoom, HELD_OUT_FIRST_SEED + k).unwrap();
        let ex = training_example(&scene, &cfg, TRAINING_MAX_EDGES, k).unwrap();
        let (d_r, _) = reduce_rows(&ex.x_r, model.reduction_r.matrix());
        let (d_c, _) = reduce_rows(&ex.x_c, model.reduction_c.matrix());
        let f = forward(&d_r, &d_c, &model.params, Combine::Product).unwrap();
        let m = extract_matches(&f.pa.p, 0.0);
        total += m.len();
        hits += m.pairs.iter().filter(|p| ex.target.pairs.contains(&(p.i, p.j))).count();
    }
    let precision = hits as f64 / total as f64;
    println!("stripe precision: {hits}/{total} = {precision:.3}");
    assert!(precision >= 0.8, "precision {precision:.3} below 0.8");
}

#[test]
fn training_loss_never_rises_across_five_epochs() {
    let cfg = PipelineConfig::default();
    let recipe = CurriculumTraining {
        scenes: 40,
        ..Default::default()
    };
    let (_, outcome) = train_on_curriculum(&recipe, &cfg).unwrap();
    let l = &outcome.epoch_losses;
    assert!(l[0] < outcome.initial_loss);
    for w in l.windows(5) {
        assert!(w[4] <= w[0], "{w:?}");
    }
}
