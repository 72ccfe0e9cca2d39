//! Acceptance gates for the full pipeline. Each test pins one contract:
//! projection against the forward renderer, analytic round trips, fusion
//! invariants, correlation properties, uncertainty weighting, the loss and
//! its gradients, end-to-end retrieval, and byte-level determinism of the
//! command-line tool. One verdict line prints per criterion.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cvl_core::{
    attention_fuse, attention_matrix, batch_loss, batch_loss_grad, best_displacement,
    ground_pixel_to_world, make_trajectory, ncc_field, overhead_pixel_to_world, render_ground,
    render_satellite, scan_database, search_radius, shifted_view, triplet_loss,
    triplet_loss_grad, warp_to_overhead, weighted_similarity, world_to_ground_pixel,
    world_to_overhead_pixel, CameraIntrinsics, CanvasSpec, DatabaseEntry, DistanceMatrix,
    FeatureMap, Interpolation, RigidPose, Scene, SimilarityField, UncertaintyField,
};

fn pass(line: &str) {
    println!("PASS  {line}");
}

// ---------------------------------------------------------------------------
// 1. Projection oracle: warped ground views match the overhead renderer.

fn masked_stats(a: &FeatureMap, b: &FeatureMap) -> (f64, f64, usize) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for y in 0..a.height() {
        for x in 0..a.width() {
            if a.is_valid(y, x) && b.is_valid(y, x) {
                xs.push(a.get(y, x, 0) as f64);
                ys.push(b.get(y, x, 0) as f64);
            }
        }
    }
    let n = xs.len();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mae = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in xs.iter().zip(&ys) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    (mae, cov / (vx * vy).sqrt(), n)
}

#[test]
fn acceptance_1_projection_matches_the_overhead_renderer() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let rounds = 20;
    let (mut worst_mae, mut worst_corr) = (0.0f64, 1.0f64);
    for round in 0..rounds {
        let scene = Scene::noise(3000 + round, 180.0, 512).unwrap();
        let height = rng.random_range(10.0..18.0);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let pitch = rng.random_range(0.35..0.8);
        let center = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), 0.0);
        let pose = RigidPose::from_camera(center, heading, pitch, 1);
        let intr = CameraIntrinsics::from_hfov(rng.random_range(1.2..1.6), 256, 192).unwrap();

        let ground = render_ground(&scene, &intr, &pose, height).unwrap();
        let canvas = CanvasSpec::new(256, 0.3, height).unwrap();
        let warped =
            warp_to_overhead(&ground, &intr, &pose, &canvas, Interpolation::Bilinear).unwrap();
        let satellite = render_satellite(&scene, &canvas, (0.0, 0.0));

        let (mae, corr, n) = masked_stats(&warped, &satellite);
        assert!(n > 5000, "round {round}: overlap only {n} px");
        assert!(mae < 0.05, "round {round}: mean abs error {mae}");
        assert!(corr > 0.98, "round {round}: correlation {corr}");
        worst_mae = worst_mae.max(mae);
        worst_corr = worst_corr.min(corr);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    pass(&format!(
        "projection oracle: {rounds} random configurations at 256 px, worst mae {worst_mae:.4} (< 0.05), worst correlation {worst_corr:.4} (> 0.98), {elapsed:.2?} (< 30 s)"
    ));
}

// ---------------------------------------------------------------------------
// 2. Analytic round trip: overhead -> world -> ground -> overhead.

#[test]
fn acceptance_2_projection_round_trip_closes() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let canvas = CanvasSpec::new(256, 0.2, 1.65).unwrap();
    let poses: Vec<(RigidPose, CameraIntrinsics, f64)> = (0..20)
        .map(|i| {
            let height = rng.random_range(1.0..20.0);
            let pose = RigidPose::from_camera(
                Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.2),
                i + 1,
            );
            let intr = CameraIntrinsics::from_hfov(rng.random_range(1.0..1.8), 320, 240).unwrap();
            (pose, intr, height)
        })
        .collect();

    let wanted = 100_000usize;
    let mut accepted = 0usize;
    let mut tries = 0usize;
    let mut worst = 0.0f64;
    while accepted < wanted {
        tries += 1;
        assert!(tries < 20_000_000, "visibility rejection rate too high");
        let (pose, intr, height) = &poses[tries % poses.len()];
        let u = rng.random_range(0.0..256.0);
        let v = rng.random_range(0.0..256.0);
        let mut world = overhead_pixel_to_world(u, v, &canvas);
        world.z = -height;
        let Ok((gu, gv, depth)) = world_to_ground_pixel(&world, intr, pose) else {
            continue;
        };
        if !(0.0..intr.width as f64).contains(&gu) || !(0.0..intr.height as f64).contains(&gv) {
            continue;
        }
        let back = ground_pixel_to_world(gu, gv, depth, intr, pose);
        let (u2, v2) = world_to_overhead_pixel(&back, &canvas);
        let err = (u2 - u).abs().max((v2 - v).abs());
        assert!(err < 1e-6, "round trip error {err} px at ({u}, {v})");
        worst = worst.max(err);
        accepted += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    pass(&format!(
        "round-trip geometry: {wanted} visible points closed within {worst:.2e} px (< 1e-6), {elapsed:.2?} (< 5 s)"
    ));
}

// ---------------------------------------------------------------------------
// 3. Fusion invariants: stochastic rows, permutation invariance, fixed point.

fn random_map(rng: &mut ChaCha8Rng, s: usize, c: usize, masked_share: f64) -> FeatureMap {
    let mut data = vec![0.0f32; s * s * c];
    let mut mask = vec![true; s * s];
    for p in 0..s * s {
        if rng.random_range(0.0..1.0) < masked_share {
            mask[p] = false;
        } else {
            for ch in 0..c {
                data[p * c + ch] = rng.random_range(0.0..1.0);
            }
        }
    }
    FeatureMap::from_parts(s, s, c, data, mask).unwrap()
}

#[test]
fn acceptance_3_fusion_invariants_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let instances = 100;
    for instance in 0..instances {
        let n = rng.random_range(2..=8usize);
        let c = rng.random_range(1..=3usize);
        let frames: Vec<FeatureMap> = (0..n).map(|_| random_map(&mut rng, 32, c, 0.1)).collect();

        // Identity transforms: the frames serve as queries, keys and values.
        let attention = attention_matrix(&frames, &frames).unwrap();
        for i in 0..n {
            for y in 0..32 {
                for x in 0..32 {
                    if !attention.is_pixel_valid(y, x) {
                        continue;
                    }
                    let sum: f64 = (0..n).map(|j| attention.get(i, j, y, x) as f64).sum();
                    assert!(
                        (sum - 1.0).abs() < 1e-6,
                        "instance {instance}: row sum {sum} at ({i}, {y}, {x})"
                    );
                }
            }
        }
        let fused = attention_fuse(&attention, &frames).unwrap();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<FeatureMap> = order.iter().map(|&i| frames[i].clone()).collect();
        let fused_p =
            attention_fuse(&attention_matrix(&permuted, &permuted).unwrap(), &permuted).unwrap();
        assert_eq!(fused.mask(), fused_p.mask());
        for (a, b) in fused.data().iter().zip(fused_p.data()) {
            assert!(
                (a - b).abs() < 1e-6,
                "instance {instance}: permutation moved a value by {}",
                (a - b).abs()
            );
        }

        let copies: Vec<FeatureMap> = (0..n).map(|_| frames[0].clone()).collect();
        let fixed =
            attention_fuse(&attention_matrix(&copies, &copies).unwrap(), &copies).unwrap();
        assert_eq!(fixed.mask(), frames[0].mask());
        for (a, b) in fixed.data().iter().zip(frames[0].data()) {
            assert!(
                (a - b).abs() < 1e-6,
                "instance {instance}: identical frames fused away from their value"
            );
        }
    }
    pass(&format!(
        "fusion invariants: row sums, permutation invariance and the identical-frame fixed point all within 1e-6 over {instances} random instances (32 px, up to 8 frames)"
    ));
}

// ---------------------------------------------------------------------------
// 4. Correlation properties, against an independent brute-force oracle.

/// Deliberately naive reference: for every displacement, walk the full
/// overlap, collect the mutually valid pixels, and normalize over exactly
/// that set.
fn naive_ncc(satellite: &FeatureMap, query: &FeatureMap, radius: i32) -> Vec<(i32, i32, Option<f64>)> {
    let (h, w, c) = (
        satellite.height() as i32,
        satellite.width() as i32,
        satellite.channels(),
    );
    let mut out = Vec::new();
    for m in -radius..=radius {
        for n in -radius..=radius {
            let mut dot = 0.0f64;
            let mut ss = 0.0f64;
            let mut qq = 0.0f64;
            let mut any = false;
            for y in 0..h {
                for x in 0..w {
                    let sy = y + m;
                    let sx = x + n;
                    if sy < 0 || sy >= h || sx < 0 || sx >= w {
                        continue;
                    }
                    if !satellite.is_valid(sy as usize, sx as usize)
                        || !query.is_valid(y as usize, x as usize)
                    {
                        continue;
                    }
                    any = true;
                    for ch in 0..c {
                        let s = satellite.get(sy as usize, sx as usize, ch) as f64;
                        let q = query.get(y as usize, x as usize, ch) as f64;
                        dot += s * q;
                        ss += s * s;
                        qq += q * q;
                    }
                }
            }
            let score = if any && ss > 0.0 && qq > 0.0 {
                Some(dot / (ss.sqrt() * qq.sqrt()))
            } else {
                None
            };
            out.push((m, n, score));
        }
    }
    out
}

#[test]
fn acceptance_4_correlation_properties_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    let radius = 8usize;

    // Brute-force agreement on partially masked random maps.
    let satellite = random_map(&mut rng, 64, 1, 0.15);
    let query = random_map(&mut rng, 64, 1, 0.15);
    let field = ncc_field(&satellite, &query, radius).unwrap();
    let mut worst_dev = 0.0f64;
    for (m, n, expected) in naive_ncc(&satellite, &query, radius as i32) {
        match expected {
            Some(score) => {
                assert!(field.is_cell_valid(m, n), "cell ({m}, {n}) dropped");
                let dev = (field.score(m, n) - score).abs();
                assert!(dev < 1e-5, "cell ({m}, {n}) deviates by {dev}");
                worst_dev = worst_dev.max(dev);
                assert!(
                    (-1.0 - 1e-6..=1.0 + 1e-6).contains(&field.score(m, n)),
                    "cell ({m}, {n}) out of range: {}",
                    field.score(m, n)
                );
            }
            None => assert!(!field.is_cell_valid(m, n), "cell ({m}, {n}) should be invalid"),
        }
    }

    // Self-similarity peaks at the origin with score one.
    let dense = random_map(&mut rng, 64, 1, 0.0);
    let selfsim = ncc_field(&dense, &dense, radius).unwrap();
    assert!((selfsim.score(0, 0) - 1.0).abs() < 1e-6);

    // Integer-shift equivariance over the whole search square.
    for a in -(radius as i32)..=radius as i32 {
        for b in -(radius as i32)..=radius as i32 {
            let shifted = shifted_view(&dense, -a, -b).unwrap();
            let f = ncc_field(&shifted, &dense, radius).unwrap();
            let (m, n, score) = best_displacement(&f).unwrap();
            assert_eq!((m, n), (a, b), "shift ({a}, {b}) recovered as ({m}, {n})");
            assert!((score - 1.0).abs() < 1e-6, "peak score {score} at ({a}, {b})");
        }
    }
    pass(&format!(
        "correlation: bounded scores, unit self-similarity at the origin, every shift up to |8| recovered exactly, and max deviation {worst_dev:.2e} (< 1e-5) from the brute-force oracle at 64 px"
    ));
}

// ---------------------------------------------------------------------------
// 5. Uncertainty weighting: argmax invariance and exact division.

#[test]
fn acceptance_5_uncertainty_weighting_behaves() {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let radius = 4usize;
    let cells = (2 * radius + 1) * (2 * radius + 1);
    let fields = 1000;
    for round in 0..fields {
        let scores: Vec<f64> = (0..cells).map(|_| rng.random_range(-1.0..1.0)).collect();
        let valid: Vec<bool> = (0..cells).map(|_| rng.random_range(0.0..1.0) > 0.1).collect();
        if !valid.iter().any(|&v| v) {
            continue;
        }
        let base = SimilarityField::from_parts(radius, 0.2, scores.clone(), valid.clone()).unwrap();

        let uniform = UncertaintyField::uniform(radius, rng.random_range(0.01..1.0)).unwrap();
        let weighted = weighted_similarity(&base, &uniform).unwrap();
        let raw_best = best_displacement(&base).unwrap();
        let uni_best = best_displacement(&weighted).unwrap();
        assert_eq!(
            (raw_best.0, raw_best.1),
            (uni_best.0, uni_best.1),
            "round {round}: uniform uncertainty moved the argmax"
        );

        let floored: Vec<f64> = (0..cells).map(|_| rng.random_range(0.01..1.0)).collect();
        let unc = UncertaintyField::from_values(radius, floored).unwrap();
        let weighted = weighted_similarity(&base, &unc).unwrap();
        for m in -(radius as i32)..=radius as i32 {
            for n in -(radius as i32)..=radius as i32 {
                if base.is_cell_valid(m, n) {
                    assert_eq!(
                        weighted.score(m, n),
                        base.score(m, n) / unc.value(m, n),
                        "round {round}: weighting is not an exact division at ({m}, {n})"
                    );
                } else {
                    assert!(!weighted.is_cell_valid(m, n));
                }
            }
        }
    }
    pass(&format!(
        "uncertainty: uniform maps never move the argmax and weighted scores equal score/uncertainty to machine precision over {fields} random fields"
    ));
}

// ---------------------------------------------------------------------------
// 6. Loss value and analytic gradients.

#[test]
fn acceptance_6_loss_and_gradients_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(161803);

    let mut worst_ln2 = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(0.0..2.0);
        let dev = (triplet_loss(d, d, 10.0) - std::f64::consts::LN_2).abs();
        worst_ln2 = worst_ln2.max(dev);
        assert!(dev < 1e-12, "equal distances gave loss off ln 2 by {dev}");
    }

    let alpha = 10.0;
    let h = 1e-5;
    let samples = 1000;
    let mut worst_rel = 0.0f64;
    for i in 0..samples {
        // Sweep the pos-neg gap so alpha * gap reaches +-50.
        let gap = rng.random_range(-5.0..5.0);
        let base = rng.random_range(0.5..1.5);
        let (pos, neg) = (base + gap / 2.0, base - gap / 2.0);

        let (gp, gn) = triplet_loss_grad(pos, neg, alpha);
        let fd_p = (triplet_loss(pos + h, neg, alpha) - triplet_loss(pos - h, neg, alpha)) / (2.0 * h);
        let fd_n = (triplet_loss(pos, neg + h, alpha) - triplet_loss(pos, neg - h, alpha)) / (2.0 * h);
        for (analytic, numeric) in [(gp, fd_p), (gn, fd_n)] {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-300);
            assert!(
                rel < 1e-6,
                "sample {i}: gradient {analytic} vs central difference {numeric} (rel {rel}) at gap {gap}"
            );
            worst_rel = worst_rel.max(rel);
        }
    }

    // Same agreement for the batch objective, entry by entry.
    let b = 5;
    let values: Vec<f64> = (0..b * b).map(|_| rng.random_range(0.1..2.0)).collect();
    let matrix = DistanceMatrix::from_values(b, values.clone()).unwrap();
    let grad = batch_loss_grad(&matrix, alpha).unwrap();
    for i in 0..b {
        for j in 0..b {
            let mut plus = values.clone();
            let mut minus = values.clone();
            plus[i * b + j] += h;
            minus[i * b + j] -= h;
            let fd = (batch_loss(&DistanceMatrix::from_values(b, plus).unwrap(), alpha).unwrap()
                - batch_loss(&DistanceMatrix::from_values(b, minus).unwrap(), alpha).unwrap())
                / (2.0 * h);
            let analytic = grad.get(i, j);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-300);
            assert!(rel < 1e-6, "batch gradient ({i}, {j}): {analytic} vs {fd}");
        }
    }
    pass(&format!(
        "loss: equal distances give ln 2 within {worst_ln2:.2e} (< 1e-12); analytic gradients match central differences with worst relative error {worst_rel:.2e} (< 1e-6) over {samples} samples spanning |alpha * gap| up to 50"
    ));
}

// ---------------------------------------------------------------------------
// 7. End-to-end retrieval on a 10 x 10 database.

const CAMERA_HEIGHT: f64 = 1.65;
const CELL_M: f64 = 1.0;
const CANVAS_PX: usize = 32;
const GRID_PITCH_M: f64 = 10.0;
const SUCCESS_RADIUS_M: f64 = 10.0;

fn warp_query_frames(
    scene: &Scene,
    anchor: (f64, f64),
    heading: f64,
    n_frames: usize,
    intr: &CameraIntrinsics,
    canvas: &CanvasSpec,
) -> Vec<FeatureMap> {
    let local = make_trajectory(n_frames, 4.0, heading).unwrap();
    local
        .poses
        .iter()
        .map(|pose| {
            let c = pose.camera_center();
            let global = RigidPose::from_camera(
                Vector3::new(c.x + anchor.0, c.y + anchor.1, c.z),
                heading,
                0.0,
                pose.timestamp_index,
            );
            let ground = render_ground(scene, intr, &global, CAMERA_HEIGHT).unwrap();
            warp_to_overhead(&ground, intr, pose, canvas, Interpolation::Bilinear).unwrap()
        })
        .collect()
}

fn fuse(frames: &[FeatureMap]) -> FeatureMap {
    attention_fuse(&attention_matrix(frames, frames).unwrap(), frames).unwrap()
}

fn add_noise(frame: &FeatureMap, sigma: f64, rng: &mut ChaCha8Rng) -> FeatureMap {
    let normal = Normal::new(0.0, sigma).unwrap();
    let (h, w, c) = (frame.height(), frame.width(), frame.channels());
    let mut data = frame.data().to_vec();
    for p in 0..h * w {
        if frame.mask()[p] {
            for ch in 0..c {
                data[p * c + ch] += normal.sample(rng) as f32;
            }
        }
    }
    FeatureMap::from_parts(h, w, c, data, frame.mask().to_vec()).unwrap()
}

#[test]
fn acceptance_7_sequences_localize_on_the_grid() {
    let start = Instant::now();
    let scene = Scene::noise_octaves(99, 150.0, 1024, 6).unwrap();
    let canvas = CanvasSpec::new(CANVAS_PX, CELL_M, CAMERA_HEIGHT).unwrap();
    let intr = CameraIntrinsics::from_hfov(1.4, 96, 72).unwrap();
    let radius = search_radius(CELL_M).unwrap();

    let g = 10usize;
    let mut entries = Vec::new();
    let mut centers = Vec::new();
    for i in 0..g {
        for j in 0..g {
            let x = (i as f64 - 4.5) * GRID_PITCH_M;
            let y = (j as f64 - 4.5) * GRID_PITCH_M;
            entries.push(DatabaseEntry {
                id: format!("cell_{:03}", i * g + j),
                features: render_satellite(&scene, &canvas, (x, y)),
            });
            centers.push((x, y));
        }
    }

    let n_queries = 25usize;
    let queries: Vec<((f64, f64), f64, Vec<FeatureMap>)> = (0..n_queries)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + k as u64);
            let (cx, cy) = centers[k * 4];
            let anchor = (
                cx + rng.random_range(-3.5..3.5),
                cy + rng.random_range(-3.5..3.5),
            );
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            (anchor, heading, warp_query_frames(&scene, anchor, heading, 4, &intr, &canvas))
        })
        .collect();

    // Noiseless: every query must land within the success radius at rank 1,
    // and the displacement text must place it within one cell on average.
    let mut displacement_errors = Vec::new();
    for (anchor, _, frames) in &queries {
        let fused = fuse(frames);
        let results = scan_database(&entries, &fused, None, radius).unwrap();
        let top = &results[0];
        let idx = entries.iter().position(|e| e.id == top.id).unwrap();
        let (tx, ty) = centers[idx];
        let dist = ((anchor.0 - tx).powi(2) + (anchor.1 - ty).powi(2)).sqrt();
        assert!(
            dist <= SUCCESS_RADIUS_M,
            "query at {anchor:?} retrieved {} at {dist:.2} m",
            top.id
        );
        let (m, n) = top.report.displacement;
        let est = (tx + n as f64 * CELL_M, ty + m as f64 * CELL_M);
        displacement_errors
            .push(((est.0 - anchor.0).powi(2) + (est.1 - anchor.1).powi(2)).sqrt());
    }
    let mean_err = displacement_errors.iter().sum::<f64>() / displacement_errors.len() as f64;
    assert!(mean_err < CELL_M, "mean displacement error {mean_err} m");

    // Noisy: fusing four frames must do at least as well as the last frame
    // alone, with the shared frame seeing identical noise in both arms.
    let sigma = 0.1;
    let mut hits4 = 0usize;
    let mut hits1 = 0usize;
    for (k, (anchor, _, frames)) in queries.iter().enumerate() {
        let noisy: Vec<FeatureMap> = frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let mut rng = ChaCha8Rng::seed_from_u64(77_000 + (k * 16 + t) as u64);
                add_noise(f, sigma, &mut rng)
            })
            .collect();
        for (arm, hits) in [(&noisy[..], &mut hits4), (&noisy[3..], &mut hits1)] {
            let fused = fuse(arm);
            let results = scan_database(&entries, &fused, None, radius).unwrap();
            let idx = entries.iter().position(|e| e.id == results[0].id).unwrap();
            let (tx, ty) = centers[idx];
            let dist = ((anchor.0 - tx).powi(2) + (anchor.1 - ty).powi(2)).sqrt();
            if dist <= SUCCESS_RADIUS_M {
                *hits += 1;
            }
        }
    }
    assert!(
        hits4 >= hits1,
        "four-frame recall {hits4}/{n_queries} fell below single-frame {hits1}/{n_queries}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    pass(&format!(
        "end-to-end: 25/25 noiseless queries within {SUCCESS_RADIUS_M} m at rank 1 on a 10x10 grid, mean displacement error {mean_err:.2} m (< {CELL_M}); with noise, 4 frames hit {hits4}/{n_queries} vs {hits1}/{n_queries} for 1 frame; {elapsed:.2?} (< 2 min)"
    ));
}

// ---------------------------------------------------------------------------
// 8. The command-line pipeline is byte-identical across runs and threads.

fn cvl(threads: &str) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cvl"));
    cmd.env("CVL_THREADS", threads);
    cmd
}

fn run(cmd: &mut Command) {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(root: &Path, threads: &str) {
    let config = root.join("small.cfg");
    std::fs::write(
        &config,
        "canvas.size_px = 32\ncanvas.meters_per_pixel = 1.0\nground.width = 96\nground.height = 48\nscene.octaves = 6\n",
    )
    .unwrap();
    let data = root.join("data");
    run(cvl(threads).args([
        "synth",
        "--out-dir",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "11",
        "--grid",
        "3",
        "--grid-pitch",
        "10",
        "--num-queries",
        "2",
        "--frames",
        "3",
        "--spacing",
        "4",
    ]));
    for q in ["q_000", "q_001"] {
        let qdir = data.join("queries").join(q);
        let warped = root.join(format!("warp_{q}"));
        let mut cmd = cvl(threads);
        cmd.args([
            "project",
            "--intrinsics",
            data.join("intrinsics.txt").to_str().unwrap(),
            "--poses",
            qdir.join("poses.csv").to_str().unwrap(),
            "--out-dir",
            warped.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ]);
        for t in 0..3 {
            cmd.arg(qdir.join(format!("frame_{t:02}.cvlt")));
        }
        run(&mut cmd);
        let mut cmd = cvl(threads);
        cmd.args([
            "fuse",
            "--out",
            root.join(format!("{q}.cvlt")).to_str().unwrap(),
            "--identity",
        ]);
        for t in 0..3 {
            cmd.arg(warped.join(format!("frame_{t:02}.cvlt")));
        }
        run(&mut cmd);
    }
    run(cvl(threads).args([
        "retrieve",
        "--manifest",
        data.join("db/manifest.csv").to_str().unwrap(),
        "--out",
        root.join("rankings.csv").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--no-uncertainty",
        "--query",
        &format!("q_000={}", root.join("q_000.cvlt").display()),
        "--query",
        &format!("q_001={}", root.join("q_001.cvlt").display()),
    ]));
    run(cvl(threads).args([
        "eval",
        "--rankings",
        root.join("rankings.csv").to_str().unwrap(),
        "--manifest",
        data.join("db/manifest.csv").to_str().unwrap(),
        "--query-positions",
        data.join("query_positions.csv").to_str().unwrap(),
        "--out",
        root.join("metrics.csv").to_str().unwrap(),
        "--flags-out",
        root.join("flags.csv").to_str().unwrap(),
    ]));
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, base, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_str().unwrap().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn acceptance_8_cli_pipeline_is_byte_identical() {
    let dirs = tempfile::tempdir().unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "4"), ("d", "4")];
    let mut snapshots = Vec::new();
    for (name, threads) in runs {
        let root = dirs.path().join(name);
        std::fs::create_dir_all(&root).unwrap();
        run_pipeline(&root, threads);
        snapshots.push(snapshot(&root));
    }
    let reference = &snapshots[0];
    assert!(reference.len() > 30, "pipeline produced only {} files", reference.len());
    for (i, other) in snapshots.iter().enumerate().skip(1) {
        let keys: Vec<_> = reference.keys().collect();
        let other_keys: Vec<_> = other.keys().collect();
        assert_eq!(keys, other_keys, "run {} produced a different file set", runs[i].0);
        for (file, bytes) in reference {
            assert_eq!(
                bytes, &other[file],
                "run {} (threads {}) differs in {file}",
                runs[i].0, runs[i].1
            );
        }
    }
    pass(&format!(
        "determinism: synth, project, fuse, retrieve and eval produced {} byte-identical files across two runs each at 1 and 4 threads",
        reference.len()
    ));
}
