//! Miniature end-to-end run: render a world, build a satellite database on
//! a grid, push query sequences through warp, fusion and the database
//! scan, and check the right cell wins with the right displacement.

use cvl_core::fusion::{attention_fuse, attention_matrix, qkv_transform, QkvStacks};
use cvl_core::geometry::{
    warp_to_overhead, CameraIntrinsics, CanvasSpec, Interpolation, RigidPose,
};
use cvl_core::matching::{scan_database, search_radius, DatabaseEntry};
use cvl_core::synth::{make_trajectory, render_ground, render_satellite, Scene};
use cvl_core::{mean_fuse, FeatureMap};

const CAMERA_HEIGHT: f64 = 1.65;
const CELL_M: f64 = 1.0;
const CANVAS_PX: usize = 32;
const GRID_PITCH_M: f64 = 10.0;

fn fuse_query(
    scene: &Scene,
    anchor: (f64, f64),
    heading: f64,
    n_frames: usize,
    intr: &CameraIntrinsics,
    canvas: &CanvasSpec,
    attention: bool,
) -> FeatureMap {
    let local = make_trajectory(n_frames, 4.0, heading).unwrap();
    let frames: Vec<FeatureMap> = local
        .poses
        .iter()
        .map(|pose| {
            let c = pose.camera_center();
            let global = RigidPose::from_camera(
                nalgebra::Vector3::new(c.x + anchor.0, c.y + anchor.1, c.z),
                heading,
                0.0,
                pose.timestamp_index,
            );
            let ground = render_ground(scene, intr, &global, CAMERA_HEIGHT).unwrap();
            warp_to_overhead(&ground, intr, pose, canvas, Interpolation::Bilinear).unwrap()
        })
        .collect();
    if attention {
        let stacks = QkvStacks::identity(1);
        let qkv: Vec<_> = frames
            .iter()
            .map(|f| qkv_transform(f, &stacks).unwrap())
            .collect();
        let queries: Vec<_> = qkv.iter().map(|t| t.0.clone()).collect();
        let keys: Vec<_> = qkv.iter().map(|t| t.1.clone()).collect();
        let values: Vec<_> = qkv.iter().map(|t| t.2.clone()).collect();
        attention_fuse(&attention_matrix(&queries, &keys).unwrap(), &values).unwrap()
    } else {
        mean_fuse(&frames).unwrap()
    }
}

#[test]
fn queries_retrieve_their_own_cell_with_the_right_displacement() {
    let scene = Scene::noise_octaves(99, 90.0, 768, 6).unwrap();
    let canvas = CanvasSpec::new(CANVAS_PX, CELL_M, CAMERA_HEIGHT).unwrap();
    let intr = CameraIntrinsics::from_hfov(1.4, 96, 72).unwrap();
    let radius = search_radius(CELL_M).unwrap();

    let mut entries = Vec::new();
    let mut centers = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let x = (i as f64 - 1.0) * GRID_PITCH_M;
            let y = (j as f64 - 1.0) * GRID_PITCH_M;
            entries.push(DatabaseEntry {
                id: format!("cell_{i}{j}"),
                features: render_satellite(&scene, &canvas, (x, y)),
            });
            centers.push((x, y));
        }
    }

    let cases = [
        (0usize, (2.5f64, -1.5f64), 0.3f64),
        (4, (-3.0, 2.0), 1.9),
        (6, (1.0, 3.5), 4.2),
        (8, (-2.0, -2.5), 5.5),
    ];
    for (cell, offset, heading) in cases {
        let (cx, cy) = centers[cell];
        let anchor = (cx + offset.0, cy + offset.1);
        let fused = fuse_query(&scene, anchor, heading, 3, &intr, &canvas, true);
        let results = scan_database(&entries, &fused, None, radius).unwrap();
        assert_eq!(
            results[0].id, entries[cell].id,
            "query near {:?} retrieved {}",
            anchor, results[0].id
        );
        // Displacement cell (m, n) estimates (east, south) = (offset.1, offset.0).
        let (m, n) = results[0].report.displacement;
        let est = (n as f64 * CELL_M, m as f64 * CELL_M);
        let err = ((est.0 - offset.0).powi(2) + (est.1 - offset.1).powi(2)).sqrt();
        assert!(
            err < CELL_M,
            "cell {cell}: estimated offset {est:?}, true {offset:?}, err {err}"
        );
    }
}

#[test]
fn attention_and_mean_agree_on_identical_content() {
    let scene = Scene::noise_octaves(7, 90.0, 512, 5).unwrap();
    let canvas = CanvasSpec::new(CANVAS_PX, CELL_M, CAMERA_HEIGHT).unwrap();
    let intr = CameraIntrinsics::from_hfov(1.4, 96, 72).unwrap();
    let a = fuse_query(&scene, (1.0, -2.0), 0.8, 3, &intr, &canvas, true);
    let b = fuse_query(&scene, (1.0, -2.0), 0.8, 3, &intr, &canvas, false);
    assert_eq!(a.mask(), b.mask());
    // Both fusions are convex per-pixel combinations of the same frames, so
    // they only differ where the frames themselves disagree (blur), and the
    // attention weights stay near uniform there.
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0f64, f64::max);
    assert!(diff < 0.2, "max deviation {diff}");
}
