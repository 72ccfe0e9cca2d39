use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvl_core::{
    heading_forward, render_ground, render_satellite, write_feature_map, write_manifest,
    write_positions, ManifestEntry, RigidPose, Scene, SEARCH_HALF_EXTENT_M,
};

use crate::commands::{ensure_dir, write_text};
use crate::config::Config;
use crate::error::{usage, CliResult};

/// Largest query offset from its home tile center, in meters. Kept inside
/// the displacement search span so the true position is always reachable.
const MAX_OFFSET_M: f64 = 3.5;

#[derive(Args)]
pub struct SynthArgs {
    /// Directory to populate with the generated benchmark.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,

    /// Optional key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Scene seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Database tiles per side (the database is a grid x grid lattice).
    #[arg(long, default_value_t = 5)]
    pub grid: usize,

    /// Spacing between neighboring tile centers in meters.
    #[arg(long, default_value_t = 10.0)]
    pub grid_pitch: f64,

    /// Number of query trajectories to generate.
    #[arg(long, default_value_t = 8)]
    pub num_queries: usize,

    /// Frames per query trajectory.
    #[arg(long, default_value_t = 4)]
    pub frames: usize,

    /// Distance between consecutive frames in meters.
    #[arg(long, default_value_t = 5.0)]
    pub spacing: f64,
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    if args.grid == 0 {
        return Err(usage("--grid must be at least 1"));
    }
    if args.num_queries == 0 {
        return Err(usage("--num-queries must be at least 1"));
    }
    let config = Config::load(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(config.seed);
    let canvas = config.canvas()?;
    let intr = config.ground_camera()?;

    let span = (args.grid - 1) as f64 * args.grid_pitch;
    let extent = config
        .scene_extent_m
        .unwrap_or(span + canvas.coverage_m() + 2.0 * SEARCH_HALF_EXTENT_M + 10.0);
    let texture_px = config
        .scene_texture_px
        .unwrap_or_else(|| ((2.0 * extent / config.meters_per_pixel) as usize).clamp(256, 4096));
    let scene = Scene::noise_octaves(seed, extent, texture_px, config.scene_octaves)?;

    let tiles_dir = args.out_dir.join("db").join("tiles");
    ensure_dir(&tiles_dir)?;

    // Database lattice centered on the scene origin, row-major ids.
    let g = args.grid;
    let half = (g - 1) as f64 / 2.0;
    let mut entries = Vec::with_capacity(g * g);
    let mut cell_centers = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let x = (i as f64 - half) * args.grid_pitch;
            let y = (j as f64 - half) * args.grid_pitch;
            let id = format!("cell_{:03}", i * g + j);
            let tile = render_satellite(&scene, &canvas, (x, y));
            write_feature_map(&tiles_dir.join(format!("{id}.cvlt")), &tile)?;
            entries.push(ManifestEntry {
                id,
                path: PathBuf::from(format!("tiles/cell_{:03}.cvlt", i * g + j)),
                position: scene.world_to_geo(x, y),
            });
            cell_centers.push((x, y));
        }
    }
    write_manifest(&args.out_dir.join("db").join("manifest.csv"), &entries)?;

    // Queries: each anchors near some tile center with a deterministic
    // per-query offset and heading, drawn from a stream keyed by (seed, k).
    let mut positions = Vec::with_capacity(args.num_queries);
    for k in 0..args.num_queries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ k as u64);
        let cell = k * cell_centers.len() / args.num_queries;
        let (cx, cy) = cell_centers[cell];
        let ox: f64 = rng.random_range(-MAX_OFFSET_M..MAX_OFFSET_M);
        let oy: f64 = rng.random_range(-MAX_OFFSET_M..MAX_OFFSET_M);
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let anchor = (cx + ox, cy + oy);

        let id = format!("q_{k:03}");
        let query_dir = args.out_dir.join("queries").join(&id);
        ensure_dir(&query_dir)?;

        let forward = heading_forward(heading);
        let local_traj = cvl_core::make_trajectory(args.frames, args.spacing, heading)?;
        for (t, _) in local_traj.poses.iter().enumerate() {
            let back = (args.frames - 1 - t) as f64 * args.spacing;
            let center = Vector3::new(anchor.0, anchor.1, 0.0) - back * forward;
            let global = RigidPose::from_camera(center, heading, 0.0, t + 1);
            let frame = render_ground(&scene, &intr, &global, config.camera_height_m)?;
            write_feature_map(&query_dir.join(format!("frame_{t:02}.cvlt")), &frame)?;
        }
        write_text(&query_dir.join("poses.csv"), &pose_table(&local_traj.poses))?;
        positions.push((id, scene.world_to_geo(anchor.0, anchor.1)));
    }
    write_positions(&args.out_dir.join("query_positions.csv"), &positions)?;
    write_text(&args.out_dir.join("intrinsics.txt"), &intrinsics_table(&intr))?;

    println!(
        "wrote {} tiles and {} queries ({} frames each) under {}",
        entries.len(),
        args.num_queries,
        args.frames,
        args.out_dir.display()
    );
    Ok(())
}

fn pose_table(poses: &[RigidPose]) -> String {
    let mut text = String::from("# index,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n");
    for pose in poses {
        let r = &pose.rotation;
        let t = &pose.translation;
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            pose.timestamp_index,
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z
        )
        .expect("string write");
    }
    text
}

fn intrinsics_table(intr: &cvl_core::CameraIntrinsics) -> String {
    format!(
        "fx={}\nfy={}\ncx={}\ncy={}\nwidth={}\nheight={}\n",
        intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height
    )
}
