use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::{Matrix3, Vector3};

use cvl_core::{
    read_feature_map, read_pgm, warp_to_overhead, write_feature_map, write_pgm,
    CameraIntrinsics, Interpolation, RigidPose,
};

use crate::commands::{content_lines, ensure_dir, read_text};
use crate::config::Config;
use crate::error::{usage, CliError, CliResult};

#[derive(Args)]
pub struct ProjectArgs {
    /// Camera intrinsics file (key=value: fx, fy, cx, cy, width, height).
    #[arg(long, value_name = "FILE")]
    pub intrinsics: PathBuf,

    /// Pose table, one world-to-camera pose per frame, same order as FRAMES.
    #[arg(long, value_name = "FILE")]
    pub poses: PathBuf,

    /// Directory for the warped overhead tensors.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,

    /// Optional key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Overhead canvas side length in pixels; overrides the config file.
    #[arg(long)]
    pub size_px: Option<usize>,

    /// Ground resolution of the canvas; overrides the config file.
    #[arg(long)]
    pub meters_per_pixel: Option<f64>,

    /// Camera height above the ground plane; overrides the config file.
    #[arg(long)]
    pub camera_height: Option<f64>,

    /// Treat FRAMES as PGM images instead of feature tensors and also
    /// write a PGM preview of each warped result.
    #[arg(long)]
    pub image_level: bool,

    /// Ground-level frames, oldest first.
    #[arg(value_name = "FRAME", required = true)]
    pub frames: Vec<PathBuf>,
}

pub fn run(args: ProjectArgs) -> CliResult<()> {
    let mut config = Config::load(args.config.as_deref())?;
    if let Some(s) = args.size_px {
        config.canvas_size_px = s;
    }
    if let Some(m) = args.meters_per_pixel {
        config.meters_per_pixel = m;
    }
    if let Some(h) = args.camera_height {
        config.camera_height_m = h;
    }
    let canvas = config.canvas()?;
    let intr = read_intrinsics(&args.intrinsics)?;
    let poses = read_poses(&args.poses)?;
    if poses.len() != args.frames.len() {
        return Err(usage(format!(
            "{} poses for {} frames; the pose table must match FRAMES one to one",
            poses.len(),
            args.frames.len()
        )));
    }
    let mut stems = HashSet::new();
    for frame in &args.frames {
        if !stems.insert(stem(frame)?) {
            return Err(usage(format!(
                "duplicate frame name '{}'; outputs would overwrite each other",
                stem(frame)?
            )));
        }
    }
    ensure_dir(&args.out_dir)?;

    for (frame_path, pose) in args.frames.iter().zip(&poses) {
        let frame = if args.image_level {
            read_pgm(frame_path)?
        } else {
            read_feature_map(frame_path)?
        };
        let warped = warp_to_overhead(&frame, &intr, pose, &canvas, Interpolation::Bilinear)?;
        let name = stem(frame_path)?;
        write_feature_map(&args.out_dir.join(format!("{name}.cvlt")), &warped)?;
        if args.image_level {
            write_pgm(&args.out_dir.join(format!("{name}.pgm")), &warped)?;
        }
    }
    println!(
        "projected {} frames to {}",
        args.frames.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn stem(path: &Path) -> CliResult<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| usage(format!("cannot derive an output name from '{}'", path.display())))
}

/// Parse a key=value intrinsics file. All six keys are required.
pub fn read_intrinsics(path: &Path) -> CliResult<CameraIntrinsics> {
    let text = read_text(path)?;
    let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
    let (mut width, mut height) = (None, None);
    for (number, line) in content_lines(&text) {
        let (key, value) = line.split_once('=').ok_or_else(|| {
            format_err(path, format!("line {number}: expected key=value"))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = || format_err(path, format!("line {number}: invalid value '{value}'"));
        match key {
            "fx" => fx = Some(value.parse::<f64>().map_err(|_| bad())?),
            "fy" => fy = Some(value.parse::<f64>().map_err(|_| bad())?),
            "cx" => cx = Some(value.parse::<f64>().map_err(|_| bad())?),
            "cy" => cy = Some(value.parse::<f64>().map_err(|_| bad())?),
            "width" => width = Some(value.parse::<usize>().map_err(|_| bad())?),
            "height" => height = Some(value.parse::<usize>().map_err(|_| bad())?),
            other => {
                return Err(format_err(path, format!("line {number}: unknown key '{other}'")))
            }
        }
    }
    match (fx, fy, cx, cy, width, height) {
        (Some(fx), Some(fy), Some(cx), Some(cy), Some(w), Some(h)) => {
            Ok(CameraIntrinsics::new(fx, fy, cx, cy, w, h)?)
        }
        _ => Err(format_err(path, "missing one of fx, fy, cx, cy, width, height")),
    }
}

/// Parse a pose table: index plus a row-major rotation and a translation.
pub fn read_poses(path: &Path) -> CliResult<Vec<RigidPose>> {
    let text = read_text(path)?;
    let mut poses = Vec::new();
    for (number, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 13 {
            return Err(format_err(
                path,
                format!("line {number}: expected 13 fields, found {}", fields.len()),
            ));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| format_err(path, format!("line {number}: bad index '{}'", fields[0])))?;
        let mut v = [0.0f64; 12];
        for (slot, field) in v.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| {
                format_err(path, format!("line {number}: bad number '{field}'"))
            })?;
        }
        let rotation = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        let translation = Vector3::new(v[9], v[10], v[11]);
        poses.push(RigidPose::new(rotation, translation, index)?);
    }
    if poses.is_empty() {
        return Err(format_err(path, "no poses found"));
    }
    Ok(poses)
}

fn format_err(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::Core(cvl_core::Error::Format {
        path: path.into(),
        reason: reason.into(),
    })
}
