//! Pinhole projection and ground-to-overhead warping.
//!
//! # Coordinate systems
//!
//! **World frame** (metric): x points south, y points east, z points up. The
//! origin sits at the reference camera location, so the ground plane is
//! `z = -camera_height`.
//!
//! **Ground camera frame**: x right, y down, z forward along the optical
//! axis. A [`RigidPose`] maps world points into this frame, `q = R p + t`.
//! Ground image coordinates follow the usual convention: `u` is the column
//! (right), `v` the row (down), both measured at pixel centres.
//!
//! **Overhead canvas**: a square `S x S` grid indexed `(u, v)` where `u` is
//! the row and `v` the column. The canvas models a parallel (orthographic)
//! overhead view: each pixel spans [`CanvasSpec::meters_per_pixel`] metres,
//! the centre pixel sits over the world origin, rows advance east and
//! columns advance south:
//!
//! ```text
//! x = meters_per_pixel * (v - center_v)      (south)
//! y = meters_per_pixel * (u - center_u)      (east)
//! z = -camera_height                         (ground plane)
//! ```
//!
//! [`warp_to_overhead`] combines the two: every canvas pixel is dropped onto
//! the ground plane, projected into the ground camera, and sampled there.
//! Content the camera never saw (behind it, outside its frustum) stays
//! masked rather than being filled with zeros.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

/// Points closer to the principal plane than this count as "not in front".
pub const MIN_DEPTH: f64 = 1e-6;

/// Orthonormality tolerance for rotation matrices.
const ROTATION_TOL: f64 = 1e-9;

/// Pinhole intrinsics of the ground camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid("focal lengths must be finite and positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be nonzero"));
        }
        if !(cx.is_finite() && cy.is_finite())
            || cx < 0.0
            || cx >= width as f64
            || cy < 0.0
            || cy >= height as f64
        {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Symmetric intrinsics from a horizontal field of view in radians.
    pub fn from_hfov(hfov_rad: f64, width: usize, height: usize) -> Result<Self> {
        if !(hfov_rad.is_finite() && hfov_rad > 0.0 && hfov_rad < std::f64::consts::PI) {
            return Err(Error::invalid("horizontal field of view must be in (0, pi)"));
        }
        let fx = width as f64 / 2.0 / (hfov_rad / 2.0).tan();
        Self::new(fx, fx, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }
}

/// World-to-camera rigid transform at one timestamp, `q = R p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Position of this frame in its capture sequence, starting at 1.
    pub timestamp_index: usize,
}

impl RigidPose {
    /// Validates that `rotation` is a proper rotation (orthonormal, det +1).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, timestamp_index: usize) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ROTATION_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (deviation {dev:.2e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(Error::invalid("rotation determinant must be +1"));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(RigidPose {
            rotation,
            translation,
            timestamp_index,
        })
    }

    /// Pose of a camera standing at `center` (world coordinates).
    ///
    /// `heading_rad` is the direction the optical axis points over the
    /// ground: 0 faces north (-x) and positive angles rotate the axis
    /// mathematically positively about world z (counterclockwise seen from
    /// above), so `pi/2` faces west. `pitch_rad` tilts the axis below the
    /// horizon; `pi/2` looks straight down. The camera keeps zero roll.
    pub fn from_camera(
        center: Vector3<f64>,
        heading_rad: f64,
        pitch_rad: f64,
        timestamp_index: usize,
    ) -> Self {
        let (sh, ch) = heading_rad.sin_cos();
        let (sp, cp) = pitch_rad.sin_cos();
        let forward_flat = heading_forward(heading_rad);
        let x_cam = Vector3::new(-sh, ch, 0.0);
        let y_cam = Vector3::new(sp * ch, sp * sh, -cp);
        let z_cam = cp * forward_flat + sp * Vector3::new(0.0, 0.0, -1.0);
        let rotation = Matrix3::from_rows(&[x_cam.transpose(), y_cam.transpose(), z_cam.transpose()]);
        let translation = -rotation * center;
        RigidPose {
            rotation,
            translation,
            timestamp_index,
        }
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }
}

/// Unit ground-plane vector a heading angle points along.
///
/// Heading 0 is north (-x); positive angles rotate counterclockwise seen
/// from above (about +z), so `pi/2` points west (-y).
pub fn heading_forward(heading_rad: f64) -> Vector3<f64> {
    let (sh, ch) = heading_rad.sin_cos();
    Vector3::new(-ch, -sh, 0.0)
}

/// Geometry of the overhead canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasSpec {
    /// Side length in pixels (the canvas is square).
    pub size_px: usize,
    /// Metric ground resolution of one pixel.
    pub meters_per_pixel: f64,
    /// Canvas centre `(u0, v0)` in pixels; projects onto the world origin.
    pub center_u: f64,
    pub center_v: f64,
    /// Height of the reference camera above the ground plane, metres.
    pub camera_height: f64,
}

impl CanvasSpec {
    /// Canvas centred at `size / 2`.
    pub fn new(size_px: usize, meters_per_pixel: f64, camera_height: f64) -> Result<Self> {
        if size_px == 0 {
            return Err(Error::invalid("canvas size must be nonzero"));
        }
        if !(meters_per_pixel.is_finite() && meters_per_pixel > 0.0) {
            return Err(Error::invalid("meters_per_pixel must be finite and positive"));
        }
        if !(camera_height.is_finite() && camera_height > 0.0) {
            return Err(Error::invalid("camera_height must be finite and positive"));
        }
        let c = size_px as f64 / 2.0;
        Ok(CanvasSpec {
            size_px,
            meters_per_pixel,
            center_u: c,
            center_v: c,
            camera_height,
        })
    }

    /// Overrides the canvas centre.
    pub fn with_center(mut self, center_u: f64, center_v: f64) -> Self {
        self.center_u = center_u;
        self.center_v = center_v;
        self
    }

    /// Metric side length covered by the canvas.
    pub fn coverage_m(&self) -> f64 {
        self.size_px as f64 * self.meters_per_pixel
    }
}

/// How [`warp_to_overhead`] samples the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Mask-aware bilinear sampling (the default everywhere).
    Bilinear,
    /// Nearest-neighbour sampling, kept for debugging warps.
    Nearest,
}

/// Drops an overhead pixel onto the ground plane.
///
/// `u` is the canvas row, `v` the column; fractional coordinates are fine.
pub fn overhead_pixel_to_world(u: f64, v: f64, canvas: &CanvasSpec) -> Vector3<f64> {
    Vector3::new(
        canvas.meters_per_pixel * (v - canvas.center_v),
        canvas.meters_per_pixel * (u - canvas.center_u),
        -canvas.camera_height,
    )
}

/// Inverse of [`overhead_pixel_to_world`]: world point to canvas `(u, v)`.
///
/// Only x and y matter; the point is assumed to lie on the ground plane.
pub fn world_to_overhead_pixel(p: &Vector3<f64>, canvas: &CanvasSpec) -> (f64, f64) {
    (
        canvas.center_u + p.y / canvas.meters_per_pixel,
        canvas.center_v + p.x / canvas.meters_per_pixel,
    )
}

/// Projects a world point into the ground image.
///
/// Returns `(u, v, depth)` with `u` the column and `v` the row. Fails with
/// [`Error::NotInFront`] when the point sits at or behind the principal
/// plane (depth `<=` [`MIN_DEPTH`]); the caller decides whether that is an
/// error or simply "not visible".
pub fn world_to_ground_pixel(
    p: &Vector3<f64>,
    intr: &CameraIntrinsics,
    pose: &RigidPose,
) -> Result<(f64, f64, f64)> {
    let q = pose.rotation * p + pose.translation;
    if q.z <= MIN_DEPTH {
        return Err(Error::NotInFront { depth: q.z });
    }
    let u = intr.fx * q.x / q.z + intr.cx;
    let v = intr.fy * q.y / q.z + intr.cy;
    Ok((u, v, q.z))
}

/// Lifts a ground pixel back to a world point given its depth.
///
/// Exact inverse of [`world_to_ground_pixel`] for `depth > 0`.
pub fn ground_pixel_to_world(
    u: f64,
    v: f64,
    depth: f64,
    intr: &CameraIntrinsics,
    pose: &RigidPose,
) -> Vector3<f64> {
    let q = Vector3::new(
        (u - intr.cx) * depth / intr.fx,
        (v - intr.cy) * depth / intr.fy,
        depth,
    );
    pose.rotation.transpose() * (q - pose.translation)
}

/// Warps a ground-view map onto the overhead canvas.
///
/// Every canvas pixel is mapped through the ground plane into the source
/// image and sampled there. Pixels that land behind the camera, outside the
/// image, or on fully masked neighbourhoods come back masked. Bilinear
/// sampling renormalizes over the valid neighbours so masked pixels never
/// bleed zeros into the output.
pub fn warp_to_overhead(
    source: &FeatureMap,
    intr: &CameraIntrinsics,
    pose: &RigidPose,
    canvas: &CanvasSpec,
    interp: Interpolation,
) -> Result<FeatureMap> {
    if source.width() != intr.width || source.height() != intr.height {
        return Err(Error::dim(format!(
            "source map is {}x{} but intrinsics describe a {}x{} image",
            source.height(),
            source.width(),
            intr.height,
            intr.width
        )));
    }
    let s = canvas.size_px;
    let c = source.channels();
    let mut data = vec![0.0f32; s * s * c];
    let mut mask = vec![false; s * s];

    data.par_chunks_mut(s * c)
        .zip(mask.par_chunks_mut(s))
        .enumerate()
        .for_each(|(u, (row_data, row_mask))| {
            for v in 0..s {
                let p = overhead_pixel_to_world(u as f64, v as f64, canvas);
                let q = pose.rotation * p + pose.translation;
                if q.z <= MIN_DEPTH {
                    continue;
                }
                let gu = intr.fx * q.x / q.z + intr.cx;
                let gv = intr.fy * q.y / q.z + intr.cy;
                if gu < 0.0 || gu > (intr.width - 1) as f64 || gv < 0.0 || gv > (intr.height - 1) as f64
                {
                    continue;
                }
                let out = &mut row_data[v * c..(v + 1) * c];
                if sample_into(source, gu, gv, interp, out) {
                    row_mask[v] = true;
                } else {
                    out.fill(0.0);
                }
            }
        });

    FeatureMap::from_parts(s, s, c, data, mask)
}

/// Warps a whole capture sequence onto one shared canvas.
///
/// All frames are projected into the same world frame, so the poses must be
/// expressed relative to the sequence's reference camera (the one the
/// canvas is anchored at). The outputs are therefore geographically aligned
/// with each other.
pub fn warp_sequence_to_overhead(
    sources: &[FeatureMap],
    intrinsics: &[CameraIntrinsics],
    poses: &[RigidPose],
    canvas: &CanvasSpec,
    interp: Interpolation,
) -> Result<Vec<FeatureMap>> {
    if sources.is_empty() {
        return Err(Error::EmptySequence);
    }
    if sources.len() != poses.len() || sources.len() != intrinsics.len() {
        return Err(Error::dim(format!(
            "{} source maps, {} intrinsics, {} poses",
            sources.len(),
            intrinsics.len(),
            poses.len()
        )));
    }
    sources
        .iter()
        .zip(intrinsics)
        .zip(poses)
        .map(|((src, intr), pose)| warp_to_overhead(src, intr, pose, canvas, interp))
        .collect()
}

/// Samples `source` at fractional `(gu, gv)`; returns false when every
/// contributing neighbour is masked or out of range.
fn sample_into(source: &FeatureMap, gu: f64, gv: f64, interp: Interpolation, out: &mut [f32]) -> bool {
    match interp {
        Interpolation::Nearest => {
            let x = gu.round() as isize;
            let y = gv.round() as isize;
            if x < 0 || y < 0 || x >= source.width() as isize || y >= source.height() as isize {
                return false;
            }
            let (x, y) = (x as usize, y as usize);
            if !source.is_valid(y, x) {
                return false;
            }
            out.copy_from_slice(source.pixel(y, x));
            true
        }
        Interpolation::Bilinear => {
            let x0 = gu.floor();
            let y0 = gv.floor();
            let fx = gu - x0;
            let fy = gv - y0;
            let x0 = x0 as isize;
            let y0 = y0 as isize;
            let mut neighbours = [(0usize, 0usize, 0.0f64); 4];
            let mut count = 0;
            let mut total = 0.0f64;
            for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
                    let w = wx * wy;
                    if w == 0.0 {
                        continue;
                    }
                    let x = x0 + dx;
                    let y = y0 + dy;
                    if x < 0 || y < 0 || x >= source.width() as isize || y >= source.height() as isize {
                        continue;
                    }
                    let (x, y) = (x as usize, y as usize);
                    if !source.is_valid(y, x) {
                        continue;
                    }
                    neighbours[count] = (y, x, w);
                    count += 1;
                    total += w;
                }
            }
            if total < 1e-6 {
                return false;
            }
            for (c, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for &(y, x, w) in &neighbours[..count] {
                    acc += w * source.get(y, x, c) as f64;
                }
                *o = (acc / total) as f32;
            }
            true
        }
    }
}
