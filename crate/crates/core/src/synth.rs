//! Synthetic planar scenes: the geometric oracle for the warp.
//!
//! A [`Scene`] is a flat, textured ground plane. Because the world is
//! exactly planar, both views of it can be rendered in closed form:
//! [`render_satellite`] samples the texture on the overhead grid directly,
//! and [`render_ground`] ray-casts a pinhole camera against the plane. Any
//! correct ground-to-overhead warp must therefore reproduce the satellite
//! render from the ground render, which is what the oracle tests check.
//!
//! Everything here is a pure function of the seed: texture generation uses
//! a counter-based hash (no shared RNG state), so renders are identical
//! across runs, platforms and thread schedules.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{GeoPoint, EARTH_RADIUS_M};
use crate::feature::FeatureMap;
use crate::geometry::{heading_forward, CameraIntrinsics, CanvasSpec, RigidPose, MIN_DEPTH};

/// Default geographic anchor of a scene's world origin.
const DEFAULT_ORIGIN: GeoPoint = GeoPoint {
    lat_deg: 48.0,
    lon_deg: 8.0,
};

/// Number of value-noise octaves in the default texture.
const NOISE_OCTAVES: usize = 3;

/// Lattice cells of the coarsest noise octave across the scene extent.
const NOISE_BASE_CELLS: usize = 6;

/// A square planar world with a reflectance texture in `[0, 1]`.
///
/// The texture spans world `[-extent/2, extent/2]` in both x and y, centred
/// on the world origin; sampling outside clamps to the border. The scene
/// also anchors the world origin to a geographic position so retrieval
/// metrics can speak in latitude/longitude.
#[derive(Debug, Clone)]
pub struct Scene {
    texture: Vec<f32>,
    texture_size: usize,
    extent_m: f64,
    seed: u64,
    origin: GeoPoint,
}

impl Scene {
    /// Deterministic multi-octave value-noise scene.
    ///
    /// This is the default texture: smooth at the metre scale, aperiodic, so
    /// correlation searches have a single sharp optimum. (A checkerboard's
    /// periodic autocorrelation would produce spurious displacement maxima.)
    pub fn noise(seed: u64, extent_m: f64, texture_size: usize) -> Result<Self> {
        Self::noise_octaves(seed, extent_m, texture_size, NOISE_OCTAVES)
    }

    /// Value-noise scene with an explicit octave count.
    ///
    /// More octaves add finer detail: the finest features span roughly
    /// `extent_m / (6 * 2^(octaves-1))`. Coarse textures suit projection
    /// oracles (less sampling blur); fine ones sharpen correlation peaks.
    pub fn noise_octaves(
        seed: u64,
        extent_m: f64,
        texture_size: usize,
        octaves: usize,
    ) -> Result<Self> {
        Self::validate(extent_m, texture_size)?;
        if octaves == 0 || octaves > 16 {
            return Err(Error::invalid("octave count must be in 1..=16"));
        }
        let t = texture_size;
        let mut texture = vec![0.0f32; t * t];
        let amp_total: f64 = (0..octaves).map(|o| 0.5f64.powi(o as i32)).sum();
        texture
            .par_chunks_mut(t)
            .enumerate()
            .for_each(|(row, out)| {
                for (col, texel) in out.iter_mut().enumerate() {
                    let mut v = 0.0f64;
                    for octave in 0..octaves {
                        let cells = (NOISE_BASE_CELLS << octave) as f64;
                        let gy = row as f64 / (t - 1) as f64 * cells;
                        let gx = col as f64 / (t - 1) as f64 * cells;
                        v += 0.5f64.powi(octave as i32) * lattice_noise(seed, octave as u64, gy, gx);
                    }
                    *texel = (v / amp_total) as f32;
                }
            });
        Ok(Scene {
            texture,
            texture_size,
            extent_m,
            seed,
            origin: DEFAULT_ORIGIN,
        })
    }

    /// Checkerboard scene with the given metric cell size.
    ///
    /// Useful for eyeballing warps; avoid it for correlation tests.
    pub fn checkerboard(seed: u64, extent_m: f64, texture_size: usize, cell_m: f64) -> Result<Self> {
        Self::validate(extent_m, texture_size)?;
        if !(cell_m.is_finite() && cell_m > 0.0) {
            return Err(Error::invalid("checkerboard cell size must be positive"));
        }
        let t = texture_size;
        let mut texture = vec![0.0f32; t * t];
        for row in 0..t {
            let y = (row as f64 / (t - 1) as f64 - 0.5) * extent_m;
            for col in 0..t {
                let x = (col as f64 / (t - 1) as f64 - 0.5) * extent_m;
                let parity = (x.div_euclid(cell_m) + y.div_euclid(cell_m)) as i64;
                texture[row * t + col] = parity.rem_euclid(2) as f32;
            }
        }
        Ok(Scene {
            texture,
            texture_size,
            extent_m,
            seed,
            origin: DEFAULT_ORIGIN,
        })
    }

    fn validate(extent_m: f64, texture_size: usize) -> Result<()> {
        if !(extent_m.is_finite() && extent_m > 0.0) {
            return Err(Error::invalid("scene extent must be positive"));
        }
        if texture_size < 2 {
            return Err(Error::invalid("texture needs at least 2x2 texels"));
        }
        Ok(())
    }

    /// Re-anchors the world origin to a different geographic position.
    pub fn with_origin(mut self, origin: GeoPoint) -> Self {
        self.origin = origin;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn extent_m(&self) -> f64 {
        self.extent_m
    }

    pub fn texture_size(&self) -> usize {
        self.texture_size
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    /// Ground reflectance at world `(x, y)`, bilinear, clamped at borders.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let t = self.texture_size;
        let scale = (t - 1) as f64 / self.extent_m;
        let gx = ((x + self.extent_m / 2.0) * scale).clamp(0.0, (t - 1) as f64);
        let gy = ((y + self.extent_m / 2.0) * scale).clamp(0.0, (t - 1) as f64);
        let x0 = gx.floor() as usize;
        let y0 = gy.floor() as usize;
        let x1 = (x0 + 1).min(t - 1);
        let y1 = (y0 + 1).min(t - 1);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let v00 = self.texture[y0 * t + x0] as f64;
        let v01 = self.texture[y0 * t + x1] as f64;
        let v10 = self.texture[y1 * t + x0] as f64;
        let v11 = self.texture[y1 * t + x1] as f64;
        let v = v00 * (1.0 - fx) * (1.0 - fy)
            + v01 * fx * (1.0 - fy)
            + v10 * (1.0 - fx) * fy
            + v11 * fx * fy;
        v as f32
    }

    /// Geographic position of world `(x, y)`: x goes south, y east.
    pub fn world_to_geo(&self, x: f64, y: f64) -> GeoPoint {
        let lat = self.origin.lat_deg - (x / EARTH_RADIUS_M).to_degrees();
        let lon = self.origin.lon_deg
            + (y / (EARTH_RADIUS_M * self.origin.lat_deg.to_radians().cos())).to_degrees();
        GeoPoint {
            lat_deg: lat,
            lon_deg: lon,
        }
    }

    /// Inverse of [`Scene::world_to_geo`].
    pub fn geo_to_world(&self, point: &GeoPoint) -> (f64, f64) {
        let x = -(point.lat_deg - self.origin.lat_deg).to_radians() * EARTH_RADIUS_M;
        let y = (point.lon_deg - self.origin.lon_deg).to_radians()
            * EARTH_RADIUS_M
            * self.origin.lat_deg.to_radians().cos();
        (x, y)
    }
}

/// Renders the parallel overhead view of a scene patch.
///
/// Pixel `(u, v)` samples the texture at
/// `center + (lambda * (v - v0), lambda * (u - u0))`; the mask is fully
/// valid. `center_world` is the `(x, y)` ground position under the canvas
/// centre.
pub fn render_satellite(scene: &Scene, canvas: &CanvasSpec, center_world: (f64, f64)) -> FeatureMap {
    let s = canvas.size_px;
    let mut data = vec![0.0f32; s * s];
    data.par_chunks_mut(s).enumerate().for_each(|(u, row)| {
        let y = center_world.1 + canvas.meters_per_pixel * (u as f64 - canvas.center_u);
        for (v, out) in row.iter_mut().enumerate() {
            let x = center_world.0 + canvas.meters_per_pixel * (v as f64 - canvas.center_v);
            *out = scene.sample(x, y);
        }
    });
    FeatureMap::from_data(s, s, 1, data).expect("satellite render is always well-formed")
}

/// Renders the scene through a pinhole ground camera.
///
/// Each pixel casts a ray against the ground plane `z = -camera_height_m`;
/// rays that run parallel to the plane or away from it (sky) come back
/// masked. The camera centre must sit above the plane.
pub fn render_ground(
    scene: &Scene,
    intr: &CameraIntrinsics,
    pose: &RigidPose,
    camera_height_m: f64,
) -> Result<FeatureMap> {
    if !(camera_height_m.is_finite() && camera_height_m > 0.0) {
        return Err(Error::invalid("camera height must be positive"));
    }
    let center = pose.camera_center();
    let plane_z = -camera_height_m;
    if center.z <= plane_z {
        return Err(Error::invalid(format!(
            "camera centre z = {:.3} is not above the ground plane z = {plane_z:.3}",
            center.z
        )));
    }
    let rot_t = pose.rotation.transpose();
    let (h, w) = (intr.height, intr.width);
    let mut data = vec![0.0f32; h * w];
    let mut mask = vec![false; h * w];
    data.par_chunks_mut(w)
        .zip(mask.par_chunks_mut(w))
        .enumerate()
        .for_each(|(v, (row_data, row_mask))| {
            for u in 0..w {
                let dir_cam = Vector3::new(
                    (u as f64 - intr.cx) / intr.fx,
                    (v as f64 - intr.cy) / intr.fy,
                    1.0,
                );
                let dir = rot_t * dir_cam;
                if dir.z >= 0.0 {
                    continue; // parallel to the plane or pointing skyward
                }
                // Ray parameter equals camera-frame depth because dir_cam.z = 1.
                let t = (plane_z - center.z) / dir.z;
                if t <= MIN_DEPTH {
                    continue;
                }
                let hit = center + t * dir;
                row_data[u] = scene.sample(hit.x, hit.y);
                row_mask[u] = true;
            }
        });
    FeatureMap::from_parts(h, w, 1, data, mask)
}

/// A straight constant-heading capture sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// World-to-camera poses, oldest first; the last sits at the origin.
    pub poses: Vec<RigidPose>,
    pub spacing_m: f64,
    pub heading_rad: f64,
}

/// Straight-line drive ending at the world origin.
///
/// Cameras face along `heading_rad` with zero pitch; earlier frames trail
/// behind the last one, `spacing_m` apart, so frame `i` (1-based timestamp
/// `i + 1`) stands `(n - 1 - i) * spacing_m` metres behind the origin.
pub fn make_trajectory(n_frames: usize, spacing_m: f64, heading_rad: f64) -> Result<Trajectory> {
    if n_frames == 0 {
        return Err(Error::invalid("a trajectory needs at least one frame"));
    }
    if !(spacing_m.is_finite() && spacing_m >= 0.0) {
        return Err(Error::invalid("frame spacing must be non-negative"));
    }
    let forward = heading_forward(heading_rad);
    let poses = (0..n_frames)
        .map(|i| {
            let back = (n_frames - 1 - i) as f64 * spacing_m;
            RigidPose::from_camera(-back * forward, heading_rad, 0.0, i + 1)
        })
        .collect();
    Ok(Trajectory {
        poses,
        spacing_m,
        heading_rad,
    })
}

/// Counter-based hash noise: smooth value noise on an integer lattice.
fn lattice_noise(seed: u64, octave: u64, gy: f64, gx: f64) -> f64 {
    let y0 = gy.floor();
    let x0 = gx.floor();
    let fy = smoothstep(gy - y0);
    let fx = smoothstep(gx - x0);
    let (iy, ix) = (y0 as i64, x0 as i64);
    let v00 = lattice_value(seed, octave, iy, ix);
    let v01 = lattice_value(seed, octave, iy, ix + 1);
    let v10 = lattice_value(seed, octave, iy + 1, ix);
    let v11 = lattice_value(seed, octave, iy + 1, ix + 1);
    v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy
}

fn smoothstep(f: f64) -> f64 {
    f * f * (3.0 - 2.0 * f)
}

/// Uniform value in `[0, 1)` from a lattice coordinate.
fn lattice_value(seed: u64, octave: u64, iy: i64, ix: i64) -> f64 {
    let mut h = seed;
    for v in [octave, iy as u64, ix as u64] {
        h = splitmix64(h ^ v);
    }
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 finalizer; a fixed, platform-independent bit mixer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
