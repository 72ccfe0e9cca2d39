use std::fs;
use std::path::Path;
use std::str::FromStr;

use cvl_core::{CanvasSpec, CameraIntrinsics};

use crate::error::{usage, CliError, CliResult};

/// How a sequence of warped frames is collapsed into one overhead map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Photo-consistency attention with identity query/key/value stacks.
    Identity,
    /// Plain visibility-weighted mean.
    Mean,
}

impl FromStr for FusionMode {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "identity" => Ok(FusionMode::Identity),
            "mean" => Ok(FusionMode::Mean),
            other => Err(usage(format!(
                "fusion.mode must be 'identity' or 'mean', got '{other}'"
            ))),
        }
    }
}

/// Tool configuration, loadable from a plain `key = value` file.
///
/// Lines starting with `#` are comments. Unknown keys are rejected so a
/// typo cannot silently fall back to a default. Command-line flags override
/// whatever the file says.
#[derive(Debug, Clone)]
pub struct Config {
    pub canvas_size_px: usize,
    pub meters_per_pixel: f64,
    pub camera_height_m: f64,
    /// Displacement search radius in cells; `None` derives it from the
    /// cell size so the scan covers five meters in every direction.
    pub match_radius_px: Option<usize>,
    pub fusion_mode: FusionMode,
    pub threshold_m: f64,
    pub seed: u64,
    pub ground_width: usize,
    pub ground_height: usize,
    pub ground_hfov_rad: f64,
    pub scene_extent_m: Option<f64>,
    pub scene_texture_px: Option<usize>,
    pub scene_octaves: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            canvas_size_px: 512,
            meters_per_pixel: 0.2,
            camera_height_m: 1.65,
            match_radius_px: None,
            fusion_mode: FusionMode::Identity,
            threshold_m: 10.0,
            seed: 0,
            ground_width: 1024,
            ground_height: 256,
            ground_hfov_rad: 1.4,
            scene_extent_m: None,
            scene_texture_px: None,
            scene_octaves: 3,
        }
    }
}

impl Config {
    /// Defaults, optionally overlaid with a config file.
    pub fn load(path: Option<&Path>) -> CliResult<Config> {
        let mut config = Config::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Core(cvl_core::Error::Io { path: path.into(), source: e }))?;
            config.apply_text(&text)?;
        }
        Ok(config)
    }

    fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key=value", lineno + 1)))?;
            self.apply(key.trim(), value.trim())
                .map_err(|e| usage(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "canvas.size_px" => self.canvas_size_px = parse(key, value)?,
            "canvas.meters_per_pixel" => self.meters_per_pixel = parse(key, value)?,
            "canvas.camera_height" => self.camera_height_m = parse(key, value)?,
            "match.radius_px" => self.match_radius_px = Some(parse(key, value)?),
            "fusion.mode" => self.fusion_mode = value.parse()?,
            "eval.threshold_m" => self.threshold_m = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ground.width" => self.ground_width = parse(key, value)?,
            "ground.height" => self.ground_height = parse(key, value)?,
            "ground.hfov_rad" => self.ground_hfov_rad = parse(key, value)?,
            "scene.extent_m" => self.scene_extent_m = Some(parse(key, value)?),
            "scene.texture_px" => self.scene_texture_px = Some(parse(key, value)?),
            "scene.octaves" => self.scene_octaves = parse(key, value)?,
            other => return Err(usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Overhead canvas described by this configuration.
    pub fn canvas(&self) -> CliResult<CanvasSpec> {
        CanvasSpec::new(self.canvas_size_px, self.meters_per_pixel, self.camera_height_m)
            .map_err(CliError::Core)
    }

    /// Forward camera described by this configuration.
    pub fn ground_camera(&self) -> CliResult<CameraIntrinsics> {
        CameraIntrinsics::from_hfov(self.ground_hfov_rad, self.ground_width, self.ground_height)
            .map_err(CliError::Core)
    }

    /// Search radius in cells for the given cell size.
    pub fn search_radius(&self, meters_per_cell: f64) -> CliResult<usize> {
        match self.match_radius_px {
            Some(r) => Ok(r),
            None => Ok(cvl_core::search_radius(meters_per_cell)?),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| usage(format!("invalid value '{value}' for {key}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_describe_the_standard_setup() {
        let config = Config::default();
        assert_eq!(config.canvas_size_px, 512);
        assert!((config.meters_per_pixel - 0.2).abs() < 1e-12);
        assert_eq!(config.fusion_mode, FusionMode::Identity);
        assert_eq!(config.search_radius(0.2).unwrap(), 25);
    }

    #[test]
    fn file_overrides_defaults_and_rejects_junk() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# comment\ncanvas.size_px = 64\nfusion.mode = mean\nmatch.radius_px = 4").unwrap();
        let config = Config::load(Some(file.path())).unwrap();
        assert_eq!(config.canvas_size_px, 64);
        assert_eq!(config.fusion_mode, FusionMode::Mean);
        assert_eq!(config.search_radius(0.2).unwrap(), 4);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "canvas.sizepx = 64").unwrap();
        let err = Config::load(Some(bad.path())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
