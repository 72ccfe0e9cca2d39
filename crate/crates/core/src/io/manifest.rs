//! Database manifests and position tables.
//!
//! A manifest is a comma-separated UTF-8 text file, one satellite entry per
//! line: `id,tensor_path,lat,lon`. Blank lines and `#` comments are
//! allowed; ids must be unique; relative tensor paths are resolved against
//! the manifest's own directory on read and written back verbatim, so a
//! database directory can be moved wholesale.
//!
//! Position tables are the 3-column variant `id,lat,lon`, used for query
//! ground-truth locations.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::GeoPoint;

/// One satellite record: id, tensor location, geographic position.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub position: GeoPoint,
}

fn split_fields<'l>(path: &Path, number: usize, line: &'l str, n: usize) -> Result<Vec<&'l str>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != n {
        return Err(Error::format(
            path,
            format!("line {number}: expected {n} comma-separated fields, got {}", fields.len()),
        ));
    }
    if fields.iter().any(|f| f.is_empty()) {
        return Err(Error::format(path, format!("line {number}: empty field")));
    }
    Ok(fields)
}

fn parse_geo(path: &Path, number: usize, lat: &str, lon: &str) -> Result<GeoPoint> {
    let lat: f64 = lat
        .parse()
        .map_err(|_| Error::format(path, format!("line {number}: bad latitude {lat:?}")))?;
    let lon: f64 = lon
        .parse()
        .map_err(|_| Error::format(path, format!("line {number}: bad longitude {lon:?}")))?;
    GeoPoint::new(lat, lon).map_err(|e| Error::format(path, format!("line {number}: {e}")))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

/// Reads a manifest, resolving relative tensor paths against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (number, line) in content_lines(&text) {
        let fields = split_fields(path, number, line, 4)?;
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::format(
                path,
                format!("line {number}: duplicate id {:?}", fields[0]),
            ));
        }
        let tensor = Path::new(fields[1]);
        let tensor = if tensor.is_absolute() {
            tensor.to_path_buf()
        } else {
            base.join(tensor)
        };
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            path: tensor,
            position: parse_geo(path, number, fields[2], fields[3])?,
        });
    }
    if entries.is_empty() {
        return Err(Error::format(path, "manifest lists no entries"));
    }
    Ok(entries)
}

/// Writes a manifest; paths are emitted exactly as given.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::from("# id,path,lat,lon\n");
    for e in entries {
        writeln!(
            text,
            "{},{},{},{}",
            e.id,
            e.path.display(),
            e.position.lat_deg,
            e.position.lon_deg
        )
        .expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads an `id,lat,lon` position table.
pub fn read_positions(path: &Path) -> Result<Vec<(String, GeoPoint)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (number, line) in content_lines(&text) {
        let fields = split_fields(path, number, line, 3)?;
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::format(
                path,
                format!("line {number}: duplicate id {:?}", fields[0]),
            ));
        }
        rows.push((
            fields[0].to_string(),
            parse_geo(path, number, fields[1], fields[2])?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::format(path, "position table lists no entries"));
    }
    Ok(rows)
}

/// Writes an `id,lat,lon` position table.
pub fn write_positions(path: &Path, rows: &[(String, GeoPoint)]) -> Result<()> {
    let mut text = String::from("# id,lat,lon\n");
    for (id, p) in rows {
        writeln!(text, "{},{},{}", id, p.lat_deg, p.lon_deg).expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
