//! Displacement search between a satellite map and a fused query map.
//!
//! The query camera rarely sits exactly at a database location, so a
//! satellite patch and the query's overhead map disagree by a translation.
//! [`ncc_field`] scores every integer displacement within a search radius
//! by normalized cross-correlation over the jointly visible pixels;
//! [`weighted_similarity`] divides the scores by a per-cell uncertainty
//! (low-confidence cells need a higher raw score to win), and
//! [`best_displacement`] picks the winner. [`best_match`] chains the three
//! and derives a descriptor distance from the raw correlation at the chosen
//! cell, which is what retrieval ranks by in [`scan_database`].
//!
//! Field cells are indexed by displacement `(m, n)`: shifting the satellite
//! map by `m` rows and `n` columns (see [`shifted_view`]) aligns it with
//! the query. With canvas row pointing east and column south, a cell maps
//! to the metric offset `(east, south) = (m, n) * meters_per_cell` of the
//! query relative to the satellite center.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::fusion::ConvStack;

/// Half-extent of the displacement search region, in meters.
///
/// Searches cover a 10 x 10 m neighborhood around each database location.
pub const SEARCH_HALF_EXTENT_M: f64 = 5.0;

/// Uncertainty floor: pooled confidence never drops below this.
pub const UNCERTAINTY_FLOOR: f64 = 1e-2;

/// Search radius in grid cells covering [`SEARCH_HALF_EXTENT_M`].
pub fn search_radius(meters_per_cell: f64) -> Result<usize> {
    if !(meters_per_cell.is_finite() && meters_per_cell > 0.0) {
        return Err(Error::invalid("meters per cell must be positive"));
    }
    Ok((SEARCH_HALF_EXTENT_M / meters_per_cell).ceil() as usize)
}

/// Scores over the (2R+1) x (2R+1) grid of integer displacements.
///
/// Cell `(m, n)`, `|m|, |n| <= R`, holds the score of shifting the
/// satellite map by `(m, n)` pixels. Cells where the two maps share no
/// visible pixel are flagged invalid.
#[derive(Debug, Clone)]
pub struct SimilarityField {
    radius: usize,
    meters_per_cell: f64,
    scores: Vec<f64>,
    valid: Vec<bool>,
}

impl SimilarityField {
    pub fn from_parts(
        radius: usize,
        meters_per_cell: f64,
        scores: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let cells = (2 * radius + 1) * (2 * radius + 1);
        if scores.len() != cells || valid.len() != cells {
            return Err(Error::dim(format!(
                "field of radius {radius} needs {cells} cells, got {} scores and {} flags",
                scores.len(),
                valid.len()
            )));
        }
        if !(meters_per_cell.is_finite() && meters_per_cell > 0.0) {
            return Err(Error::invalid("meters per cell must be positive"));
        }
        if scores
            .iter()
            .zip(&valid)
            .any(|(s, &ok)| ok && !s.is_finite())
        {
            return Err(Error::invalid("valid cells must hold finite scores"));
        }
        Ok(SimilarityField {
            radius,
            meters_per_cell,
            scores,
            valid,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn meters_per_cell(&self) -> f64 {
        self.meters_per_cell
    }

    /// Stamps the metric scale of one grid cell (defaults to 1.0).
    pub fn with_meters_per_cell(mut self, meters_per_cell: f64) -> Result<Self> {
        if !(meters_per_cell.is_finite() && meters_per_cell > 0.0) {
            return Err(Error::invalid("meters per cell must be positive"));
        }
        self.meters_per_cell = meters_per_cell;
        Ok(self)
    }

    fn index(&self, m: i32, n: i32) -> usize {
        let r = self.radius as i32;
        assert!(
            m.abs() <= r && n.abs() <= r,
            "displacement ({m}, {n}) outside radius {r}"
        );
        ((m + r) as usize) * self.side() + (n + r) as usize
    }

    pub fn score(&self, m: i32, n: i32) -> f64 {
        self.scores[self.index(m, n)]
    }

    pub fn is_cell_valid(&self, m: i32, n: i32) -> bool {
        self.valid[self.index(m, n)]
    }
}

/// Pooled per-displacement confidence in `[floor, 1]`.
#[derive(Debug, Clone)]
pub struct UncertaintyField {
    radius: usize,
    values: Vec<f64>,
}

impl UncertaintyField {
    pub fn from_values(radius: usize, values: Vec<f64>) -> Result<Self> {
        let cells = (2 * radius + 1) * (2 * radius + 1);
        if values.len() != cells {
            return Err(Error::dim(format!(
                "field of radius {radius} needs {cells} cells, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::invalid("uncertainty values must lie in (0, 1]"));
        }
        Ok(UncertaintyField { radius, values })
    }

    pub fn uniform(radius: usize, value: f64) -> Result<Self> {
        let cells = (2 * radius + 1) * (2 * radius + 1);
        Self::from_values(radius, vec![value; cells])
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn value(&self, m: i32, n: i32) -> f64 {
        let r = self.radius as i32;
        assert!(
            m.abs() <= r && n.abs() <= r,
            "displacement ({m}, {n}) outside radius {r}"
        );
        self.values[((m + r) as usize) * (2 * self.radius + 1) + (n + r) as usize]
    }
}

fn radius_limit(map: &FeatureMap) -> usize {
    map.height().min(map.width()) / 2
}

/// The map recentred at displacement `(m, n)`: `out[y, x] = F[y+m, x+n]`.
///
/// Pixels whose source falls outside the map come back masked zero.
pub fn shifted_view(map: &FeatureMap, m: i32, n: i32) -> Result<FeatureMap> {
    let limit = radius_limit(map);
    let radius = m.unsigned_abs().max(n.unsigned_abs()) as usize;
    if radius > limit {
        return Err(Error::RadiusTooLarge { radius, limit });
    }
    let (h, w, c) = (map.height(), map.width(), map.channels());
    let mut data = vec![0.0f32; h * w * c];
    let mut mask = vec![false; h * w];
    for y in 0..h {
        let sy = y as i32 + m;
        if sy < 0 || sy >= h as i32 {
            continue;
        }
        for x in 0..w {
            let sx = x as i32 + n;
            if sx < 0 || sx >= w as i32 || !map.is_valid(sy as usize, sx as usize) {
                continue;
            }
            let src = map.pixel(sy as usize, sx as usize);
            data[(y * w + x) * c..][..c].copy_from_slice(src);
            mask[y * w + x] = true;
        }
    }
    FeatureMap::from_parts(h, w, c, data, mask)
}

/// Normalized cross-correlation over all displacements within `radius`.
///
/// Each cell correlates the shifted satellite map with the query over the
/// intersection of their visibility masks, normalizing by both norms taken
/// over that same intersection (zero-padding into the norms would reward
/// small overlaps). Empty or zero-norm intersections score 0 and are
/// flagged.
pub fn ncc_field(
    satellite: &FeatureMap,
    query: &FeatureMap,
    radius: usize,
) -> Result<SimilarityField> {
    if !satellite.same_shape(query) {
        return Err(Error::dim(format!(
            "satellite {}x{}x{} vs query {}x{}x{}",
            satellite.height(),
            satellite.width(),
            satellite.channels(),
            query.height(),
            query.width(),
            query.channels()
        )));
    }
    let limit = radius_limit(query);
    if radius > limit {
        return Err(Error::RadiusTooLarge { radius, limit });
    }
    let degenerate = !(0..query.pixel_count()).any(|p| {
        query.mask()[p]
            && query.data()[p * query.channels()..(p + 1) * query.channels()]
                .iter()
                .any(|&v| v != 0.0)
    });
    if degenerate {
        return Err(Error::DegenerateQuery);
    }

    let (h, w, c) = (query.height(), query.width(), query.channels());
    let side = 2 * radius + 1;
    let r = radius as i32;
    let mut scores = vec![0.0f64; side * side];
    let mut valid = vec![false; side * side];
    scores
        .par_chunks_mut(side)
        .zip(valid.par_chunks_mut(side))
        .enumerate()
        .for_each(|(row_idx, (score_row, valid_row))| {
            let m = row_idx as i32 - r;
            for (col_idx, (score, ok)) in score_row.iter_mut().zip(valid_row.iter_mut()).enumerate()
            {
                let n = col_idx as i32 - r;
                let y_lo = 0.max(-m) as usize;
                let y_hi = (h as i32).min(h as i32 - m) as usize;
                let x_lo = 0.max(-n) as usize;
                let x_hi = (w as i32).min(w as i32 - n) as usize;
                let mut dot = 0.0f64;
                let mut norm_s = 0.0f64;
                let mut norm_q = 0.0f64;
                let mut overlap = false;
                for y in y_lo..y_hi {
                    let sy = (y as i32 + m) as usize;
                    for x in x_lo..x_hi {
                        let sx = (x as i32 + n) as usize;
                        if !query.mask()[y * w + x] || !satellite.mask()[sy * w + sx] {
                            continue;
                        }
                        overlap = true;
                        let qd = &query.data()[(y * w + x) * c..][..c];
                        let sd = &satellite.data()[(sy * w + sx) * c..][..c];
                        for ch in 0..c {
                            let s = sd[ch] as f64;
                            let q = qd[ch] as f64;
                            dot += s * q;
                            norm_s += s * s;
                            norm_q += q * q;
                        }
                    }
                }
                let denom = (norm_s * norm_q).sqrt();
                if overlap && denom > 0.0 {
                    *score = dot / denom;
                    *ok = true;
                }
            }
        });

    SimilarityField::from_parts(radius, 1.0, scores, valid)
}

/// Pooled confidence of the satellite map over the displacement grid.
///
/// Runs the stack (output channels must be 1), squashes through a sigmoid,
/// average-pools the map onto the (2R+1) x (2R+1) grid over valid pixels
/// (tiles with no valid pixel default to the neutral 0.5), and floors at
/// [`UNCERTAINTY_FLOOR`] so later division is safe.
pub fn uncertainty_field(
    satellite: &FeatureMap,
    weights: &ConvStack,
    radius: usize,
) -> Result<UncertaintyField> {
    if weights.c_out() != 1 {
        return Err(Error::dim(format!(
            "uncertainty stack must end in one channel, ends in {}",
            weights.c_out()
        )));
    }
    let limit = radius_limit(satellite);
    if radius > limit {
        return Err(Error::RadiusTooLarge { radius, limit });
    }
    let response = weights.apply(satellite)?;
    let (h, w) = (response.height(), response.width());
    let side = 2 * radius + 1;
    let mut values = vec![0.0f64; side * side];
    for ty in 0..side {
        let y_lo = ty * h / side;
        let y_hi = (ty + 1) * h / side;
        for tx in 0..side {
            let x_lo = tx * w / side;
            let x_hi = (tx + 1) * w / side;
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    if response.is_valid(y, x) {
                        let v = response.get(y, x, 0) as f64;
                        sum += 1.0 / (1.0 + (-v).exp());
                        count += 1;
                    }
                }
            }
            let pooled = if count == 0 { 0.5 } else { sum / count as f64 };
            values[ty * side + tx] = pooled.max(UNCERTAINTY_FLOOR);
        }
    }
    UncertaintyField::from_values(radius, values)
}

/// Divides similarity by confidence: `D[m,n] = D0[m,n] / U[m,n]`.
///
/// Invalid cells stay invalid; their score becomes -inf so no ranking can
/// ever prefer them.
pub fn weighted_similarity(
    similarity: &SimilarityField,
    uncertainty: &UncertaintyField,
) -> Result<SimilarityField> {
    if similarity.radius != uncertainty.radius {
        return Err(Error::dim(format!(
            "similarity radius {} vs uncertainty radius {}",
            similarity.radius, uncertainty.radius
        )));
    }
    let side = similarity.side();
    let mut scores = vec![f64::NEG_INFINITY; side * side];
    for (i, score) in scores.iter_mut().enumerate() {
        if similarity.valid[i] {
            *score = similarity.scores[i] / uncertainty.values[i];
        }
    }
    SimilarityField::from_parts(
        similarity.radius,
        similarity.meters_per_cell,
        scores,
        similarity.valid.clone(),
    )
}

/// Argmax over valid cells; ties break to the smallest m, then smallest n.
pub fn best_displacement(field: &SimilarityField) -> Result<(i32, i32, f64)> {
    let r = field.radius as i32;
    let mut best: Option<(i32, i32, f64)> = None;
    for m in -r..=r {
        for n in -r..=r {
            if !field.is_cell_valid(m, n) {
                continue;
            }
            let score = field.score(m, n);
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((m, n, score));
            }
        }
    }
    best.ok_or(Error::AllCellsInvalid)
}

/// Outcome of one satellite-against-query displacement search.
#[derive(Debug, Clone, Copy)]
pub struct MatchReport {
    /// Winning displacement (m, n) in grid cells.
    pub displacement: (i32, i32),
    /// Raw normalized cross-correlation at the winning cell.
    pub ncc: f64,
    /// Score the cell won with (equals `ncc` without uncertainty).
    pub weighted_score: f64,
    /// L2 distance between the unit-normalized aligned descriptors.
    pub distance: f64,
}

/// Full displacement search: correlate, weight, pick, convert to distance.
///
/// The distance is `sqrt(max(0, 2 - 2 * ncc))` at the winning cell, using
/// the raw correlation (not the uncertainty-amplified score) so it keeps
/// its meaning as an L2 distance between unit vectors; uncertainty only
/// influences where alignment happens. The search is one-sided, so this is
/// not symmetric under swapping the two maps.
pub fn best_match(
    satellite: &FeatureMap,
    query: &FeatureMap,
    uncertainty: Option<&UncertaintyField>,
    radius: usize,
) -> Result<MatchReport> {
    let raw = ncc_field(satellite, query, radius)?;
    let ranked = match uncertainty {
        Some(u) => weighted_similarity(&raw, u)?,
        None => raw.clone(),
    };
    let (m, n, score) = best_displacement(&ranked)?;
    let ncc = raw.score(m, n);
    Ok(MatchReport {
        displacement: (m, n),
        ncc,
        weighted_score: score,
        distance: (2.0 - 2.0 * ncc).max(0.0).sqrt(),
    })
}

/// Descriptor distance after the best alignment within `radius`.
pub fn aligned_distance(
    satellite: &FeatureMap,
    query: &FeatureMap,
    uncertainty: &UncertaintyField,
    radius: usize,
) -> Result<f64> {
    best_match(satellite, query, Some(uncertainty), radius).map(|r| r.distance)
}

/// One satellite patch of the reference database.
#[derive(Debug, Clone)]
pub struct DatabaseEntry {
    pub id: String,
    pub features: FeatureMap,
}

/// A database entry scored against a query.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub id: String,
    pub report: MatchReport,
}

/// Matches the query against every entry, best (smallest distance) first.
///
/// When an uncertainty stack is given, each entry's own confidence field
/// modulates its displacement search. Entries tie-break by id, so the
/// returned order is deterministic.
pub fn scan_database(
    entries: &[DatabaseEntry],
    query: &FeatureMap,
    uncertainty_weights: Option<&ConvStack>,
    radius: usize,
) -> Result<Vec<ScanResult>> {
    let mut results: Vec<ScanResult> = entries
        .par_iter()
        .map(|entry| {
            let field = uncertainty_weights
                .map(|w| uncertainty_field(&entry.features, w, radius))
                .transpose()?;
            let report = best_match(&entry.features, query, field.as_ref(), radius)?;
            Ok(ScanResult {
                id: entry.id.clone(),
                report,
            })
        })
        .collect::<Result<_>>()?;
    results.sort_by(|a, b| {
        f64::total_cmp(&a.report.distance, &b.report.distance).then_with(|| a.id.cmp(&b.id))
    });
    Ok(results)
}
