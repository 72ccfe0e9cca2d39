//! Training loss and retrieval metrics.
//!
//! The loss side scores a batch of query/database aligned distances with a
//! soft-margin triplet objective; the metric side turns per-query rankings
//! plus geographic positions into recall-at-k numbers.
//!
//! All reductions sum in a fixed pairwise order so results do not depend on
//! thread count or platform reassociation.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Equatorial earth radius used by [`geo_distance`], metres.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// A geographic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        if !(lat_deg.is_finite() && lat_deg.abs() <= 90.0) {
            return Err(Error::invalid(format!("latitude {lat_deg} out of range")));
        }
        if !(lon_deg.is_finite() && lon_deg.abs() <= 180.0) {
            return Err(Error::invalid(format!("longitude {lon_deg} out of range")));
        }
        Ok(GeoPoint { lat_deg, lon_deg })
    }
}

/// Square matrix of aligned distances, `values[q][s]` = distance between
/// query `q` and database entry `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// All-zero matrix of the given size.
    pub fn zeros(size: usize) -> Self {
        DistanceMatrix {
            size,
            values: vec![0.0; size * size],
        }
    }

    /// Builds a matrix from row-major values; entries must be finite and
    /// non-negative (they are distances).
    pub fn from_values(size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::dim(format!(
                "{} values cannot fill a {size}x{size} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("distances must be finite and non-negative"));
        }
        Ok(DistanceMatrix { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, q: usize, s: usize) -> f64 {
        self.values[q * self.size + s]
    }

    pub fn set(&mut self, q: usize, s: usize, value: f64) {
        assert!(value.is_finite(), "distance must be finite");
        self.values[q * self.size + s] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Soft-margin triplet loss `log(1 + exp(alpha * (d_pos - d_neg)))`.
///
/// Evaluated in a form that neither overflows for large positive margins nor
/// loses the tail for large negative ones.
pub fn triplet_loss(d_pos: f64, d_neg: f64, alpha: f64) -> f64 {
    let z = alpha * (d_pos - d_neg);
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Analytic gradient of [`triplet_loss`] with respect to `(d_pos, d_neg)`.
///
/// With `s = sigmoid(alpha * (d_pos - d_neg))` the gradient is
/// `(alpha * s, -alpha * s)`.
pub fn triplet_loss_grad(d_pos: f64, d_neg: f64, alpha: f64) -> (f64, f64) {
    let z = alpha * (d_pos - d_neg);
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    (alpha * s, -alpha * s)
}

/// Mean triplet loss over every triplet an exhaustive mini-batch offers.
///
/// For each query `q` the positive is its own entry `D[q][q]`. Negatives are
/// drawn both ways: other entries against this query (`D[q][s]`, `s != q`)
/// and this entry against other queries (`D[p][q]`, `p != q`), giving
/// `2 * B * (B - 1)` triplets in total.
pub fn batch_loss(distances: &DistanceMatrix, alpha: f64) -> Result<f64> {
    let b = distances.size();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let mut terms = Vec::with_capacity(2 * b * (b - 1));
    for q in 0..b {
        let pos = distances.get(q, q);
        for s in 0..b {
            if s != q {
                terms.push(triplet_loss(pos, distances.get(q, s), alpha));
            }
        }
        for p in 0..b {
            if p != q {
                terms.push(triplet_loss(pos, distances.get(p, q), alpha));
            }
        }
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// Gradient of [`batch_loss`] with respect to every matrix entry.
pub fn batch_loss_grad(distances: &DistanceMatrix, alpha: f64) -> Result<DistanceMatrix> {
    let b = distances.size();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let scale = 1.0 / (2 * b * (b - 1)) as f64;
    let mut grad = vec![0.0f64; b * b];
    for q in 0..b {
        let pos = distances.get(q, q);
        for s in 0..b {
            if s != q {
                let (gp, gn) = triplet_loss_grad(pos, distances.get(q, s), alpha);
                grad[q * b + q] += gp * scale;
                grad[q * b + s] += gn * scale;
            }
        }
        for p in 0..b {
            if p != q {
                let (gp, gn) = triplet_loss_grad(pos, distances.get(p, q), alpha);
                grad[q * b + q] += gp * scale;
                grad[p * b + q] += gn * scale;
            }
        }
    }
    Ok(DistanceMatrix {
        size: b,
        values: grad,
    })
}

/// Metric distance between two geographic points, equirectangular
/// approximation on a sphere of radius [`EARTH_RADIUS_M`].
///
/// Accurate to well under a percent at the sub-kilometre ranges retrieval
/// thresholds live at, and much cheaper than a geodesic.
pub fn geo_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let dphi = (b.lat_deg - a.lat_deg).to_radians();
    let dlam = (b.lon_deg - a.lon_deg).to_radians();
    let mean_phi = ((a.lat_deg + b.lat_deg) / 2.0).to_radians();
    let east = mean_phi.cos() * dlam;
    EARTH_RADIUS_M * (dphi * dphi + east * east).sqrt()
}

/// One query's ranked retrieval result, best candidate first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    pub ranked_ids: Vec<String>,
}

/// Rank (1-based) of the first database entry within `threshold_m` of the
/// query's true position, or `None` when the ranking never gets close.
pub fn first_hit_rank(
    ranking: &Ranking,
    query_positions: &HashMap<String, GeoPoint>,
    db_positions: &HashMap<String, GeoPoint>,
    threshold_m: f64,
) -> Result<Option<usize>> {
    let query_pos = query_positions
        .get(&ranking.query_id)
        .ok_or_else(|| Error::UnknownId(ranking.query_id.clone()))?;
    for (i, id) in ranking.ranked_ids.iter().enumerate() {
        let pos = db_positions
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.clone()))?;
        if geo_distance(query_pos, pos) <= threshold_m {
            return Ok(Some(i + 1));
        }
    }
    Ok(None)
}

/// Fraction of queries whose top-k candidates contain at least one entry
/// within `threshold_m` of the true position, for each requested `k`.
///
/// Rankings are assumed complete and duplicate free per query. Returns one
/// `(k, recall)` pair per entry of `ks`, in the given order.
pub fn recall_at_k(
    rankings: &[Ranking],
    query_positions: &HashMap<String, GeoPoint>,
    db_positions: &HashMap<String, GeoPoint>,
    ks: &[usize],
    threshold_m: f64,
) -> Result<Vec<(usize, f64)>> {
    if rankings.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut hit_ranks = Vec::with_capacity(rankings.len());
    for ranking in rankings {
        hit_ranks.push(first_hit_rank(ranking, query_positions, db_positions, threshold_m)?);
    }
    let total = rankings.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = hit_ranks
                .iter()
                .filter(|r| matches!(r, Some(rank) if *rank <= k))
                .count();
            (k, hits as f64 / total)
        })
        .collect())
}

/// Sums in a fixed balanced order, independent of caller context.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
