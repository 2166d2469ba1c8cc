//! Candidate camera locations from decoded route geometry.

use std::collections::HashSet;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{degree_distance, GeoPoint};
use crate::providers::{PanoMeta, PanoProvider};

/// Maximum spacing between consecutive sampled locations, degrees.
pub const DEFAULT_SPACING: f64 = 1e-4;

/// Coordinates equal after rounding to this many degrees are duplicates.
pub const DEDUP_TOLERANCE: f64 = 1e-6;

/// Densifies a path so no two consecutive points are more than `spacing` apart.
///
/// A segment of length `d` gets `ceil(d / spacing) - 1` evenly spaced interior
/// points. Original points are kept in order, including repeated ones.
pub fn augment_path(points: &[GeoPoint], spacing: f64) -> Result<Vec<GeoPoint>> {
    if points.len() < 2 {
        return Err(Error::NotEnoughPoints(points.len()));
    }
    let mut out = Vec::with_capacity(points.len());
    out.push(points[0]);
    for pair in points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let d = degree_distance(&a, &b);
        if d > 0.0 {
            // The epsilon keeps a segment of exactly `spacing` from splitting in two.
            let k = ((d / spacing) - 1e-9).ceil().max(1.0) as usize;
            for m in 1..k {
                let t = m as f64 / k as f64;
                out.push(GeoPoint::new(a.lat + (b.lat - a.lat) * t, a.lon + (b.lon - a.lon) * t));
            }
        }
        out.push(b);
    }
    Ok(out)
}

fn dedup_key(p: &GeoPoint) -> (i64, i64) {
    ((p.lat / DEDUP_TOLERANCE).round() as i64, (p.lon / DEDUP_TOLERANCE).round() as i64)
}

/// Drops repeated locations, keeping the first occurrence.
pub fn dedup_points(points: &[GeoPoint]) -> Vec<GeoPoint> {
    let mut seen = HashSet::with_capacity(points.len());
    points.iter().filter(|p| seen.insert(dedup_key(p))).copied().collect()
}

/// Like [`dedup_points`], but also drops anything already in `seen`.
pub fn dedup_points_against(points: &[GeoPoint], seen: &mut HashSet<(i64, i64)>) -> Vec<GeoPoint> {
    points.iter().filter(|p| seen.insert(dedup_key(p))).copied().collect()
}

/// A path location moved onto its nearest panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoLocation {
    pub meta: PanoMeta,
    pub source_point: GeoPoint,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SnapOutcome {
    pub locations: Vec<PanoLocation>,
    /// Points with no panorama in range.
    pub no_pano: usize,
    /// Points whose panorama was already taken by an earlier point.
    pub duplicate_pano: usize,
}

/// Snaps each point to its nearest panorama, dropping points without one and
/// keeping only the first point per panorama. Lookups run on `pool`; output
/// order matches input order.
pub fn snap_to_panoramas(points: &[GeoPoint], provider: &dyn PanoProvider, pool: &ThreadPool) -> Result<SnapOutcome> {
    let mut seen = HashSet::new();
    snap_to_panoramas_against(points, provider, pool, &mut seen)
}

/// [`snap_to_panoramas`] sharing a set of already-used panorama ids.
pub fn snap_to_panoramas_against(
    points: &[GeoPoint],
    provider: &dyn PanoProvider,
    pool: &ThreadPool,
    seen: &mut HashSet<String>,
) -> Result<SnapOutcome> {
    let found: Vec<Option<PanoMeta>> =
        pool.install(|| points.par_iter().map(|p| provider.nearest_pano(p)).collect::<Result<_>>())?;
    let mut out = SnapOutcome::default();
    for (point, meta) in points.iter().zip(found) {
        match meta {
            None => out.no_pano += 1,
            Some(meta) if !seen.insert(meta.pano_id.clone()) => out.duplicate_pano += 1,
            Some(meta) => out.locations.push(PanoLocation {
                meta,
                source_point: *point,
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::sim::{SimWorld, SimWorldSpec};
    use crate::geo::Region;

    fn pool() -> ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap()
    }

    #[test]
    fn augment_examples() {
        let a = GeoPoint::new(0.0, 0.0);
        let out = augment_path(&[a, GeoPoint::new(0.0, 3.5e-4)], DEFAULT_SPACING).unwrap();
        assert_eq!(out.len(), 5);
        for w in out.windows(2) {
            assert!((degree_distance(&w[0], &w[1]) - 8.75e-5).abs() < 1e-15);
        }
        let out = augment_path(&[a, GeoPoint::new(1e-4, 0.0)], DEFAULT_SPACING).unwrap();
        assert_eq!(out.len(), 2);
        let out = augment_path(&[a, a], DEFAULT_SPACING).unwrap();
        assert_eq!(out, vec![a, a]);
        assert!(matches!(augment_path(&[a], DEFAULT_SPACING), Err(Error::NotEnoughPoints(1))));
    }

    #[test]
    fn dedup_examples() {
        assert!(dedup_points(&[]).is_empty());
        let o = GeoPoint::new(0.0, 0.0);
        assert_eq!(dedup_points(&[o, o]), vec![o]);
        let near = [GeoPoint::new(0.0, 1.0000004e-4), GeoPoint::new(0.0, 1.0000009e-4)];
        assert_eq!(dedup_points(&near).len(), 1);
        let apart = [GeoPoint::new(0.0, 1.00e-4), GeoPoint::new(0.0, 1.01e-4)];
        assert_eq!(dedup_points(&apart).len(), 2);
    }

    fn world() -> SimWorld {
        SimWorld::new(SimWorldSpec {
            seed: 3,
            bounds: Region::from_bounds(0.0, 0.0, 0.005, 0.005).unwrap(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn snapping_drops_far_points_and_merges_shared_panos() {
        let w = world();
        let pts = [
            GeoPoint::new(0.001, 0.001),
            GeoPoint::new(0.001, 0.0010004),
            GeoPoint::new(0.5, 0.5),
            GeoPoint::new(0.001, 0.0012),
        ];
        let out = snap_to_panoramas(&pts, &w, &pool()).unwrap();
        assert_eq!(out.no_pano, 1);
        assert_eq!(out.duplicate_pano, 1);
        assert_eq!(out.locations.len(), 2);
        assert_eq!(out.locations[0].meta.pano_id, "x2_2");
        assert_eq!(out.locations[0].source_point, pts[0]);
        assert!(snap_to_panoramas(&[], &w, &pool()).unwrap().locations.is_empty());
    }

    #[test]
    fn parallel_snapping_matches_sequential_order() {
        let w = world();
        let pts: Vec<_> = (0..200).map(|k| GeoPoint::new(0.002, k as f64 * 2.5e-5)).collect();
        let seq = snap_to_panoramas(&pts, &w, &rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()).unwrap();
        let par = snap_to_panoramas(&pts, &w, &pool()).unwrap();
        assert_eq!(seq, par);
        let ids: HashSet<_> = par.locations.iter().map(|l| &l.meta.pano_id).collect();
        assert_eq!(ids.len(), par.locations.len());
    }
}
