//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use crosswalk_core::annotate::assign_headings;
use crosswalk_core::eval::{ConfusionCounts, Prediction};
use crosswalk_core::geo::{CameraPose, GeoPoint, Region};
use crosswalk_core::polyline::decode;
use crosswalk_core::providers::sim::{SimWorld, SimWorldSpec};
use crosswalk_core::providers::{batch_waypoint_requests, order_sites, DirectionsProvider, SiteOrder};
use crosswalk_core::sampler::{augment_path, dedup_points_against, snap_to_panoramas_against, DEFAULT_SPACING};
use crosswalk_core::LabelValue;

pub const HALF_ANGLE: f64 = 35.0;
pub const NEAR: f64 = 5e-5;
pub const FAR: f64 = 2.5e-4;
const SWEEP_STEP: f64 = 0.1;

/// Even-odd crossing test; `poly` is a closed ring given without repeating the first vertex.
fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// Annular sector polygon swept by rays every 0.1 degrees, in a camera-centred
/// frame with x east and y north. `outer` and `inner` are the ray lengths used
/// for the far and near arcs.
fn sector_polygon(heading: f64, outer: f64, inner: f64) -> Vec<(f64, f64)> {
    let steps = (2.0 * HALF_ANGLE / SWEEP_STEP).round() as usize;
    let ray = |k: usize| (heading - HALF_ANGLE + k as f64 * SWEEP_STEP).to_radians();
    let mut poly = Vec::with_capacity(2 * (steps + 1));
    for k in 0..=steps {
        let a = ray(k);
        poly.push((outer * a.sin(), outer * a.cos()));
    }
    for k in (0..=steps).rev() {
        let a = ray(k);
        poly.push((inner * a.sin(), inner * a.cos()));
    }
    poly
}

/// Sector membership by polygon containment.
///
/// Two polygons bracket the true sector: one with its far arc inscribed and
/// its near arc circumscribed (entirely inside the sector) and one the other
/// way round (entirely containing it). Returns `None` for the sliver between
/// them, where a chord-based polygon cannot decide.
pub fn sector_oracle(pose: &CameraPose, target: &GeoPoint) -> Option<bool> {
    let x = target.lon - pose.position.lon;
    let y = target.lat - pose.position.lat;
    if x.abs() > 2.0 * FAR || y.abs() > 2.0 * FAR {
        return Some(false);
    }
    let grow = 1.0 / (SWEEP_STEP / 2.0).to_radians().cos();
    let inner_poly = sector_polygon(pose.heading, FAR, NEAR * grow);
    let outer_poly = sector_polygon(pose.heading, FAR * grow, NEAR);
    match (inside(&inner_poly, x, y), inside(&outer_poly, x, y)) {
        (true, _) => Some(true),
        (false, false) => Some(false),
        (false, true) => None,
    }
}

/// Brute-force label over every site; `None` if any site is undecidable.
pub fn label_oracle(pose: &CameraPose, sites: &[GeoPoint]) -> Option<bool> {
    let mut any = false;
    for s in sites {
        match sector_oracle(pose, s) {
            Some(true) => any = true,
            Some(false) => {}
            None => return None,
        }
    }
    Some(any)
}

/// Per-sample tally into a confusion matrix, written without any lookup structure.
pub fn tally(preds: &[Prediction], truth: &[(String, LabelValue)], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (id, label) in truth {
        let p = preds.iter().find(|p| &p.sample_id == id).expect("prediction present");
        let said_yes = p.prob_positive > threshold;
        let is_yes = *label == LabelValue::Positive;
        match (said_yes, is_yes) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Gamma at positive integers and half-integers.
fn gamma_half(x2: u32) -> f64 {
    // x = x2 / 2
    match x2 {
        1 => std::f64::consts::PI.sqrt(),
        2 => 1.0,
        _ => (x2 as f64 / 2.0 - 1.0) * gamma_half(x2 - 2),
    }
}

pub fn t_density(x: f64, dof: u32) -> f64 {
    let v = dof as f64;
    let c = gamma_half(dof + 1) / ((v * std::f64::consts::PI).sqrt() * gamma_half(dof));
    c * (1.0 + x * x / v).powf(-(v + 1.0) / 2.0)
}

/// Two-sided p-value by trapezoid integration of the t density over `[0, |t|]`.
pub fn t_p_value_trapezoid(t: f64, dof: u32) -> f64 {
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut area = 0.5 * (t_density(0.0, dof) + t_density(t.abs(), dof));
    for k in 1..n {
        area += t_density(k as f64 * h, dof);
    }
    1.0 - 2.0 * area * h
}

/// Straightforward polyline encoder working on decimal digits of the
/// zigzagged delta, kept separate from the library's bit-twiddling version.
pub fn reference_encode(points: &[(f64, f64)]) -> String {
    fn to_int(deg: f64) -> i64 {
        let s = deg * 1e5;
        let m = (s.abs() + 0.5).floor() as i64;
        if s < 0.0 {
            -m
        } else {
            m
        }
    }
    fn emit(out: &mut String, delta: i64) {
        let mut u: u64 = if delta < 0 { (2 * (-delta) - 1) as u64 } else { (2 * delta) as u64 };
        loop {
            let chunk = u % 32;
            u /= 32;
            let code = if u > 0 { chunk + 32 } else { chunk };
            out.push(char::from_u32((code + 63) as u32).unwrap());
            if u == 0 {
                break;
            }
        }
    }
    let mut out = String::new();
    let (mut plat, mut plon) = (0i64, 0i64);
    for &(lat, lon) in points {
        let (a, b) = (to_int(lat), to_int(lon));
        emit(&mut out, a - plat);
        emit(&mut out, b - plon);
        plat = a;
        plon = b;
    }
    out
}

/// Best accuracy of any single threshold rule `value > cut` (or its
/// complement) over a scalar feature.
pub fn best_threshold_accuracy(values: &[f64], labels: &[bool]) -> f64 {
    let mut cuts: Vec<f64> = values.to_vec();
    cuts.push(f64::NEG_INFINITY);
    let mut best = 0.0f64;
    for &cut in &cuts {
        let right = values.iter().zip(labels).filter(|(v, l)| (**v > cut) == **l).count();
        let acc = right as f64 / values.len() as f64;
        best = best.max(acc).max(1.0 - acc);
    }
    best
}

pub fn sim_world(seed: u64, bounds: Region, site_probability: f64) -> SimWorld {
    SimWorld::new(SimWorldSpec {
        seed,
        bounds,
        site_probability,
        ..Default::default()
    })
    .unwrap()
}

/// Camera poses along routes through every site of `world`, built the way a
/// harvest builds them but without fetching images.
pub fn sim_poses(world: &Arc<SimWorld>, pool: &rayon::ThreadPool) -> Vec<CameraPose> {
    let mut sites = world.sites().to_vec();
    order_sites(&mut sites, SiteOrder::Sorted);
    let mut path = Vec::new();
    for req in batch_waypoint_requests(&sites).unwrap() {
        let line = world.route(&req.origin, &req.waypoints, &req.destination).unwrap();
        let pts = decode(&line).unwrap();
        if path.is_empty() {
            path.extend(pts);
        } else {
            path.extend(pts.into_iter().skip(1));
        }
    }
    let dense = augment_path(&path, DEFAULT_SPACING).unwrap();
    let mut seen = HashSet::new();
    let unique = dedup_points_against(&dense, &mut seen);
    let mut used = HashSet::new();
    let snapped = snap_to_panoramas_against(&unique, world.as_ref(), pool, &mut used).unwrap();
    assign_headings(&snapped.locations).unwrap().into_iter().map(|(p, _)| p).collect()
}

pub fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

/// Harvests a square simulated region of `side` degrees into `out`.
pub fn harvest_sim(seed: u64, side: f64, out: &std::path::Path) -> Vec<crosswalk_core::Sample> {
    use crosswalk_core::pipeline::{harvest, HarvestOptions, NamedRegion, Thresholds};
    let bounds = Region::from_bounds(-20.0, -40.0, -20.0 + side, -40.0 + side).unwrap();
    let world = Arc::new(sim_world(seed, bounds, 0.6));
    let regions = [NamedRegion {
        name: "sim".into(),
        bounds,
    }];
    let options = HarvestOptions {
        seed,
        thresholds: Thresholds {
            min_sites: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    let providers = crosswalk_core::Providers::simulated(world);
    harvest(&providers, &regions, &options, &pool(4), out).unwrap().0
}
