//! A deterministic synthetic city standing in for every external service.
//!
//! The world is a rectangular street grid. Crosswalk sites sit on a seeded
//! subset of intersections, panoramas are spaced along every street with a
//! little seeded jitter, routes follow the grid, and images are rendered as a
//! flat road under a sky with a striped band for each visible crosswalk.
//! Everything is a pure function of the `SimWorldSpec`.

use std::collections::HashMap;
use std::io::Cursor;
use std::sync::Arc;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{
    check_waypoints, DirectionsProvider, ImageBlob, ImageRequest, ImageryProvider, PanoMeta, PanoProvider,
    QuotaLedger, Service, SiteProvider, DEFAULT_SNAP_RADIUS,
};
use crate::error::{Error, Result};
use crate::geo::{angular_diff, bearing, degree_distance, GeoPoint, Region};
use crate::polyline::{encode, EncodedPolyline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimWorldSpec {
    pub seed: u64,
    pub bounds: Region,
    /// Street spacing in degrees. Zero disables the street grid.
    pub block_size: f64,
    /// Chance that an intersection carries a crosswalk.
    pub site_probability: f64,
    pub pano_spacing: f64,
    /// Maximum along-street displacement of a panorama.
    pub pano_jitter: f64,
    pub snap_radius: f64,
}

impl Default for SimWorldSpec {
    fn default() -> Self {
        SimWorldSpec {
            seed: 0,
            bounds: Region {
                bottom_left: GeoPoint::new(-20.0, -40.0),
                top_right: GeoPoint::new(-19.99, -39.99),
            },
            block_size: 5e-4,
            site_probability: 0.5,
            pano_spacing: 1e-4,
            pano_jitter: 1e-5,
            snap_radius: DEFAULT_SNAP_RADIUS,
        }
    }
}

// splitmix64 finalizer; keys every random draw by position so the world does
// not depend on enumeration order.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |h, p| mix(h ^ p))
}

fn unit(seed: u64, parts: &[u64]) -> f64 {
    (hash(seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    south: f64,
    west: f64,
    block: f64,
    rows: usize,
    cols: usize,
    steps: usize,
}

impl Grid {
    fn lat(&self, i: usize) -> f64 {
        self.south + i as f64 * self.block
    }
    fn lon(&self, j: usize) -> f64 {
        self.west + j as f64 * self.block
    }
    fn intersection(&self, i: usize, j: usize) -> GeoPoint {
        GeoPoint::new(self.lat(i), self.lon(j))
    }
}

/// Inclusive index range of grid lines within `[lo, hi]`.
fn lines_within(origin: f64, block: f64, count: usize, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
    let a = ((lo - origin) / block).ceil().max(0.0);
    let b = ((hi - origin) / block).floor().min(count as f64);
    if a > b {
        #[allow(clippy::reversed_empty_ranges)]
        return 1..=0;
    }
    a as usize..=b as usize
}

/// Uniform bucket grid for radius queries over crosswalk sites.
#[derive(Debug, Clone)]
struct SiteIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SiteIndex {
    fn new(sites: &[GeoPoint], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in sites.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        SiteIndex { cell, buckets }
    }

    fn key(p: &GeoPoint, cell: f64) -> (i64, i64) {
        ((p.lat / cell).floor() as i64, (p.lon / cell).floor() as i64)
    }

    fn near<'a>(&'a self, sites: &'a [GeoPoint], p: &GeoPoint, radius: f64) -> impl Iterator<Item = &'a GeoPoint> + 'a {
        let lo = Self::key(&GeoPoint::new(p.lat - radius, p.lon - radius), self.cell);
        let hi = Self::key(&GeoPoint::new(p.lat + radius, p.lon + radius), self.cell);
        (lo.0..=hi.0)
            .flat_map(move |a| (lo.1..=hi.1).map(move |b| (a, b)))
            .filter_map(move |k| self.buckets.get(&k))
            .flatten()
            .map(move |&i| &sites[i])
    }
}

/// Rendering constants of the synthetic camera, in degrees.
pub mod camera {
    /// Ground closer than this falls below the bottom edge of the frame.
    pub const NEAR: f64 = 5e-5;
    /// Haze hides crosswalks beyond this distance.
    pub const FAR: f64 = 2.5e-4;
    pub const CROSSWALK_HALF_WIDTH: f64 = 4e-5;
    pub const CROSSWALK_DEPTH: f64 = 3e-5;
    pub const STRIPE: f64 = 8e-6;

    pub const SKY: [u8; 3] = [150, 180, 215];
    pub const ROAD: [u8; 3] = [80, 80, 84];
    pub const PAINT: [u8; 3] = [245, 245, 245];
    /// Per-view brightness offset applied to sky and road, `0..SHADE_RANGE`.
    pub const SHADE_RANGE: u64 = 9;
}

pub struct SimWorld {
    spec: SimWorldSpec,
    grid: Option<Grid>,
    sites: Vec<GeoPoint>,
    index: SiteIndex,
    extra_panos: Vec<PanoMeta>,
    ledger: Arc<QuotaLedger>,
}

impl SimWorld {
    pub fn new(spec: SimWorldSpec) -> Result<Self> {
        spec.bounds.validate()?;
        let grid = (spec.block_size > 0.0).then(|| {
            let rows = (spec.bounds.height() / spec.block_size + 1e-9).floor() as usize;
            let cols = (spec.bounds.width() / spec.block_size + 1e-9).floor() as usize;
            Grid {
                south: spec.bounds.south(),
                west: spec.bounds.west(),
                block: spec.block_size,
                rows,
                cols,
                steps: ((spec.block_size / spec.pano_spacing).round() as usize).max(1),
            }
        });
        let mut sites = Vec::new();
        if let Some(g) = &grid {
            for i in 0..=g.rows {
                for j in 0..=g.cols {
                    if unit(spec.seed, &[1, i as u64, j as u64]) < spec.site_probability {
                        sites.push(g.intersection(i, j));
                    }
                }
            }
        }
        let index = SiteIndex::new(&sites, camera::FAR);
        Ok(SimWorld {
            spec,
            grid,
            sites,
            index,
            extra_panos: Vec::new(),
            ledger: Arc::new(QuotaLedger::default()),
        })
    }

    /// Replaces the generated crosswalk sites.
    pub fn with_sites(mut self, sites: Vec<GeoPoint>) -> Self {
        self.index = SiteIndex::new(&sites, camera::FAR);
        self.sites = sites;
        self
    }

    /// Adds hand-placed panoramas on top of the street grid.
    pub fn with_panos(mut self, panos: Vec<PanoMeta>) -> Self {
        self.extra_panos.extend(panos);
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<QuotaLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn spec(&self) -> &SimWorldSpec {
        &self.spec
    }

    pub fn ledger(&self) -> &Arc<QuotaLedger> {
        &self.ledger
    }

    pub fn sites(&self) -> &[GeoPoint] {
        &self.sites
    }

    pub fn sites_near(&self, p: &GeoPoint, radius: f64) -> Vec<GeoPoint> {
        self.index
            .near(&self.sites, p, radius)
            .filter(|s| degree_distance(s, p) <= radius)
            .copied()
            .collect()
    }

    fn grid_pano(&self, id: String, location: GeoPoint) -> PanoMeta {
        let h = hash(self.spec.seed, &[3, location.lat.to_bits(), location.lon.to_bits()]);
        PanoMeta {
            capture_date: Some(format!("{}-{:02}", 2009 + h % 9, 1 + (h >> 8) % 12)),
            copyright: Some("© SimWorld".to_string()),
            pano_id: id,
            location,
        }
    }

    fn jitter(&self, tag: u64, i: usize, j: usize, k: usize, g: &Grid) -> f64 {
        let max = self.spec.pano_jitter.min(0.4 * g.block / g.steps as f64);
        (2.0 * unit(self.spec.seed, &[tag, i as u64, j as u64, k as u64]) - 1.0) * max
    }

    /// Every grid panorama within `radius` of `loc`.
    fn grid_panos_near(&self, loc: &GeoPoint, radius: f64) -> Vec<PanoMeta> {
        let Some(g) = self.grid else { return Vec::new() };
        let mut out = Vec::new();
        let step = g.block / g.steps as f64;
        let rows = lines_within(g.south, g.block, g.rows, loc.lat - radius, loc.lat + radius);
        let cols = lines_within(g.west, g.block, g.cols, loc.lon - radius, loc.lon + radius);
        // Segments whose span intersects the query window.
        let seg_range = |origin: f64, count: usize, lo: f64, hi: f64| {
            let a = ((lo - origin) / g.block).floor().max(0.0) as usize;
            let b = (((hi - origin) / g.block).floor().max(0.0) as usize).min(count.saturating_sub(1));
            a..=b
        };
        for i in rows.clone() {
            for j in cols.clone() {
                out.push(self.grid_pano(format!("x{i}_{j}"), g.intersection(i, j)));
            }
            if g.cols == 0 {
                continue;
            }
            for j in seg_range(g.west, g.cols, loc.lon - radius, loc.lon + radius) {
                for k in 1..g.steps {
                    let lon = g.lon(j) + k as f64 * step + self.jitter(4, i, j, k, &g);
                    out.push(self.grid_pano(format!("h{i}_{j}_{k}"), GeoPoint::new(g.lat(i), lon)));
                }
            }
        }
        for j in cols {
            if g.rows == 0 {
                continue;
            }
            for i in seg_range(g.south, g.rows, loc.lat - radius, loc.lat + radius) {
                for k in 1..g.steps {
                    let lat = g.lat(i) + k as f64 * step + self.jitter(5, i, j, k, &g);
                    out.push(self.grid_pano(format!("v{i}_{j}_{k}"), GeoPoint::new(lat, g.lon(j))));
                }
            }
        }
        out
    }

    fn snap_to_grid(&self, p: &GeoPoint) -> Result<(usize, usize)> {
        let g = self.grid.ok_or_else(|| no_route("world has no streets"))?;
        let i = ((p.lat - g.south) / g.block).round().clamp(0.0, g.rows as f64) as usize;
        let j = ((p.lon - g.west) / g.block).round().clamp(0.0, g.cols as f64) as usize;
        if degree_distance(p, &g.intersection(i, j)) > g.block {
            return Err(no_route("stop is off the street grid"));
        }
        Ok((i, j))
    }

    /// Renders the view, independent of quota accounting.
    pub fn render(&self, request: &ImageRequest) -> Result<ImageBlob> {
        use camera::*;
        let (w, h) = (request.width, request.height);
        if w == 0 || h == 0 {
            return Err(Error::BadImage(format!("cannot render a {w}x{h} image")));
        }
        let pose = request.pose;
        let horizon = h as f64 / 2.0;
        let focal = (w as f64 / 2.0) / (request.fov.to_radians() / 2.0).tan();
        let cam_height = NEAR * (h as f64 - horizon) / focal;

        // Crosswalks in view, as (forward, lateral) ground offsets.
        let visible: Vec<(f64, f64)> = self
            .index
            .near(&self.sites, &pose.position, FAR)
            .filter_map(|s| {
                let d = degree_distance(&pose.position, s);
                if !(d > NEAR && d < FAR) {
                    return None;
                }
                let b = bearing(&pose.position, s).ok()?;
                if angular_diff(b, pose.heading) > request.fov / 2.0 {
                    return None;
                }
                let rel = (b - pose.heading).to_radians();
                Some((d * rel.cos(), d * rel.sin()))
            })
            .collect();

        let shade = (hash(self.spec.seed, &[6, pose.position.lat.to_bits(), pose.position.lon.to_bits()])
            % SHADE_RANGE) as u8;
        let sky = Rgb(SKY.map(|c| c + shade));
        let road = Rgb(ROAD.map(|c| c + shade));
        let paint = Rgb(PAINT);
        let mut img = RgbImage::from_pixel(w, h, sky);
        for y in 0..h {
            let v = y as f64 + 0.5 - horizon;
            if v <= 0.0 {
                continue;
            }
            let forward = focal * cam_height / v;
            let rows: Vec<&(f64, f64)> = visible
                .iter()
                .filter(|(z, _)| (forward - z).abs() <= CROSSWALK_DEPTH / 2.0)
                .collect();
            for x in 0..w {
                let lateral = (x as f64 + 0.5 - w as f64 / 2.0) * forward / focal;
                let painted = rows.iter().any(|(_, lx)| {
                    let across = lateral - lx + CROSSWALK_HALF_WIDTH;
                    across >= 0.0
                        && across <= 2.0 * CROSSWALK_HALF_WIDTH
                        && (across / STRIPE).floor() as i64 % 2 == 0
                });
                img.put_pixel(x, y, if painted { paint } else { road });
            }
        }
        let mut out = Vec::new();
        PngEncoder::new_with_quality(Cursor::new(&mut out), CompressionType::Fast, FilterType::Sub)
            .write_image(img.as_raw(), w, h, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::BadImage(e.to_string()))?;
        Ok(ImageBlob(out))
    }
}

fn no_route(message: &str) -> Error {
    Error::Provider {
        service: Service::Directions.name(),
        message: format!("no route: {message}"),
        attempts: 1,
        retryable: false,
    }
}

impl SiteProvider for SimWorld {
    fn query_sites(&self, region: &Region) -> Result<Vec<GeoPoint>> {
        region.validate()?;
        self.ledger.charge(Service::Sites)?;
        Ok(self.sites.iter().filter(|p| region.contains(p)).copied().collect())
    }
}

impl DirectionsProvider for SimWorld {
    fn route(&self, origin: &GeoPoint, waypoints: &[GeoPoint], destination: &GeoPoint) -> Result<EncodedPolyline> {
        check_waypoints(waypoints)?;
        self.ledger.charge(Service::Directions)?;
        let g = self.grid.ok_or_else(|| no_route("world has no streets"))?;
        let mut stops = Vec::with_capacity(waypoints.len() + 2);
        stops.push(self.snap_to_grid(origin)?);
        for w in waypoints {
            stops.push(self.snap_to_grid(w)?);
        }
        stops.push(self.snap_to_grid(destination)?);

        // Corner-to-corner path: along the east-west street first, then north-south.
        let mut path = vec![stops[0]];
        for &(i, j) in &stops[1..] {
            let (ci, cj) = *path.last().unwrap();
            if ci != i && cj != j {
                path.push((ci, j));
            }
            if (ci, cj) != (i, j) {
                path.push((i, j));
            }
        }
        let points: Vec<GeoPoint> = path.into_iter().map(|(i, j)| g.intersection(i, j)).collect();
        Ok(encode(&points))
    }
}

impl PanoProvider for SimWorld {
    fn nearest_pano(&self, location: &GeoPoint) -> Result<Option<PanoMeta>> {
        self.ledger.charge(Service::Metadata)?;
        let radius = self.spec.snap_radius;
        let best = self
            .grid_panos_near(location, radius)
            .into_iter()
            .chain(self.extra_panos.iter().cloned())
            .map(|p| (degree_distance(&p.location, location), p))
            .filter(|(d, _)| *d <= radius)
            .min_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| a.pano_id.cmp(&b.pano_id)));
        Ok(best.map(|(_, p)| p))
    }
}

impl ImageryProvider for SimWorld {
    fn fetch_image(&self, request: &ImageRequest) -> Result<ImageBlob> {
        self.ledger.charge(Service::Imagery)?;
        self.render(request)
    }
}
