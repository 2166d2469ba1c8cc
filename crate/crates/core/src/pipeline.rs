//! Planning and harvesting: user regions to labeled, imaged samples.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotate::{assign_headings, auto_label, sample_id, Sample};
use crate::dataset::quantize;
use crate::error::{Error, Result};
use crate::geo::{CameraPose, GeoPoint, Region, SectorSpec};
use crate::polyline::decode;
use crate::providers::http::write_atomic;
use crate::providers::{
    batch_waypoint_requests, order_sites, ImageRequest, PanoMeta, Providers, SiteOrder, DEFAULT_SNAP_RADIUS,
};
use crate::region::{density_partition, split_region, PlannerConfig, SubRegion, TileFate};
use crate::sampler::{augment_path, dedup_points_against, snap_to_panoramas_against, DEFAULT_SPACING};
use crate::seed::derive_seed;

/// Every tunable distance and count of the harvest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub max_span: f64,
    pub min_sites: usize,
    pub max_sites: usize,
    pub max_depth: u32,
    pub spacing: f64,
    pub snap_radius: f64,
    pub half_angle: f64,
    pub min_distance: f64,
    pub max_distance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let planner = PlannerConfig::default();
        let sector = SectorSpec::default();
        Thresholds {
            max_span: planner.max_span,
            min_sites: planner.min_sites,
            max_sites: planner.max_sites,
            max_depth: planner.max_depth,
            spacing: DEFAULT_SPACING,
            snap_radius: DEFAULT_SNAP_RADIUS,
            half_angle: sector.half_angle,
            min_distance: sector.min_distance,
            max_distance: sector.max_distance,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_span", self.max_span),
            ("spacing", self.spacing),
            ("snap_radius", self.snap_radius),
            ("half_angle", self.half_angle),
            ("min_distance", self.min_distance),
            ("max_distance", self.max_distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("threshold {name} must be positive, got {v}")));
            }
        }
        if self.half_angle > 180.0 {
            return Err(Error::InvalidConfig(format!("half_angle {} exceeds 180", self.half_angle)));
        }
        if self.min_distance >= self.max_distance {
            return Err(Error::InvalidConfig(format!(
                "distance band is empty: {} >= {}",
                self.min_distance, self.max_distance
            )));
        }
        if self.min_sites == 0 || self.min_sites > self.max_sites {
            return Err(Error::InvalidConfig(format!(
                "site bounds must satisfy 0 < min <= max, got {}..{}",
                self.min_sites, self.max_sites
            )));
        }
        Ok(())
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            max_span: self.max_span,
            min_sites: self.min_sites,
            max_sites: self.max_sites,
            max_depth: self.max_depth,
        }
    }

    pub fn sector(&self) -> SectorSpec {
        SectorSpec {
            half_angle: self.half_angle,
            min_distance: self.min_distance,
            max_distance: self.max_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRegion {
    pub name: String,
    pub bounds: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSummary {
    pub id: String,
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
    pub depth: u32,
    /// Sites inside the tile; `None` when unknown in a dry run.
    pub sites: Option<usize>,
    pub fate: String,
}

impl TileSummary {
    fn new(tile: &SubRegion, sites: Option<usize>, fate: &str) -> Self {
        TileSummary {
            id: tile.id.clone(),
            south: tile.bounds.south(),
            west: tile.bounds.west(),
            north: tile.bounds.north(),
            east: tile.bounds.east(),
            depth: tile.depth,
            sites,
            fate: fate.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPlan {
    pub name: String,
    /// Tiles of at most `max_span` per side covering the region.
    pub grid_tiles: Vec<TileSummary>,
    /// Leaves of the density partition.
    pub leaves: Vec<TileSummary>,
    /// Site queries a dry run could not answer from cache.
    pub pending_site_queries: usize,
    /// Directions requests needed for the kept tiles.
    pub route_requests: usize,
}

impl RegionPlan {
    pub fn kept(&self) -> impl Iterator<Item = &TileSummary> {
        self.leaves.iter().filter(|t| t.fate == "kept")
    }
}

struct KeptTile {
    tile: SubRegion,
    sites: Vec<GeoPoint>,
}

struct RegionSurvey {
    plan: RegionPlan,
    kept: Vec<KeptTile>,
    /// Every site seen in the region, sorted by latitude, for labeling.
    sites: Vec<GeoPoint>,
}

fn fate_name(f: TileFate) -> &'static str {
    match f {
        TileFate::Kept => "kept",
        TileFate::Discarded => "discarded",
        TileFate::DepthCapped => "depth-capped",
    }
}

/// One site query per grid tile; quadrant counts are derived from its answer.
fn survey(providers: &Providers, region: &NamedRegion, t: &Thresholds, dry_run: bool) -> Result<RegionSurvey> {
    let planner = t.planner();
    let grid = split_region(&region.name, &region.bounds, t.max_span)?;
    let mut plan = RegionPlan {
        name: region.name.clone(),
        grid_tiles: Vec::new(),
        leaves: Vec::new(),
        pending_site_queries: 0,
        route_requests: 0,
    };
    let mut kept = Vec::new();
    let mut all_sites = Vec::new();
    for tile in grid {
        let sites = match providers.sites.query_sites(&tile.bounds) {
            Ok(s) => s,
            Err(e) if dry_run => {
                log::info!("dry run: sites for {} unavailable ({e})", tile.id);
                plan.pending_site_queries += 1;
                plan.grid_tiles.push(TileSummary::new(&tile, None, "pending"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let sites: Vec<GeoPoint> = sites.into_iter().filter(|p| tile.contains(p)).collect();
        plan.grid_tiles.push(TileSummary::new(&tile, Some(sites.len()), "surveyed"));
        let partition = density_partition(&tile, &planner, &|sub: &SubRegion| Ok(sub.count_in(&sites)))?;
        for leaf in partition.leaves {
            plan.leaves.push(TileSummary::new(&leaf.tile, Some(leaf.count), fate_name(leaf.fate)));
            if leaf.fate == TileFate::Kept {
                let inside: Vec<GeoPoint> = sites.iter().filter(|p| leaf.tile.contains(p)).copied().collect();
                if inside.len() >= 2 {
                    plan.route_requests += (inside.len() - 1).div_ceil(crate::providers::MAX_WAYPOINTS + 1);
                }
                kept.push(KeptTile {
                    tile: leaf.tile,
                    sites: inside,
                });
            }
        }
        all_sites.extend(sites);
    }
    all_sites.sort_by(|a, b| a.lat.total_cmp(&b.lat).then(a.lon.total_cmp(&b.lon)));
    Ok(RegionSurvey {
        plan,
        kept,
        sites: all_sites,
    })
}

/// Tiles every region and keeps the sub-regions dense enough to harvest.
pub fn plan(providers: &Providers, regions: &[NamedRegion], t: &Thresholds, dry_run: bool) -> Result<Vec<RegionPlan>> {
    t.validate()?;
    regions.iter().map(|r| Ok(survey(providers, r, t, dry_run)?.plan)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestOptions {
    pub thresholds: Thresholds,
    pub seed: u64,
    /// Visit sites in shuffled rather than sorted order.
    pub shuffle_sites: bool,
}

impl Default for HarvestOptions {
    fn default() -> Self {
        HarvestOptions {
            thresholds: Thresholds::default(),
            seed: 0,
            shuffle_sites: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarvestCounts {
    pub regions: usize,
    pub tiles_kept: usize,
    pub tiles_discarded: usize,
    pub tiles_depth_capped: usize,
    pub sites: usize,
    pub route_requests: usize,
    pub route_points: usize,
    pub augmented_points: usize,
    pub duplicate_points: usize,
    pub no_pano: usize,
    pub duplicate_pano: usize,
    pub tiles_without_headings: usize,
    pub samples: usize,
    pub positives: usize,
    pub negatives: usize,
    pub images_fetched: usize,
    pub images_reused: usize,
}

/// Sites whose latitude is within `reach` of `p`.
fn nearby<'a>(sorted: &'a [GeoPoint], p: &GeoPoint, reach: f64) -> &'a [GeoPoint] {
    let lo = sorted.partition_point(|s| s.lat < p.lat - reach);
    let hi = sorted.partition_point(|s| s.lat <= p.lat + reach);
    &sorted[lo..hi]
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-' | '@') { c } else { '_' })
        .collect()
}

/// Samples for one route, labeled against `sites` and numbered from `frame`.
fn route_samples(
    region: &str,
    locations: &[crate::sampler::PanoLocation],
    sites: &[GeoPoint],
    sector: &SectorSpec,
    frame: &mut u64,
) -> Result<Vec<Sample>> {
    let poses = assign_headings(locations)?;
    let mut out = Vec::with_capacity(poses.len());
    for (pose, i) in poses {
        let position = GeoPoint::new(quantize(pose.position.lat), quantize(pose.position.lon));
        let heading = quantize(pose.heading);
        let pose = CameraPose {
            position,
            heading: if heading >= 360.0 { 0.0 } else { heading },
        };
        let meta = &locations[i].meta;
        let id = sample_id(&meta.pano_id, pose.heading);
        out.push(Sample {
            image_ref: format!("images/{}.png", file_stem(&id)),
            label: auto_label(&pose, nearby(sites, &position, sector.max_distance), sector),
            sample_id: id,
            pose,
            pano: PanoMeta {
                location: position,
                ..meta.clone()
            },
            region_id: region.to_string(),
            frame_index: Some(*frame),
        });
        *frame += 1;
    }
    Ok(out)
}

/// Runs the full acquisition for every region and writes images under
/// `out_dir/images`. Images already on disk are reused, so an interrupted
/// harvest can be resumed.
pub fn harvest(
    providers: &Providers,
    regions: &[NamedRegion],
    options: &HarvestOptions,
    pool: &ThreadPool,
    out_dir: &Path,
) -> Result<(Vec<Sample>, HarvestCounts)> {
    let t = &options.thresholds;
    t.validate()?;
    let sector = t.sector();
    let mut counts = HarvestCounts::default();
    let mut samples = Vec::new();
    let mut seen_points = HashSet::new();
    let mut seen_panos = HashSet::new();

    for region in regions {
        let survey = survey(providers, region, t, false)?;
        counts.regions += 1;
        counts.sites += survey.sites.len();
        for leaf in &survey.plan.leaves {
            match leaf.fate.as_str() {
                "kept" => counts.tiles_kept += 1,
                "discarded" => counts.tiles_discarded += 1,
                _ => counts.tiles_depth_capped += 1,
            }
        }
        let mut frame = 0u64;
        for KeptTile { tile, mut sites } in survey.kept {
            if sites.len() < 2 {
                continue;
            }
            let order = if options.shuffle_sites {
                SiteOrder::Shuffled(derive_seed(options.seed, &format!("site-order/{}", tile.id)))
            } else {
                SiteOrder::Sorted
            };
            order_sites(&mut sites, order);
            let requests = batch_waypoint_requests(&sites)?;
            counts.route_requests += requests.len();
            let polylines = pool.install(|| {
                requests
                    .par_iter()
                    .map(|r| providers.directions.route(&r.origin, &r.waypoints, &r.destination))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut path: Vec<GeoPoint> = Vec::new();
            for poly in &polylines {
                path.extend(decode(poly)?);
            }
            counts.route_points += path.len();
            if path.len() < 2 {
                continue;
            }
            let dense = augment_path(&path, t.spacing)?;
            counts.augmented_points += dense.len();
            let fresh = dedup_points_against(&dense, &mut seen_points);
            counts.duplicate_points += dense.len() - fresh.len();
            let snapped = snap_to_panoramas_against(&fresh, providers.panos.as_ref(), pool, &mut seen_panos)?;
            counts.no_pano += snapped.no_pano;
            counts.duplicate_pano += snapped.duplicate_pano;
            if snapped.locations.len() < 2 {
                counts.tiles_without_headings += 1;
                continue;
            }
            match route_samples(&region.name, &snapped.locations, &survey.sites, &sector, &mut frame) {
                Ok(s) => samples.extend(s),
                Err(Error::NoHeadingsDerivable) => counts.tiles_without_headings += 1,
                Err(e) => return Err(e),
            }
            // Leave a hole in the numbering so runs never join across tiles.
            frame += 1;
        }
    }

    let images = out_dir.join("images");
    std::fs::create_dir_all(&images)?;
    let fetched: Vec<bool> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let path = out_dir.join(&s.image_ref);
                if path.exists() {
                    return Ok(false);
                }
                let blob = providers.imagery.fetch_image(&ImageRequest::new(s.pose))?;
                write_atomic(&path, blob.bytes())?;
                Ok(true)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    counts.images_fetched = fetched.iter().filter(|&&f| f).count();
    counts.images_reused = fetched.len() - counts.images_fetched;
    counts.samples = samples.len();
    counts.positives = samples.iter().filter(|s| s.label.value.is_positive()).count();
    counts.negatives = counts.samples - counts.positives;
    Ok((samples, counts))
}

/// The parameters echoed into a manifest header.
pub fn generation_params(regions: &[NamedRegion], options: &HarvestOptions, provider: &str, extra: Value) -> Value {
    let regions: BTreeMap<&str, [f64; 4]> = regions
        .iter()
        .map(|r| (r.name.as_str(), [r.bounds.south(), r.bounds.west(), r.bounds.north(), r.bounds.east()]))
        .collect();
    json!({
        "provider": provider,
        "provider_config": extra,
        "regions": regions,
        "seed": options.seed,
        "shuffle_sites": options.shuffle_sites,
        "thresholds": options.thresholds,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::providers::sim::{SimWorld, SimWorldSpec};

    fn world(bounds: Region) -> Providers {
        let spec = SimWorldSpec {
            seed: 9,
            bounds,
            site_probability: 0.7,
            ..Default::default()
        };
        Providers::simulated(Arc::new(SimWorld::new(spec).unwrap()))
    }

    fn pool() -> ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap()
    }

    #[test]
    fn plan_reports_grid_tiles() {
        let bounds = Region::from_bounds(0.0, 0.0, 0.3, 0.6).unwrap();
        let spec = SimWorldSpec {
            bounds,
            block_size: 0.01,
            ..Default::default()
        };
        let p = Providers::simulated(Arc::new(SimWorld::new(spec).unwrap()));
        let r = NamedRegion {
            name: "big".into(),
            bounds,
        };
        let plans = plan(&p, &[r], &Thresholds::default(), false).unwrap();
        assert_eq!(plans[0].grid_tiles.len(), 6);
        assert!(plans[0].kept().all(|t| (50..=2000).contains(&t.sites.unwrap())));
    }

    #[test]
    fn small_harvest_is_consistent_and_deterministic() {
        let bounds = Region::from_bounds(0.0, 0.0, 0.005, 0.005).unwrap();
        let regions = [NamedRegion {
            name: "r".into(),
            bounds,
        }];
        let options = HarvestOptions {
            seed: 42,
            ..Default::default()
        };
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let (s, c) = harvest(&world(bounds), &regions, &options, &pool(), dir.path()).unwrap();
            for x in &s {
                assert!(dir.path().join(&x.image_ref).exists());
            }
            (s, c)
        };
        let (a, counts) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert!(counts.samples > 50, "{counts:?}");
        assert!(counts.positives > 0 && counts.negatives > 0);
        let panos: HashSet<_> = a.iter().map(|s| &s.pano.pano_id).collect();
        assert_eq!(panos.len(), a.len());
        let frames: Vec<u64> = a.iter().map(|s| s.frame_index.unwrap()).collect();
        assert!(frames.windows(2).all(|w| w[0] < w[1]));
    }
}
