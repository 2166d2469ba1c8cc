//! Splitting regions of interest into query-sized tiles and pruning tiles by
//! crosswalk density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Region};

/// Planner thresholds. Defaults reproduce the Overpass size cap and the
/// empirically chosen 50..=2000 density band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub max_span: f64,
    pub min_sites: usize,
    pub max_sites: usize,
    pub max_depth: u32,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_span: 0.25,
            min_sites: 50,
            max_sites: 2000,
            max_depth: 12,
        }
    }
}

/// A tile of a user region.
///
/// Membership is half-open, `[min, max)`, on both axes, except that an edge
/// coinciding with the far edge of the original region is closed. That way
/// every site inside the region lands in exactly one tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubRegion {
    pub id: String,
    pub bounds: Region,
    pub parent_id: String,
    pub depth: u32,
    pub closed_north: bool,
    pub closed_east: bool,
}

impl SubRegion {
    /// The whole region as a single root tile.
    pub fn root(parent_id: &str, bounds: Region) -> Self {
        SubRegion {
            id: format!("{parent_id}/0.0"),
            bounds,
            parent_id: parent_id.to_string(),
            depth: 0,
            closed_north: true,
            closed_east: true,
        }
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        let b = &self.bounds;
        let lat_ok = p.lat >= b.south() && (p.lat < b.north() || (self.closed_north && p.lat == b.north()));
        let lon_ok = p.lon >= b.west() && (p.lon < b.east() || (self.closed_east && p.lon == b.east()));
        lat_ok && lon_ok
    }

    pub fn count_in(&self, sites: &[GeoPoint]) -> usize {
        sites.iter().filter(|p| self.contains(p)).count()
    }

    /// Equal 2x2 split in south-west, south-east, north-west, north-east order.
    pub fn quadrants(&self) -> [SubRegion; 4] {
        let b = &self.bounds;
        let mid_lat = b.south() + b.height() / 2.0;
        let mid_lon = b.west() + b.width() / 2.0;
        let make = |q: usize, s: f64, w: f64, n: f64, e: f64, cn: bool, ce: bool| SubRegion {
            id: format!("{}.q{q}", self.id),
            bounds: Region {
                bottom_left: GeoPoint::new(s, w),
                top_right: GeoPoint::new(n, e),
            },
            parent_id: self.parent_id.clone(),
            depth: self.depth + 1,
            closed_north: cn,
            closed_east: ce,
        };
        [
            make(0, b.south(), b.west(), mid_lat, mid_lon, false, false),
            make(1, b.south(), mid_lon, mid_lat, b.east(), false, self.closed_east),
            make(2, mid_lat, b.west(), b.north(), mid_lon, self.closed_north, false),
            make(3, mid_lat, mid_lon, b.north(), b.east(), self.closed_north, self.closed_east),
        ]
    }
}

/// Number of equal cells needed so that each is at most `cap` wide.
fn cells_needed(extent: f64, cap: f64) -> usize {
    // Absorb float noise such as 0.5000000000000001 / 0.25.
    ((extent / cap) - 1e-9).ceil().max(1.0) as usize
}

/// Tiles `region` into a grid of equal cells no larger than `max_span` per side.
pub fn split_region(parent_id: &str, region: &Region, max_span: f64) -> Result<Vec<SubRegion>> {
    region.validate()?;
    if !(max_span > 0.0) {
        return Err(Error::InvalidRegion(format!("max span must be positive, got {max_span}")));
    }
    let cols = cells_needed(region.width(), max_span);
    let rows = cells_needed(region.height(), max_span);
    if rows == 1 && cols == 1 {
        return Ok(vec![SubRegion::root(parent_id, *region)]);
    }
    let lat_at = |i: usize| {
        if i == rows {
            region.north()
        } else {
            region.south() + region.height() * i as f64 / rows as f64
        }
    };
    let lon_at = |j: usize| {
        if j == cols {
            region.east()
        } else {
            region.west() + region.width() * j as f64 / cols as f64
        }
    };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(SubRegion {
                id: format!("{parent_id}/{i}.{j}"),
                bounds: Region {
                    bottom_left: GeoPoint::new(lat_at(i), lon_at(j)),
                    top_right: GeoPoint::new(lat_at(i + 1), lon_at(j + 1)),
                },
                parent_id: parent_id.to_string(),
                depth: 0,
                closed_north: i + 1 == rows,
                closed_east: j + 1 == cols,
            });
        }
    }
    Ok(out)
}

/// Why a tile ended up where it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileFate {
    Kept,
    Discarded,
    /// Still over the density cap at the recursion limit; kept anyway.
    DepthCapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileOutcome {
    pub tile: SubRegion,
    pub count: usize,
    pub fate: TileFate,
}

/// Result of density filtering one tile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Every leaf tile visited, in quadrant order.
    pub leaves: Vec<TileOutcome>,
}

impl Partition {
    pub fn kept(&self) -> impl Iterator<Item = &TileOutcome> {
        self.leaves.iter().filter(|t| t.fate != TileFate::Discarded)
    }

    pub fn kept_tiles(&self) -> Vec<SubRegion> {
        self.kept().map(|t| t.tile.clone()).collect()
    }

    pub fn depth_capped(&self) -> usize {
        self.leaves.iter().filter(|t| t.fate == TileFate::DepthCapped).count()
    }

    pub fn discarded(&self) -> usize {
        self.leaves.iter().filter(|t| t.fate == TileFate::Discarded).count()
    }
}

/// Recursively keeps tiles whose site count lies in `[min_sites, max_sites]`,
/// discards sparser ones and splits denser ones into quadrants.
///
/// `count` may be called concurrently for sibling quadrants.
pub fn density_partition<F>(sub: &SubRegion, config: &PlannerConfig, count: &F) -> Result<Partition>
where
    F: Fn(&SubRegion) -> Result<usize> + Sync,
{
    let n = count(sub)?;
    partition_with_count(sub, n, config, count)
}

fn partition_with_count<F>(sub: &SubRegion, n: usize, config: &PlannerConfig, count: &F) -> Result<Partition>
where
    F: Fn(&SubRegion) -> Result<usize> + Sync,
{
    let leaf = |fate| Partition {
        leaves: vec![TileOutcome {
            tile: sub.clone(),
            count: n,
            fate,
        }],
    };
    if n < config.min_sites {
        return Ok(leaf(TileFate::Discarded));
    }
    if n <= config.max_sites {
        return Ok(leaf(TileFate::Kept));
    }
    if sub.depth >= config.max_depth {
        log::warn!(
            "tile {} still holds {n} sites at depth {}; keeping it unsplit",
            sub.id,
            sub.depth
        );
        return Ok(leaf(TileFate::DepthCapped));
    }
    let parts = sub
        .quadrants()
        .into_par_iter()
        .map(|q| {
            let qn = count(&q)?;
            partition_with_count(&q, qn, config, count)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition {
        leaves: parts.into_iter().flat_map(|p| p.leaves).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region(h: f64, w: f64) -> Region {
        Region::from_bounds(-23.0, -46.0, -23.0 + h, -46.0 + w).unwrap()
    }

    #[test]
    fn compliant_region_is_returned_whole() {
        let r = region(0.2, 0.2);
        let tiles = split_region("a", &r, 0.25).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].bounds, r);
        let r = region(0.25, 0.25);
        assert_eq!(split_region("a", &r, 0.25).unwrap().len(), 1);
    }

    #[test]
    fn oversize_region_tiles_into_equal_cells() {
        // 0.3 tall, 0.6 wide: 2 rows x 3 columns of 0.15 x 0.2.
        let r = region(0.3, 0.6);
        let tiles = split_region("a", &r, 0.25).unwrap();
        assert_eq!(tiles.len(), 6);
        for t in &tiles {
            assert!((t.bounds.width() - 0.2).abs() < 1e-12);
            assert!((t.bounds.height() - 0.15).abs() < 1e-12);
        }
        assert_eq!(tiles.last().unwrap().bounds.top_right, r.top_right);
    }

    #[test]
    fn degenerate_region_is_rejected() {
        let r = Region {
            bottom_left: GeoPoint::new(0.0, 0.0),
            top_right: GeoPoint::new(0.0, 1.0),
        };
        assert!(matches!(split_region("a", &r, 0.25), Err(Error::InvalidRegion(_))));
    }

    #[test]
    fn shared_edges_belong_to_one_tile() {
        let r = region(0.5, 0.5);
        let tiles = split_region("a", &r, 0.25).unwrap();
        let probes = [
            GeoPoint::new(-22.75, -45.75),
            GeoPoint::new(-22.5, -45.5),
            GeoPoint::new(-23.0, -46.0),
            GeoPoint::new(-22.75, -45.5),
        ];
        for p in probes {
            assert_eq!(tiles.iter().filter(|t| t.contains(&p)).count(), 1, "{p:?}");
        }
    }

    fn sub() -> SubRegion {
        SubRegion::root("a", region(0.2, 0.2))
    }

    fn constant(n: usize) -> impl Fn(&SubRegion) -> Result<usize> + Sync {
        move |_| Ok(n)
    }

    #[test]
    fn sparse_tile_is_discarded() {
        let p = density_partition(&sub(), &PlannerConfig::default(), &constant(49)).unwrap();
        assert!(p.kept_tiles().is_empty());
        assert_eq!(p.discarded(), 1);
    }

    #[test]
    fn band_edges_are_kept() {
        for n in [50, 2000] {
            let p = density_partition(&sub(), &PlannerConfig::default(), &constant(n)).unwrap();
            assert_eq!(p.kept_tiles(), vec![sub()]);
        }
    }

    #[test]
    fn dense_uniform_tile_splits_into_four() {
        let s = sub();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = s.bounds;
        let sites: Vec<GeoPoint> = (0..2001)
            .map(|_| {
                GeoPoint::new(
                    rng.random_range(b.south()..b.north()),
                    rng.random_range(b.west()..b.east()),
                )
            })
            .collect();
        // Oracle: direct per-quadrant tally with explicit midpoint comparisons.
        let (mid_lat, mid_lon) = (b.south() + 0.1, b.west() + 0.1);
        let mut tally = [0usize; 4];
        for p in &sites {
            let q = (p.lat >= mid_lat) as usize * 2 + (p.lon >= mid_lon) as usize;
            tally[q] += 1;
        }
        let part = density_partition(&s, &PlannerConfig::default(), &|t: &SubRegion| Ok(t.count_in(&sites))).unwrap();
        let kept: Vec<_> = part.kept().collect();
        assert_eq!(kept.len(), 4);
        for (k, t) in kept.iter().zip(tally) {
            assert_eq!(k.count, t);
            assert!(k.count > 400 && k.count < 600);
        }
    }

    #[test]
    fn point_mass_hits_depth_cap() {
        let config = PlannerConfig {
            max_depth: 3,
            ..Default::default()
        };
        let s = sub();
        let sites = vec![s.bounds.bottom_left; 3000];
        let part = density_partition(&s, &config, &|t: &SubRegion| Ok(t.count_in(&sites))).unwrap();
        assert_eq!(part.depth_capped(), 1);
        assert_eq!(part.kept_tiles().len(), 1);
        assert_eq!(part.kept_tiles()[0].depth, 3);
    }

    #[test]
    fn count_errors_propagate() {
        let failing = |_: &SubRegion| -> Result<usize> {
            Err(Error::Provider {
                service: "sites",
                message: "boom".into(),
                attempts: 3,
                retryable: true,
            })
        };
        assert!(matches!(
            density_partition(&sub(), &PlannerConfig::default(), &failing),
            Err(Error::Provider { .. })
        ));
    }
}
