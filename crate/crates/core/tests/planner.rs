use crosswalk_core::geo::{GeoPoint, Region};
use crosswalk_core::region::{density_partition, split_region, PlannerConfig, SubRegion, TileFate};
use crosswalk_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_region(rng: &mut ChaCha8Rng) -> Region {
    let s = rng.random_range(-60.0..60.0);
    let w = rng.random_range(-170.0..170.0);
    let h = rng.random_range(0.001..1.3);
    let wd = rng.random_range(0.001..1.3);
    Region::from_bounds(s, w, s + h, w + wd).unwrap()
}

/// Checks that `tiles` form an exact grid over `region`.
fn assert_exact_tiling(region: &Region, tiles: &[SubRegion]) {
    let rows = (region.height() / 0.25 - 1e-9).ceil().max(1.0) as usize;
    let cols = (region.width() / 0.25 - 1e-9).ceil().max(1.0) as usize;
    assert_eq!(tiles.len(), rows * cols);
    let mut lats: Vec<f64> = tiles.iter().flat_map(|t| [t.bounds.south(), t.bounds.north()]).collect();
    let mut lons: Vec<f64> = tiles.iter().flat_map(|t| [t.bounds.west(), t.bounds.east()]).collect();
    lats.sort_by(f64::total_cmp);
    lats.dedup();
    lons.sort_by(f64::total_cmp);
    lons.dedup();
    // Shared edges are bit-identical, so there are exactly rows+1 / cols+1 distinct lines.
    assert_eq!(lats.len(), rows + 1);
    assert_eq!(lons.len(), cols + 1);
    assert_eq!(lats[0], region.south());
    assert_eq!(*lats.last().unwrap(), region.north());
    assert_eq!(lons[0], region.west());
    assert_eq!(*lons.last().unwrap(), region.east());
    let mut cells = std::collections::HashSet::new();
    for t in tiles {
        assert!(t.bounds.width() <= 0.25 + 1e-12 && t.bounds.height() <= 0.25 + 1e-12);
        let i = lats.iter().position(|&x| x == t.bounds.south()).unwrap();
        let j = lons.iter().position(|&x| x == t.bounds.west()).unwrap();
        assert_eq!(t.bounds.north(), lats[i + 1]);
        assert_eq!(t.bounds.east(), lons[j + 1]);
        assert!(cells.insert((i, j)), "cell covered twice");
    }
    // Equal dimensions up to float noise.
    let (h0, w0) = (tiles[0].bounds.height(), tiles[0].bounds.width());
    for t in tiles {
        assert!((t.bounds.height() - h0).abs() < 1e-9 && (t.bounds.width() - w0).abs() < 1e-9);
    }
}

#[test]
fn split_region_tiles_exactly_on_random_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in 0..1_000 {
        let region = random_region(&mut rng);
        let tiles = split_region(&format!("r{n}"), &region, 0.25).unwrap();
        assert_exact_tiling(&region, &tiles);
        // Every point of the region lands in exactly one tile, including edges and corners.
        for _ in 0..20 {
            let p = GeoPoint::new(
                rng.random_range(region.south()..=region.north()),
                rng.random_range(region.west()..=region.east()),
            );
            assert_eq!(tiles.iter().filter(|t| t.contains(&p)).count(), 1);
        }
        for t in &tiles {
            for corner in [t.bounds.bottom_left, t.bounds.top_right] {
                assert_eq!(tiles.iter().filter(|u| u.contains(&corner)).count(), 1);
            }
        }
    }
}

#[test]
fn six_tiles_for_the_reference_region() {
    let region = Region::from_bounds(10.0, 20.0, 10.3, 20.6).unwrap();
    let tiles = split_region("x", &region, 0.25).unwrap();
    assert_eq!(tiles.len(), 6);
    for t in &tiles {
        assert!((t.bounds.width() - 0.2).abs() < 1e-12);
        assert!((t.bounds.height() - 0.15).abs() < 1e-12);
    }
}

fn uniform_cloud(rng: &mut ChaCha8Rng, r: &Region, n: usize) -> Vec<GeoPoint> {
    (0..n)
        .map(|_| GeoPoint::new(rng.random_range(r.south()..r.north()), rng.random_range(r.west()..r.east())))
        .collect()
}

fn counter(sites: &[GeoPoint]) -> impl Fn(&SubRegion) -> Result<usize> + Sync + '_ {
    move |t: &SubRegion| Ok(t.count_in(sites))
}

#[test]
fn uniform_clouds_keep_only_in_band_tiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let config = PlannerConfig::default();
    for &n in &[10usize, 49, 50, 700, 2000, 2001, 5000, 12_000, 32_000] {
        let region = Region::from_bounds(-23.0, -46.0, -22.8, -45.85).unwrap();
        let root = SubRegion::root("u", region);
        let sites = uniform_cloud(&mut rng, &region, n);
        let part = density_partition(&root, &config, &counter(&sites)).unwrap();
        assert_eq!(part.depth_capped(), 0, "n = {n}");
        let mut kept_total = 0;
        for leaf in &part.leaves {
            // Reported counts are the true counts.
            assert_eq!(leaf.count, leaf.tile.count_in(&sites));
            if leaf.fate == TileFate::Kept {
                assert!((50..=2000).contains(&leaf.count), "n = {n}: kept {}", leaf.count);
                kept_total += leaf.count;
            } else {
                assert!(leaf.count < 50);
            }
        }
        assert!(kept_total <= n);
        // Leaves partition the root: each site in exactly one leaf.
        for s in sites.iter().take(500) {
            assert_eq!(part.leaves.iter().filter(|l| l.tile.contains(s)).count(), 1);
        }
    }
}

#[test]
fn example_2001_sites_match_direct_quadrant_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let region = Region::from_bounds(0.0, 0.0, 0.2, 0.2).unwrap();
    let root = SubRegion::root("q", region);
    let sites = uniform_cloud(&mut rng, &region, 2001);
    // Direct quadrant tally by comparing against the midlines.
    let mut direct = [0usize; 4];
    for s in &sites {
        let q = (s.lat >= 0.1) as usize * 2 + (s.lon >= 0.1) as usize;
        direct[q] += 1;
    }
    let part = density_partition(&root, &PlannerConfig::default(), &counter(&sites)).unwrap();
    assert_eq!(part.leaves.len(), 4);
    for (leaf, want) in part.leaves.iter().zip(direct) {
        assert_eq!(leaf.count, want);
        assert_eq!(leaf.fate, TileFate::Kept);
        assert_eq!(leaf.tile.depth, 1);
    }
}

proptest! {
    #[test]
    fn kept_sites_never_exceed_input(n in 0usize..6000, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let region = Region::from_bounds(1.0, 1.0, 1.1, 1.2).unwrap();
        let sites = uniform_cloud(&mut rng, &region, n);
        let part = density_partition(&SubRegion::root("p", region), &PlannerConfig::default(), &counter(&sites)).unwrap();
        let total: usize = part.leaves.iter().map(|l| l.count).sum();
        prop_assert_eq!(total, n);
        for l in part.kept() {
            prop_assert!((50..=2000).contains(&l.count) || l.tile.depth == 12);
        }
    }
}
