mod support;

use std::sync::Arc;

use crosswalk_core::annotate::{apply_overrides, auto_label, OverrideSet};
use crosswalk_core::geo::{degree_distance, Region};
use crosswalk_core::pipeline::{harvest, HarvestOptions, NamedRegion};
use crosswalk_core::{LabelSource, LabelValue, Providers, SectorSpec};

#[test]
fn auto_labels_match_brute_force_on_sim_worlds() {
    let pool = support::pool(4);
    let spec = SectorSpec::default();
    let mut total = 0;
    for seed in [1u64, 2, 3] {
        let bounds = Region::from_bounds(-20.0, -40.0, -19.985, -39.985).unwrap();
        let world = Arc::new(support::sim_world(seed, bounds, 0.5));
        let poses = support::sim_poses(&world, &pool);
        for pose in &poses {
            let got = auto_label(pose, world.sites(), &spec).value.is_positive();
            assert_eq!(Some(got), support::label_oracle(pose, world.sites()), "world {seed}, {pose:?}");
            let nearest = world
                .sites()
                .iter()
                .map(|s| degree_distance(s, &pose.position))
                .fold(f64::INFINITY, f64::min);
            if nearest > 2.5e-4 {
                assert!(!got);
            }
        }
        total += poses.len();
    }
    assert!(total >= 5_000, "only {total} poses");
}

#[test]
fn harvested_labels_match_brute_force_and_overrides_are_idempotent() {
    let bounds = Region::from_bounds(0.0, 0.0, 0.003, 0.003).unwrap();
    let world = Arc::new(support::sim_world(8, bounds, 0.6));
    let providers = Providers::simulated(world.clone());
    let regions = [NamedRegion {
        name: "h".into(),
        bounds,
    }];
    let options = HarvestOptions {
        seed: 3,
        thresholds: crosswalk_core::pipeline::Thresholds {
            min_sites: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (samples, counts) = harvest(&providers, &regions, &options, &support::pool(2), dir.path()).unwrap();
    assert_eq!(samples.len(), counts.samples);
    assert!(counts.positives > 0 && counts.negatives > 0);
    for s in &samples {
        let want = support::label_oracle(&s.pose, world.sites()).unwrap();
        assert_eq!(s.label.value.is_positive(), want, "{}", s.sample_id);
    }

    let mut set = OverrideSet::default();
    for s in samples.iter().filter(|s| s.label.value.is_positive()).take(5) {
        set.0.insert(s.sample_id.clone(), LabelValue::Negative);
    }
    let once = apply_overrides(&samples, &set).unwrap();
    let twice = apply_overrides(&once, &set).unwrap();
    assert_eq!(once, twice);
    assert_eq!(once.iter().filter(|s| s.label.source == LabelSource::Manual).count(), set.len());
}
