mod support;

use crosswalk_core::geo::GeoPoint;
use crosswalk_core::polyline::{decode, decode_str, encode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_point() -> impl Strategy<Value = GeoPoint> {
    (-9_000_000i64..=9_000_000, -18_000_000i64..=18_000_000)
        .prop_map(|(a, b)| GeoPoint::new(a as f64 / 1e5, b as f64 / 1e5))
}

fn random_path(rng: &mut ChaCha8Rng) -> Vec<GeoPoint> {
    let n = rng.random_range(0..=200);
    let mut lat = rng.random_range(-8_000_000i64..8_000_000);
    let mut lon = rng.random_range(-17_000_000i64..17_000_000);
    (0..n)
        .map(|_| {
            // Mostly short hops, sometimes long jumps.
            let reach = if rng.random_bool(0.1) { 500_000 } else { 50 };
            lat = (lat + rng.random_range(-reach..=reach)).clamp(-9_000_000, 9_000_000);
            lon = (lon + rng.random_range(-reach..=reach)).clamp(-18_000_000, 18_000_000);
            GeoPoint::new(lat as f64 / 1e5, lon as f64 / 1e5)
        })
        .collect()
}

#[test]
fn reference_vectors() {
    assert_eq!(decode_str("_p~iF~ps|U").unwrap(), vec![GeoPoint::new(38.5, -120.2)]);
    assert_eq!(encode(&[GeoPoint::new(38.5, -120.2)]).as_str(), "_p~iF~ps|U");
    assert_eq!(encode(&[GeoPoint::new(0.0, 0.0)]).as_str(), "??");
    assert_eq!(decode_str("??").unwrap(), vec![GeoPoint::new(0.0, 0.0)]);
    assert_eq!(encode(&[]).as_str(), "");
    assert!(decode_str("").unwrap().is_empty());
    // The independent encoder agrees on the hand-stepped vectors.
    assert_eq!(support::reference_encode(&[(38.5, -120.2)]), "_p~iF~ps|U");
    assert_eq!(support::reference_encode(&[(0.0, 0.0)]), "??");
}

#[test]
fn ten_thousand_random_roundtrips() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let pts = random_path(&mut rng);
        let text = encode(&pts);
        assert!(text.as_str().bytes().all(|b| (63..=126).contains(&b)));
        assert_eq!(decode(&text).unwrap(), pts);
    }
}

#[test]
fn encoder_matches_reference_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..2_000 {
        let pts = random_path(&mut rng);
        let raw: Vec<(f64, f64)> = pts.iter().map(|p| (p.lat, p.lon)).collect();
        let canonical = support::reference_encode(&raw);
        assert_eq!(encode(&pts).as_str(), canonical);
        let back = decode_str(&canonical).unwrap();
        assert_eq!(encode(&back).as_str(), canonical);
    }
}

proptest! {
    #[test]
    fn roundtrip_is_exact(pts in prop::collection::vec(grid_point(), 0..60)) {
        prop_assert_eq!(decode(&encode(&pts)).unwrap(), pts);
    }

    #[test]
    fn decoding_is_prefix_monotone(pts in prop::collection::vec(grid_point(), 0..40), k in 0usize..40) {
        let k = k.min(pts.len());
        let prefix = &pts[..k];
        prop_assert_eq!(decode(&encode(prefix)).unwrap(), prefix.to_vec());
        prop_assert!(encode(&pts).as_str().starts_with(encode(prefix).as_str()));
    }

    #[test]
    fn off_grid_points_snap_to_nearest(lat in -89.0f64..89.0, lon in -179.0f64..179.0) {
        let got = decode(&encode(&[GeoPoint::new(lat, lon)])).unwrap()[0];
        prop_assert!((got.lat - lat).abs() <= 0.5e-5 + 1e-12);
        prop_assert!((got.lon - lon).abs() <= 0.5e-5 + 1e-12);
    }

    #[test]
    fn truncation_is_rejected(pts in prop::collection::vec(grid_point(), 1..10), cut in 1usize..4) {
        let text = encode(&pts).into_string();
        let short = &text[..text.len().saturating_sub(cut)];
        // Either a clean prefix of whole values or an error, never garbage.
        if let Ok(p) = decode_str(short) {
            prop_assert!(p.len() < pts.len());
            prop_assert_eq!(&pts[..p.len()], &p[..]);
        }
    }
}
