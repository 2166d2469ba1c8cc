mod support;

use crosswalk_core::baseline::{
    features, fit, objective, preprocess_infer, preprocess_train, train_baseline, BaselineModel, PreprocessSpec,
    TrainConfig, FEATURES, WEIGHTS,
};
use crosswalk_core::Sample;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let xs: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
    let h = 1e-5;
    for _ in 0..100 {
        let w: Vec<f64> = (0..WEIGHTS).map(|_| rng.random_range(-0.05..0.05)).collect();
        let (_, g) = objective(&w, &xs, &ys, 1e-3);
        // A random coordinate plus the bias each time.
        for k in [rng.random_range(0..FEATURES), FEATURES] {
            let mut up = w.clone();
            let mut down = w.clone();
            up[k] += h;
            down[k] -= h;
            let numeric = (objective(&up, &xs, &ys, 1e-3).0 - objective(&down, &xs, &ys, 1e-3).0) / (2.0 * h);
            let rel = (numeric - g[k]).abs() / numeric.abs().max(g[k].abs()).max(1e-8);
            assert!(rel <= 1e-4, "coord {k}: analytic {} numeric {numeric}", g[k]);
        }
    }
}

#[test]
fn mirror_frequency_is_balanced() {
    let spec = PreprocessSpec::default();
    let mirrored = (0..10_000u64).filter(|&s| spec.draw(s).mirror).count();
    let f = mirrored as f64 / 10_000.0;
    assert!((0.48..=0.52).contains(&f), "{f}");
}

proptest! {
    #[test]
    fn probabilities_are_normalized(
        w in prop::collection::vec(-3.0f64..3.0, WEIGHTS),
        x in prop::collection::vec(-2.0f64..2.0, FEATURES),
    ) {
        let model = BaselineModel { weights: w, config: TrainConfig::default() };
        let (p, q) = model.probabilities(&x);
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q));
        prop_assert!((p + q - 1.0).abs() <= 1e-9);
    }
}

/// Share of near-white pixels in the inference crop.
fn paint_share(bytes: &[u8]) -> f64 {
    let t = preprocess_infer(bytes).unwrap();
    let bright = t.data.chunks(3).filter(|p| p.iter().all(|&c| c > 0.9)).count();
    bright as f64 / (t.width * t.height) as f64
}

#[test]
fn sim_classes_are_separable_and_the_baseline_learns_them() {
    let dir = tempfile::tempdir().unwrap();
    let all = support::harvest_sim(17, 0.006, dir.path());
    let pos: Vec<&Sample> = all.iter().filter(|s| s.label.value.is_positive()).take(100).collect();
    let neg: Vec<&Sample> = all.iter().filter(|s| !s.label.value.is_positive()).take(200).collect();
    assert_eq!((pos.len(), neg.len()), (100, 200));
    let set: Vec<Sample> = pos.iter().chain(&neg).map(|s| (*s).clone()).collect();

    let read = |s: &Sample| std::fs::read(dir.path().join(&s.image_ref)).unwrap();
    let values: Vec<f64> = set.iter().map(|s| paint_share(&read(s))).collect();
    let labels: Vec<bool> = set.iter().map(|s| s.label.value.is_positive()).collect();
    let oracle = support::best_threshold_accuracy(&values, &labels);
    assert!(oracle >= 0.95, "threshold oracle {oracle}");

    let config = TrainConfig { seed: 5, ..Default::default() };
    let (model, report) = train_baseline(&set, dir.path(), &config).unwrap();
    assert!(report.final_loss < report.initial_loss);
    assert!(report.train_accuracy >= 0.95, "{report:?}");
    let (again, _) = train_baseline(&set, dir.path(), &config).unwrap();
    assert_eq!(model.weights, again.weights);
    let (p, n) = model.predict(&read(pos[0])).unwrap();
    assert!(p > 0.5 && (p + n - 1.0).abs() < 1e-9);

    // The training tensor depends only on the image and the seed.
    let bytes = read(neg[0]);
    assert_eq!(preprocess_train(&bytes, 9).unwrap(), preprocess_train(&bytes, 9).unwrap());
    let f = features(&preprocess_train(&bytes, 9).unwrap()).unwrap();
    assert_eq!(f.len(), FEATURES);
}

#[test]
fn fit_rejects_one_class() {
    let xs = vec![vec![0.0; FEATURES]; 3];
    assert!(fit(&xs, &[true, true, true], &TrainConfig::default()).is_err());
}
