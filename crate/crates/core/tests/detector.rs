mod common;

use common::{random_dataset, separable_dataset, ROWS};
use floodguard::autodiff::Tensor;
use floodguard::detector::{Detector, DetectorConfig};
use floodguard::eval::compute_metrics;
use floodguard::flow::NUM_FEATURES;
use proptest::prelude::*;

fn quick(epochs: usize, seed: u64) -> DetectorConfig {
    DetectorConfig { epochs, seed, filters: 16, ..DetectorConfig::default() }
}

#[test]
fn separable_toy_data_is_learned_within_twenty_epochs() {
    let t = separable_dataset(150, 150, 1);
    let d = Detector::train(&t, quick(20, 2)).unwrap();
    let (_, labels) = d.classify(&t).unwrap();
    let m = compute_metrics(&t.labels, &labels).unwrap();
    assert!(m.f1.unwrap() >= 0.99, "training F1 {:?}", m.f1);
    assert!(d.meta.epochs_run <= 20);
    assert!(!d.meta.history.is_empty());
    assert!(d.meta.history.iter().all(|h| h.train_loss.is_finite()));
}

#[test]
fn zero_epochs_return_the_initialisation() {
    let t = separable_dataset(20, 20, 3);
    let d = Detector::train(&t, quick(0, 4)).unwrap();
    let init = Detector::new(quick(0, 4), ROWS).unwrap();
    assert_eq!(d.params, init.params);
    assert_eq!(d.meta.epochs_run, 0);
}

#[test]
fn same_seed_same_parameters() {
    let t = separable_dataset(40, 40, 5);
    let a = Detector::train(&t, quick(3, 6)).unwrap();
    let b = Detector::train(&t, quick(3, 6)).unwrap();
    assert_eq!(a.params, b.params);
    let c = Detector::train(&t, quick(3, 7)).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn single_class_or_empty_data_is_rejected() {
    assert!(Detector::train(&random_dataset(10, 0, 1), quick(1, 0)).is_err());
    assert!(Detector::train(&random_dataset(0, 10, 1), quick(1, 0)).is_err());
    assert!(Detector::train(&random_dataset(0, 0, 1), quick(1, 0)).is_err());
    assert!(Detector::train(&random_dataset(5, 5, 1), DetectorConfig { kernel_rows: 11, ..quick(1, 0) }).is_err());
}

#[test]
fn all_zero_input_has_a_defined_score() {
    let d = Detector::new(quick(0, 1), ROWS).unwrap();
    let x = Tensor::zeros(&[3, ROWS * NUM_FEATURES]);
    let s = d.scores(&x).unwrap();
    assert_eq!(s.len(), 3);
    assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(s.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn threshold_tie_is_attack() {
    let d = Detector::new(DetectorConfig { threshold: 0.5, ..quick(0, 1) }, ROWS).unwrap();
    assert_eq!(d.label(0.5), 1);
    assert_eq!(d.label(0.4999), 0);
}

#[test]
fn wrong_shape_is_an_error() {
    let d = Detector::new(quick(0, 1), ROWS).unwrap();
    assert!(d.scores(&Tensor::zeros(&[2, ROWS * NUM_FEATURES - 1])).is_err());
    assert!(d.scores(&Tensor::zeros(&[ROWS * NUM_FEATURES])).is_err());
    let mut other = random_dataset(2, 2, 1);
    other.rows = 5;
    other.samples.iter_mut().for_each(|s| s.matrix.truncate(5 * NUM_FEATURES));
    assert!(d.score_dataset(&other).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let t = separable_dataset(30, 30, 8);
    let d = Detector::train(&t, quick(2, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.ckpt");
    d.save(&path).unwrap();
    let back = Detector::load(&path).unwrap();
    assert_eq!(back.params, d.params);
    assert_eq!(back.config, d.config);
    assert_eq!(back.meta, d.meta);
    assert_eq!(back.score_dataset(&t).unwrap(), d.score_dataset(&t).unwrap());
    assert!(Detector::load(dir.path().join("missing.ckpt")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn batched_scores_match_one_by_one(n in 1usize..12, seed in 0u64..500) {
        let d = Detector::new(quick(0, seed), ROWS).unwrap();
        let t = random_dataset(n, 1, seed);
        let all = d.score_dataset(&t).unwrap();
        for i in 0..t.len() {
            let one = d.scores(&t.batch(&[i])).unwrap();
            prop_assert!((one[0] - all[i]).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&all[i]));
        }
    }
}
