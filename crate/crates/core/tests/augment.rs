mod common;

use common::{random_dataset, separable_dataset, ROWS};
use floodguard::augment::{
    balance, bfp_augment, fgsm_augment, fgsm_perturb, gadot_augment, FgsmConfig, PerturbationPlan,
};
use floodguard::detector::{Detector, DetectorConfig};
use floodguard::flow::{Feature, LabeledDataset, Origin, NUM_FEATURES};
use floodguard::gan::{GanConfig, GanModel};
use proptest::prelude::*;

#[path = "oracle/algorithm.rs"]
mod oracle;

use oracle::literal_algorithm;

fn toy_generator(seed: u64) -> GanModel {
    GanModel::new(GanConfig { seed, ..GanConfig::default() }, ROWS).unwrap()
}

#[test]
fn gadot_matches_literal_algorithm_on_toy_inputs() {
    for (benign, ddos, seed) in [(10, 10, 1), (4, 8, 2), (6, 3, 3), (1, 19, 4)] {
        let t = random_dataset(benign, ddos, seed);
        let g = toy_generator(seed);
        let plan = PerturbationPlan::all();
        let out = gadot_augment(&t, &plan, &g, seed).unwrap();
        let (x_ref, y_ref) = literal_algorithm(&t, &plan, &g, seed);

        let n = x_ref.len();
        for i in 0..n {
            assert_eq!(out.samples[i].matrix, x_ref[i], "sample {} differs", i);
            assert_eq!(out.labels[i], y_ref[i]);
        }
        // Everything after the literal output is a duplicated original benign sample.
        let benign_ref = y_ref.iter().filter(|&&y| y == 0).count();
        let ddos_ref = n - benign_ref;
        assert_eq!(out.len(), n + ddos_ref.saturating_sub(benign_ref));
        for s in &out.samples[n..] {
            assert_eq!(s.origin, Origin::DuplicateBenign);
            assert!(t.samples.iter().zip(&t.labels).any(|(o, &y)| y == 0 && o.matrix == s.matrix));
        }
        assert!(out.labels[n..].iter().all(|&y| y == 0));
        assert_eq!(out.count(0), benign_ref.max(ddos_ref));
    }
}

#[test]
fn balanced_hundred_sample_set_grows_to_thirteen_hundred() {
    let t = random_dataset(50, 50, 9);
    let out = gadot_augment(&t, &PerturbationPlan::all(), &toy_generator(0), 5).unwrap();
    assert_eq!(out.len(), 1300);
    assert_eq!(out.count(0), 650);
    assert_eq!(out.count(1), 650);
    assert!(out.samples.iter().all(|s| s.origin != Origin::DuplicateBenign));
}

#[test]
fn benign_samples_are_copied_verbatim() {
    let t = random_dataset(7, 5, 3);
    let n = t.len();
    for out in [
        gadot_augment(&t, &PerturbationPlan::all(), &toy_generator(1), 1).unwrap(),
        bfp_augment(&t, &PerturbationPlan::all(), 1).unwrap(),
    ] {
        for (i, (s, &y)) in out.samples.iter().zip(&out.labels).enumerate().take(13 * n) {
            if y == 0 {
                assert_eq!(s.matrix, t.samples[i % n].matrix);
                assert_eq!(s.flow_length, t.samples[i % n].flow_length);
            }
        }
    }
}

#[test]
fn single_column_plan_changes_only_that_column_of_real_rows() {
    let t = random_dataset(5, 12, 4);
    let plan: PerturbationPlan = "tcp_len".parse().unwrap();
    let col = Feature::TcpLen.column();
    for out in [gadot_augment(&t, &plan, &toy_generator(2), 3).unwrap(), bfp_augment(&t, &plan, 3).unwrap()] {
        let n = t.len();
        let mut changed = 0;
        for i in 0..n {
            let (a, b) = (&t.samples[i], &out.samples[n + i]);
            assert_eq!(a.flow_length, b.flow_length);
            for r in 0..ROWS {
                for c in 0..NUM_FEATURES {
                    let (x, y) = (a.get(r, c), b.get(r, c));
                    if c != col || r >= a.flow_length || t.labels[i] == 0 {
                        assert_eq!(x, y, "sample {} row {} col {}", i, r, c);
                    } else if x != y {
                        changed += 1;
                    }
                }
            }
        }
        assert!(changed > 0);
    }
}

#[test]
fn flow_length_fill_leaves_no_padding() {
    let t = random_dataset(5, 12, 5);
    let plan: PerturbationPlan = "flow_length".parse().unwrap();
    for out in [gadot_augment(&t, &plan, &toy_generator(3), 4).unwrap(), bfp_augment(&t, &plan, 4).unwrap()] {
        let n = t.len();
        for i in 0..n {
            let (a, b) = (&t.samples[i], &out.samples[n + i]);
            if t.labels[i] == 1 {
                assert_eq!(b.flow_length, ROWS);
                assert!((0..ROWS).all(|r| b.row(r).iter().any(|&v| v != 0.0)));
                assert_eq!(&b.matrix[..a.flow_length * NUM_FEATURES], &a.matrix[..a.flow_length * NUM_FEATURES]);
            } else {
                assert_eq!(a, &{
                    let mut s = b.clone();
                    s.origin = a.origin;
                    s
                });
            }
        }
    }
}

#[test]
fn gadot_output_does_not_depend_on_detector_training() {
    let t = separable_dataset(12, 8, 6);
    let g = toy_generator(4);
    let plan = PerturbationPlan::all();
    let before = gadot_augment(&t, &plan, &g, 11).unwrap().to_container().unwrap().to_bytes().unwrap();
    let config = DetectorConfig { epochs: 2, filters: 4, ..DetectorConfig::default() };
    let adv = gadot_augment(&t, &plan, &g, 11).unwrap();
    Detector::train(&adv, config.clone()).unwrap();
    Detector::train(&t, DetectorConfig { seed: 99, ..config }).unwrap();
    let after = gadot_augment(&t, &plan, &g, 11).unwrap().to_container().unwrap().to_bytes().unwrap();
    assert_eq!(before, after);
}

#[test]
fn gadot_rejects_unlabeled_or_attack_free_data() {
    let g = toy_generator(0);
    let plan = PerturbationPlan::all();
    assert!(gadot_augment(&random_dataset(6, 0, 1), &plan, &g, 0).is_err());
    let mut unlabeled = random_dataset(3, 3, 1);
    unlabeled.labeled = false;
    assert!(gadot_augment(&unlabeled, &plan, &g, 0).is_err());
}

#[test]
fn bfp_donors_come_from_real_benign_rows() {
    let t = random_dataset(6, 10, 7);
    let plan = PerturbationPlan::all();
    let out = bfp_augment(&t, &plan, 2).unwrap();
    let benign_values: Vec<Vec<f64>> = (0..NUM_FEATURES)
        .map(|c| {
            t.samples
                .iter()
                .zip(&t.labels)
                .filter(|(_, &y)| y == 0)
                .flat_map(|(s, _)| (0..s.flow_length).map(move |r| s.get(r, c)))
                .collect()
        })
        .collect();
    let n = t.len();
    for (i, s) in out.samples.iter().enumerate().skip(n).take(12 * n) {
        let orig = &t.samples[i % n];
        if t.labels[i % n] == 0 {
            continue;
        }
        for r in 0..s.flow_length {
            for c in 0..NUM_FEATURES {
                let v = s.get(r, c);
                if r >= orig.flow_length || v != orig.get(r, c) {
                    assert!(benign_values[c].contains(&v), "value {} in column {} is not benign", v, c);
                }
            }
        }
    }
}

#[test]
fn bfp_matches_gadot_size_and_is_deterministic() {
    let t = random_dataset(3, 9, 8);
    for name in ["time", "flow_length", "tcp_win"] {
        let plan: PerturbationPlan = name.parse().unwrap();
        let b = bfp_augment(&t, &plan, 5).unwrap();
        let g = gadot_augment(&t, &plan, &toy_generator(5), 5).unwrap();
        assert_eq!(b.len(), g.len());
        assert_eq!(b, bfp_augment(&t, &plan, 5).unwrap());
        assert_ne!(b.samples, bfp_augment(&t, &plan, 6).unwrap().samples);
    }
    assert!(bfp_augment(&random_dataset(0, 4, 1), &PerturbationPlan::all(), 0).is_err());
}

fn toy_detector() -> (LabeledDataset, Detector) {
    let t = separable_dataset(60, 60, 10);
    let config = DetectorConfig { epochs: 15, filters: 8, validation: 0.0, seed: 3, ..DetectorConfig::default() };
    let d = Detector::train(&t, config).unwrap();
    (t, d)
}

#[test]
fn fgsm_contract() {
    let (t, d) = toy_detector();
    let idx = t.indices_of(1);
    let x = t.batch(&idx);

    let same = fgsm_perturb(&d, &x, 0.0).unwrap();
    assert_eq!(same, x);

    let eps = 0.1;
    let adv = fgsm_perturb(&d, &x, eps).unwrap();
    let linf = x.data().iter().zip(adv.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(linf <= eps + 1e-12, "linf {}", linf);
    assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let before = mean(d.scores(&x).unwrap());
    let after = mean(d.scores(&adv).unwrap());
    assert!(after < before, "mean score {} -> {}", before, after);

    assert!(fgsm_perturb(&d, &x, -0.1).is_err());
    assert!(fgsm_augment(&t, &d, FgsmConfig { epsilon: f64::NAN }, 0).is_err());
}

#[test]
fn fgsm_augment_appends_one_copy_per_attack_sample() {
    let (t, d) = toy_detector();
    let out = fgsm_augment(&t, &d, FgsmConfig::default(), 1).unwrap();
    let n = t.len();
    assert_eq!(out.count(1), 2 * t.count(1));
    assert_eq!(out.count(0), out.count(1));
    assert_eq!(
        &out.samples[..n].iter().map(|s| &s.matrix).collect::<Vec<_>>(),
        &t.samples.iter().map(|s| &s.matrix).collect::<Vec<_>>()
    );
    assert!(out.samples[n..n + t.count(1)].iter().all(|s| s.origin == Origin::Fgsm));
    let zero = fgsm_augment(&t, &d, FgsmConfig { epsilon: 0.0 }, 1).unwrap();
    for (k, &i) in t.indices_of(1).iter().enumerate() {
        assert_eq!(zero.samples[n + k].matrix, t.samples[i].matrix);
    }
}

#[test]
fn balance_examples() {
    let t = random_dataset(10, 30, 12);
    let b = balance(&t, 0).unwrap();
    assert_eq!((b.count(0), b.count(1)), (30, 30));
    assert_eq!(b.samples[40..].iter().filter(|s| s.origin == Origin::DuplicateBenign).count(), 20);
    // Round-robin: every benign sample is duplicated exactly twice.
    for s in &t.samples[..10] {
        assert_eq!(b.samples[40..].iter().filter(|d| d.matrix == s.matrix).count(), 2);
    }

    let even = random_dataset(8, 8, 1);
    assert_eq!(balance(&even, 0).unwrap(), even);
    let more_benign = random_dataset(9, 2, 1);
    assert_eq!(balance(&more_benign, 0).unwrap(), more_benign);
    assert!(balance(&random_dataset(0, 3, 1), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bfp_keeps_benign_pure_and_balances(benign in 1usize..8, ddos in 1usize..12, seed in 0u64..1000, k in 1usize..12) {
        let t = random_dataset(benign, ddos, seed);
        let plan = PerturbationPlan::new(PerturbationPlan::all().features()[..k].to_vec()).unwrap();
        let out = bfp_augment(&t, &plan, seed).unwrap();
        prop_assert_eq!(out.count(1), ddos * (k + 1));
        prop_assert_eq!(out.count(0), (benign * (k + 1)).max(out.count(1)));
        for (s, &y) in out.samples.iter().zip(&out.labels) {
            if y == 0 {
                prop_assert!(t.samples.iter().any(|o| o.matrix == s.matrix));
            }
            prop_assert!(s.matrix.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
