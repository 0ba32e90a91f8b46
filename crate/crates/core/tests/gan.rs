mod common;

use floodguard::autodiff::Tensor;
use floodguard::flow::{LabeledDataset, NUM_FEATURES};
use floodguard::gan::{train_wgan_gp, GanConfig, GanModel};
use floodguard::pipeline::scenario_dataset;
use floodguard::synth::{synthesize, Scenario};

/// About 500 benign samples of synthetic traffic.
fn benign_set(seed: u64) -> LabeledDataset {
    let mut sc = Scenario::syn_flood(seed, 60.0);
    sc.attack = None;
    let pkts = synthesize(&sc).unwrap();
    let ds = scenario_dataset(&sc, &pkts, 10.0, 10, None, "benign").unwrap();
    let take: Vec<usize> = (0..ds.len().min(500)).collect();
    ds.subset(&take)
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

#[test]
fn wasserstein_estimate_shrinks_during_training() {
    let benign = benign_set(1);
    assert!(benign.len() >= 300, "only {} benign samples", benign.len());
    for seed in 0..3 {
        let config = GanConfig { iterations: 200, seed, ..GanConfig::default() };
        let model = train_wgan_gp(&benign, config).unwrap();
        let w: Vec<f64> = model.history.iter().map(|h| h.wasserstein).collect();
        assert_eq!(w.len(), 200);
        let early = mean_abs(&w[..40]);
        let late = mean_abs(&w[160..]);
        assert!(late < early, "seed {}: |W| {} -> {}", seed, early, late);
    }
}

#[test]
fn penalty_keeps_critic_gradients_near_one() {
    let benign = benign_set(2);
    let model = train_wgan_gp(&benign, GanConfig { iterations: 200, seed: 4, ..GanConfig::default() }).unwrap();
    let n = 200;
    let real = benign.batch(&(0..n).collect::<Vec<_>>());
    let fake = model.generate(n, 9).unwrap().data;
    let mix: Vec<f64> = real
        .data()
        .chunks(real.shape()[1])
        .zip(fake.data().chunks(fake.shape()[1]))
        .enumerate()
        .flat_map(|(i, (r, f))| {
            let u = (i as f64 + 0.5) / n as f64;
            r.iter().zip(f).map(move |(a, b)| u * a + (1.0 - u) * b).collect::<Vec<_>>()
        })
        .collect();
    let x = Tensor::new(real.shape().to_vec(), mix).unwrap();
    let norms = model.critic_grad_norms(&x).unwrap();
    let mut sorted = norms.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    assert!((0.5..1.5).contains(&median), "median gradient norm {}", median);

    let init = GanModel::new(GanConfig { seed: 4, ..GanConfig::default() }, 10).unwrap();
    let init_norms = init.critic_grad_norms(&x).unwrap();
    let dist = |v: &[f64]| v.iter().map(|g| (g - 1.0).abs()).sum::<f64>() / v.len() as f64;
    assert!(dist(&norms) < dist(&init_norms));
}

#[test]
fn zero_iterations_keep_initialisation() {
    let benign = benign_set(3);
    let config = GanConfig { iterations: 0, seed: 5, ..GanConfig::default() };
    let trained = train_wgan_gp(&benign, config.clone()).unwrap();
    let init = GanModel::new(config, benign.rows).unwrap();
    assert_eq!(trained.generator, init.generator);
    assert_eq!(trained.critic, init.critic);
    assert!(trained.history.is_empty());
}

#[test]
fn generation_range_and_determinism() {
    let g = GanModel::new(GanConfig::default(), 10).unwrap();
    let a = g.generate(5, 1).unwrap();
    assert_eq!(a.len(), 5);
    assert_eq!(a.data.shape(), &[5, 10 * NUM_FEATURES]);
    assert!(a.data.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a, g.generate(5, 1).unwrap());
    assert_ne!(a, g.generate(5, 2).unwrap());
    assert!(g.generate(0, 1).is_err());
    // Batches larger than one forward chunk stay consistent with the seed.
    let big = g.generate(600, 3).unwrap();
    assert_eq!(big, g.generate(600, 3).unwrap());
    assert!(big.data.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn generated_feature_means_track_benign_means() {
    let benign = benign_set(4);
    let model = train_wgan_gp(&benign, GanConfig { seed: 1, ..GanConfig::default() }).unwrap();
    let fake = model.generate(1000, 7).unwrap();
    let cells = |data: &[f64], c: usize| -> Vec<f64> { data.chunks(NUM_FEATURES).map(|r| r[c]).collect() };
    let real = benign.batch(&(0..benign.len()).collect::<Vec<_>>());
    let mut ok = 0;
    for c in 0..NUM_FEATURES {
        let r = cells(real.data(), c);
        let f = cells(fake.data.data(), c);
        let mean_r = r.iter().sum::<f64>() / r.len() as f64;
        let var_r = r.iter().map(|v| (v - mean_r).powi(2)).sum::<f64>() / (r.len() - 1) as f64;
        let mean_f = f.iter().sum::<f64>() / f.len() as f64;
        if (mean_f - mean_r).abs() <= 3.0 * var_r.sqrt() {
            ok += 1;
        }
    }
    assert!(ok >= 9, "only {} of {} feature means match", ok, NUM_FEATURES);
}

#[test]
fn training_refuses_attack_samples_and_bad_config() {
    let mut mixed = common::random_dataset(40, 5, 1);
    assert!(train_wgan_gp(&mixed, GanConfig { iterations: 1, ..GanConfig::default() }).is_err());
    mixed.labels.iter_mut().for_each(|y| *y = 0);
    assert!(train_wgan_gp(&mixed, GanConfig { iterations: 1, ..GanConfig::default() }).is_ok());
    assert!(train_wgan_gp(&mixed, GanConfig { noise_dim: 0, ..GanConfig::default() }).is_err());
    assert!(train_wgan_gp(&mixed, GanConfig { learning_rate: 0.0, ..GanConfig::default() }).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let mut benign = common::random_dataset(40, 0, 2);
    benign.labeled = true;
    let model = train_wgan_gp(&benign, GanConfig { iterations: 3, seed: 8, ..GanConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gan.ckpt");
    model.save(&path).unwrap();
    let back = GanModel::load(&path).unwrap();
    assert_eq!(back.generator, model.generator);
    assert_eq!(back.critic, model.critic);
    assert_eq!(back.config, model.config);
    assert_eq!(back.history, model.history);
    assert_eq!(back.generate(4, 1).unwrap(), model.generate(4, 1).unwrap());

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(GanModel::load(&path).is_err());
}
