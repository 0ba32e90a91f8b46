//! Toy datasets shared by the integration tests.

#![allow(dead_code)]

use std::net::Ipv4Addr;

use floodguard::flow::{DatasetMeta, FlowKey, LabeledDataset, NormalizationProfile, Origin, Sample, NUM_FEATURES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ROWS: usize = 10;

pub fn unit_profile() -> NormalizationProfile {
    NormalizationProfile { min: vec![0.0; NUM_FEATURES], max: vec![1.0; NUM_FEATURES] }
}

fn key(i: usize) -> FlowKey {
    FlowKey::new(Ipv4Addr::new(10, 0, (i >> 8) as u8, i as u8), 40000, Ipv4Addr::new(192, 168, 0, 1), 80, 6)
}

fn sample(i: usize, rows: Vec<[f64; NUM_FEATURES]>) -> Sample {
    let flow_length = rows.len();
    let mut matrix = vec![0.0; ROWS * NUM_FEATURES];
    for (r, row) in rows.iter().enumerate() {
        matrix[r * NUM_FEATURES..(r + 1) * NUM_FEATURES].copy_from_slice(row);
    }
    Sample { matrix, flow_length, key: key(i), window: 0, origin: Origin::Original }
}

fn build(samples: Vec<Sample>, labels: Vec<u8>, source: &str) -> LabeledDataset {
    let meta = DatasetMeta { source: source.into(), ..DatasetMeta::default() };
    LabeledDataset::new(ROWS, samples, labels, unit_profile(), meta).unwrap()
}

/// Uniform random rows with random flow lengths and zero padding; benign first.
pub fn random_dataset(benign: usize, ddos: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for i in 0..benign + ddos {
        let fl = rng.random_range(1..=ROWS);
        let rows = (0..fl).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        samples.push(sample(i, rows));
        labels.push(u8::from(i >= benign));
    }
    build(samples, labels, "random toy")
}

/// Benign flows are several ACK-like rows with large windows; DDoS flows are a
/// single SYN-like row with a small window. Separable on flags and window.
pub fn separable_dataset(benign: usize, ddos: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for i in 0..benign + ddos {
        let attack = i >= benign;
        let fl = if attack { rng.random_range(1..=2) } else { rng.random_range(8..=ROWS) };
        let rows = (0..fl)
            .map(|r| {
                let mut row = [0.0; NUM_FEATURES];
                row[0] = if attack { 0.0 } else { r as f64 * rng.random_range(0.01..0.1) };
                row[1] = rng.random_range(0.0..0.3) + if attack { 0.0 } else { 0.3 };
                row[3] = 1.0;
                row[7] = if attack { 0.08 } else { rng.random_range(0.6..1.0) };
                row[8] = if attack { 0.12 } else { rng.random_range(0.4..1.0) };
                row
            })
            .collect();
        samples.push(sample(i, rows));
        labels.push(u8::from(attack));
    }
    build(samples, labels, "separable toy")
}
