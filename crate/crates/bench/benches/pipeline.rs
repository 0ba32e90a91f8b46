use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use floodguard::augment::{gadot_augment, PerturbationPlan};
use floodguard::detector::{Detector, DetectorConfig};
use floodguard::flow::ParsedCapture;
use floodguard::flow::{dataset_from_records, DatasetMeta};
use floodguard::gan::{train_wgan_gp, GanConfig, GanModel};
use floodguard::perturb::compose;
use floodguard_bench::{combined_spec, syn_dataset, syn_trace};

fn extract(c: &mut Criterion) {
    let (_, pkts) = syn_trace(30.0);
    c.bench_function("extract_30s_syn_trace", |b| {
        b.iter(|| {
            let parsed = ParsedCapture::from_packets(&pkts);
            let meta = DatasetMeta { source: "bench".into(), window_seconds: 10.0, max_packets: 10, provenance: None };
            dataset_from_records(&parsed.records, 10.0, 10, None, meta).unwrap()
        })
    });
}

fn perturb(c: &mut Criterion) {
    let (sc, pkts) = syn_trace(30.0);
    let spec = combined_spec(&sc);
    c.bench_function("perturb_combined_30s", |b| b.iter(|| compose(&pkts, &spec).unwrap()));
}

fn detector(c: &mut Criterion) {
    let ds = syn_dataset(30.0);
    let model = Detector::new(DetectorConfig::default(), ds.rows).unwrap();
    let x = ds.batch(&(0..ds.len().min(256)).collect::<Vec<_>>());
    c.bench_function("detector_forward_256", |b| b.iter(|| model.scores(&x).unwrap()));
    let config = DetectorConfig { epochs: 1, validation: 0.0, ..DetectorConfig::default() };
    c.bench_function("detector_train_epoch", |b| b.iter(|| Detector::train(&ds, config.clone()).unwrap()));
}

fn gan(c: &mut Criterion) {
    let ds = syn_dataset(30.0);
    let benign = ds.subset(&ds.indices_of(0));
    let config = GanConfig { iterations: 1, ..GanConfig::default() };
    c.bench_function("wgan_gp_iteration", |b| b.iter(|| train_wgan_gp(&benign, config.clone()).unwrap()));
    let g = GanModel::new(GanConfig::default(), ds.rows).unwrap();
    let plan = PerturbationPlan::all();
    c.bench_function("gadot_augment", |b| {
        b.iter_batched(|| ds.clone(), |t| gadot_augment(&t, &plan, &g, 1).unwrap(), BatchSize::LargeInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = extract, perturb, detector, gan
}
criterion_main!(benches);
