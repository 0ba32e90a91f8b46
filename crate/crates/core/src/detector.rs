//! Convolutional flow classifier: one convolution whose kernels span all
//! feature columns, ReLU, max-pool over rows and a sigmoid output unit.

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifact::{Container, Provenance};
use crate::autodiff::layers::{conv2d, dense, he_uniform, ConvGeometry};
use crate::autodiff::{pull_params, push_params, AdamConfig, AdamState, Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::flow::{LabeledDataset, NUM_FEATURES};

pub const DETECTOR_KIND: &str = "detector";

/// Samples per forward pass in [`Detector::scores`].
const SCORE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Number of convolution kernels.
    pub filters: usize,
    /// Kernel height in packet rows; the width always covers all features.
    pub kernel_rows: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without a validation F1 improvement before stopping.
    pub patience: usize,
    /// Fraction of the training data held out for validation.
    pub validation: f64,
    /// Scores at or above this value are classified as attack.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            filters: 64,
            kernel_rows: 3,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 5,
            validation: 0.1,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.filters == 0 || self.batch_size == 0 {
            return Err(Error::Config("filters and batch_size must be positive".into()));
        }
        if self.kernel_rows == 0 || self.kernel_rows > rows {
            return Err(Error::Config(format!("kernel_rows must be in 1..={} for {}-row samples", rows, rows)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when no validation split was held out or F1 is undefined.
    pub validation_f1: Option<f64>,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset_hash: String,
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (0 means the initialisation).
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: DetectorConfig,
    pub rows: usize,
    pub params: ParamSet,
    pub meta: TrainingMeta,
}

/// Graph nodes of one forward pass.
struct Forward {
    graph: Graph,
    input: NodeId,
    logits: NodeId,
}

impl Detector {
    /// Freshly initialised model for `rows x 11` samples.
    pub fn new(config: DetectorConfig, rows: usize) -> Result<Self> {
        config.validate(rows)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let patch = config.kernel_rows * NUM_FEATURES;
        let mut params = ParamSet::new();
        params.insert("conv.w", he_uniform(patch, config.filters, &mut rng));
        params.insert("conv.b", Tensor::zeros(&[config.filters]));
        params.insert("out.w", he_uniform(config.filters, 1, &mut rng).map(|v| v * 0.5));
        params.insert("out.b", Tensor::zeros(&[1]));
        Ok(Detector { config, rows, params, meta: TrainingMeta::default() })
    }

    fn geometry(&self, batch: usize) -> ConvGeometry {
        ConvGeometry {
            batch,
            in_h: self.rows,
            in_w: NUM_FEATURES,
            in_c: 1,
            k_h: self.config.kernel_rows,
            k_w: NUM_FEATURES,
            stride: 1,
            pad_h: 0,
            pad_w: 0,
        }
    }

    /// Builds the network over `x` (`[batch, rows*11]`); `trainable` binds
    /// the parameters as gradient leaves, `input_grad` does so for `x`.
    fn build(&self, x: &Tensor, trainable: bool, input_grad: bool) -> Result<(Forward, crate::autodiff::Bound)> {
        let batch = x.shape()[0];
        let mut g = Graph::new();
        let bound = if trainable { self.params.bind(&mut g) } else { self.params.bind_frozen(&mut g) };
        let cells = x.clone().reshaped(&[batch * self.rows * NUM_FEATURES, 1])?;
        let input = if input_grad { g.parameter(cells) } else { g.constant(cells) };
        let geom = self.geometry(batch);
        let h = conv2d(&mut g, input, &geom, bound.id("conv.w"), bound.id("conv.b"))?;
        let h = g.relu(h);
        let pooled = g.max_pool_rows(h, geom.out_h());
        let logits = dense(&mut g, pooled, bound.id("out.w"), bound.id("out.b"));
        Ok((Forward { graph: g, input, logits }, bound))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let width = self.rows * NUM_FEATURES;
        if x.shape().len() != 2 || x.shape()[1] != width {
            return Err(Error::shape("detector", format!("expected [n, {}] samples, got {:?}", width, x.shape())));
        }
        Ok(())
    }

    /// Attack probabilities for a `[n, rows*11]` batch.
    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let n = x.shape()[0];
        let width = x.shape()[1];
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(SCORE_CHUNK) {
            let end = (start + SCORE_CHUNK).min(n);
            let chunk = Tensor::new(vec![end - start, width], x.data()[start * width..end * width].to_vec())?;
            let (mut f, _) = self.build(&chunk, false, false)?;
            let logits = f.graph.forward(f.logits, &[])?;
            out.extend(logits.data().iter().map(|&z| crate::autodiff::sigmoid(z)));
        }
        Ok(out)
    }

    pub fn score_dataset(&self, ds: &LabeledDataset) -> Result<Vec<f64>> {
        if ds.rows != self.rows {
            return Err(Error::shape("detector", format!("model expects {} rows, dataset has {}", self.rows, ds.rows)));
        }
        let idx: Vec<usize> = (0..ds.len()).collect();
        self.scores(&ds.batch(&idx))
    }

    /// 1 (attack) when the score reaches the threshold, else 0.
    pub fn label(&self, score: f64) -> u8 {
        u8::from(score >= self.config.threshold)
    }

    pub fn classify(&self, ds: &LabeledDataset) -> Result<(Vec<f64>, Vec<u8>)> {
        let scores = self.score_dataset(ds)?;
        let labels = scores.iter().map(|&s| self.label(s)).collect();
        Ok((scores, labels))
    }

    /// Gradient of the mean cross-entropy against `targets` with respect to
    /// the inputs, shaped like `x`.
    pub fn input_gradient(&self, x: &Tensor, targets: &[f64]) -> Result<Tensor> {
        self.check_input(x)?;
        if targets.len() != x.shape()[0] {
            return Err(Error::shape(
                "input_gradient",
                format!("{} targets for {} samples", targets.len(), x.shape()[0]),
            ));
        }
        let (mut f, _) = self.build(x, false, true)?;
        let t = Tensor::new(vec![targets.len(), 1], targets.to_vec())?;
        let loss = f.graph.bce_with_logits(f.logits, t);
        f.graph.forward(loss, &[])?;
        let grads = f.graph.backward(loss, None)?;
        grads.get_or_zeros(f.input, &[x.len(), 1]).reshaped(x.shape())
    }

    /// Trains a fresh model on `ds` with early stopping on validation F1.
    pub fn train(ds: &LabeledDataset, config: DetectorConfig) -> Result<Detector> {
        ds.require_labels()?;
        if ds.count(0) == 0 || ds.count(1) == 0 {
            return Err(Error::Precondition(format!(
                "training needs both classes, got {} benign and {} attack samples",
                ds.count(0),
                ds.count(1)
            )));
        }
        let mut model = Detector::new(config.clone(), ds.rows)?;
        let all: Vec<usize> = (0..ds.len()).collect();
        model.meta.dataset_hash = ds.content_hash(&all);
        model.meta.provenance = Some(Provenance::new(&config, config.seed));
        if config.epochs == 0 {
            return Ok(model);
        }
        let (val, train) = if config.validation > 0.0 {
            ds.split(config.validation, config.seed ^ 0x5eed)
        } else {
            (ds.subset(&[]), ds.clone())
        };
        let x_val = val.batch(&(0..val.len()).collect::<Vec<_>>());
        let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), &model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best: Option<((f64, f64), ParamSet, usize)> = None;
        let mut stale = 0;
        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let x = train.batch(chunk);
                let y: Vec<f64> = chunk.iter().map(|&i| f64::from(train.labels[i])).collect();
                let (mut f, bound) = model.build(&x, true, false)?;
                let loss = f.graph.bce_with_logits(f.logits, Tensor::new(vec![y.len(), 1], y)?);
                let l = f.graph.forward(loss, &[])?.item();
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("detector loss at epoch {}", epoch)));
                }
                total += l * chunk.len() as f64;
                let grads = f.graph.backward(loss, None)?;
                let grads = bound.gradients(&grads, &model.params)?;
                adam.step(&mut model.params, &grads)?;
            }
            let train_loss = total / train.len() as f64;
            let (validation_f1, validation_loss) = if val.is_empty() {
                (None, None)
            } else {
                let scores = model.scores(&x_val)?;
                let preds: Vec<u8> = scores.iter().map(|&s| model.label(s)).collect();
                (compute_metrics(&val.labels, &preds)?.f1, Some(mean_bce(&scores, &val.labels)))
            };
            debug!("epoch {} loss {:.5} val_f1 {:?}", epoch, train_loss, validation_f1);
            model.meta.history.push(EpochLog { epoch, train_loss, validation_f1, validation_loss });
            model.meta.epochs_run = epoch;
            // F1 ranks epochs; validation loss breaks ties once F1 saturates.
            let score = (validation_f1.unwrap_or(0.0), -validation_loss.unwrap_or(train_loss));
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, model.params.clone(), epoch));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience.max(1) {
                    info!("early stop after epoch {} (best epoch {})", epoch, best.as_ref().unwrap().2);
                    break;
                }
            }
        }
        if let Some((_, params, epoch)) = best {
            model.params = params;
            model.meta.best_epoch = epoch;
        }
        Ok(model)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            DETECTOR_KIND,
            json!({
                "rows": self.rows,
                "config": self.config,
                "training": self.meta,
            }),
        );
        push_params(&mut c, "params", &self.params);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(DETECTOR_KIND)?;
        let field = |name: &str| {
            c.meta.get(name).cloned().ok_or_else(|| Error::Format(format!("detector checkpoint lacks '{}'", name)))
        };
        let rows: usize = serde_json::from_value(field("rows")?).map_err(|e| Error::Format(e.to_string()))?;
        let config: DetectorConfig =
            serde_json::from_value(field("config")?).map_err(|e| Error::Format(e.to_string()))?;
        let meta: TrainingMeta =
            serde_json::from_value(field("training")?).map_err(|e| Error::Format(e.to_string()))?;
        let params = pull_params(c, "params");
        let template = Detector::new(config.clone(), rows)?;
        for (name, t) in template.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::Format(format!("detector checkpoint has a missing or misshapen '{}'", name))),
            }
        }
        Ok(Detector { config, rows, params, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Detector::from_container(&Container::read(path)?)
    }
}

/// Mean binary cross-entropy of probabilities against 0/1 labels.
fn mean_bce(scores: &[f64], labels: &[u8]) -> f64 {
    let eps = 1e-12;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y == 1 { -(p.max(eps)).ln() } else { -((1.0 - p).max(eps)).ln() })
        .sum();
    total / scores.len().max(1) as f64
}
