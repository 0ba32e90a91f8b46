use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::artifact::{Container, Provenance};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::features::{DEFAULT_MAX_PACKETS, NUM_FEATURES};
use crate::flow::key::FlowKey;
use crate::flow::normalize::NormalizationProfile;

pub const DATASET_KIND: &str = "dataset";

/// Where a sample in an (augmented) dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Gadot,
    Bfp,
    Fgsm,
    DuplicateBenign,
}

impl Origin {
    pub const ALL: [Origin; 5] = [Origin::Original, Origin::Gadot, Origin::Bfp, Origin::Fgsm, Origin::DuplicateBenign];

    fn code(self) -> f64 {
        Origin::ALL.iter().position(|&o| o == self).unwrap() as f64
    }

    fn from_code(v: f64) -> Result<Self> {
        Origin::ALL
            .get(v as usize)
            .copied()
            .filter(|_| v.fract() == 0.0 && v >= 0.0)
            .ok_or_else(|| Error::Format(format!("invalid origin code {}", v)))
    }
}

/// Normalized `rows x 11` feature matrix of one flow in one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Row-major values in [0, 1].
    pub matrix: Vec<f64>,
    /// Number of real (non-padded) rows.
    pub flow_length: usize,
    pub key: FlowKey,
    pub window: u64,
    pub origin: Origin,
}

impl Sample {
    pub fn rows(&self) -> usize {
        self.matrix.len() / NUM_FEATURES
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * NUM_FEATURES + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.matrix[row * NUM_FEATURES + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.matrix[row * NUM_FEATURES..(row + 1) * NUM_FEATURES]
    }

    /// True when every padded row is exactly zero.
    pub fn padding_is_zero(&self) -> bool {
        self.matrix[self.flow_length * NUM_FEATURES..].iter().all(|&v| v == 0.0)
    }
}

/// Provenance and extraction parameters of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub window_seconds: f64,
    pub max_packets: usize,
    pub provenance: Option<Provenance>,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            source: String::new(),
            window_seconds: crate::flow::features::DEFAULT_WINDOW_SECONDS,
            max_packets: DEFAULT_MAX_PACKETS,
            provenance: None,
        }
    }
}

/// Samples `T` with labels `Y` (0 benign, 1 DDoS) and their profile.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub rows: usize,
    pub samples: Vec<Sample>,
    pub labels: Vec<u8>,
    /// False for freshly extracted data whose labels are placeholders.
    pub labeled: bool,
    pub profile: NormalizationProfile,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(
        rows: usize,
        samples: Vec<Sample>,
        labels: Vec<u8>,
        profile: NormalizationProfile,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let ds = LabeledDataset { rows, samples, labels, labeled: true, profile, meta };
        ds.validate()?;
        Ok(ds)
    }

    pub fn unlabeled(
        rows: usize,
        samples: Vec<Sample>,
        profile: NormalizationProfile,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let n = samples.len();
        let mut ds = LabeledDataset::new(rows, samples, vec![0; n], profile, meta)?;
        ds.labeled = false;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.labels.len() {
            return Err(Error::Format(format!("{} samples but {} labels", self.samples.len(), self.labels.len())));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::Format(format!("non-binary label {}", l)));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.matrix.len() != self.rows * NUM_FEATURES || s.flow_length > self.rows {
                return Err(Error::Format(format!(
                    "sample {} does not fit a {}x{} matrix",
                    i, self.rows, NUM_FEATURES
                )));
            }
        }
        self.profile.validate()
    }

    pub fn require_labels(&self) -> Result<()> {
        if self.labeled {
            Ok(())
        } else {
            Err(Error::Precondition("dataset is unlabeled; run labeling first".into()))
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn indices_of(&self, label: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    pub fn push(&mut self, sample: Sample, label: u8) {
        self.samples.push(sample);
        self.labels.push(label);
    }

    /// Copy with only the listed samples, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        LabeledDataset {
            rows: self.rows,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            labeled: self.labeled,
            profile: self.profile.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Seeded shuffle split; the first part receives `round(frac * n)` samples.
    pub fn split(&self, frac: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64) * frac.clamp(0.0, 1.0)).round() as usize;
        let (a, b) = idx.split_at(cut);
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        (self.subset(&a), self.subset(&b))
    }

    /// `[n, rows * 11]` batch of the listed samples.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let width = self.rows * NUM_FEATURES;
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].matrix);
        }
        Tensor::new(vec![indices.len(), width], data).expect("sample widths are validated")
    }

    /// SHA-256 over the labels and matrices of the listed samples.
    pub fn content_hash(&self, indices: &[usize]) -> String {
        let mut h = Sha256::new();
        for &i in indices {
            h.update([self.labels[i]]);
            for v in &self.samples[i].matrix {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{:02x}", b)).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let n = self.len();
        let mut c = Container::new(
            DATASET_KIND,
            json!({
                "rows": self.rows,
                "labeled": self.labeled,
                "source": self.meta.source,
                "window_seconds": self.meta.window_seconds,
                "max_packets": self.meta.max_packets,
                "provenance": self.meta.provenance,
                "n_benign": self.count(0),
                "n_ddos": self.count(1),
            }),
        );
        let col = |f: &dyn Fn(&Sample) -> f64| Tensor::new(vec![n], self.samples.iter().map(f).collect()).unwrap();
        let mut matrix = Vec::with_capacity(n * self.rows * NUM_FEATURES);
        let mut keys = Vec::with_capacity(n * 5);
        for s in &self.samples {
            matrix.extend_from_slice(&s.matrix);
            keys.extend_from_slice(&s.key.to_f64s());
        }
        c.push("samples", Tensor::new(vec![n, self.rows, NUM_FEATURES], matrix)?);
        c.push("labels", Tensor::new(vec![n], self.labels.iter().map(|&l| f64::from(l)).collect())?);
        c.push("flow_length", col(&|s| s.flow_length as f64));
        c.push("window", col(&|s| s.window as f64));
        c.push("origin", col(&|s| s.origin.code()));
        c.push("keys", Tensor::new(vec![n, 5], keys)?);
        c.push("profile_min", Tensor::from_vec(self.profile.min.clone()));
        c.push("profile_max", Tensor::from_vec(self.profile.max.clone()));
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(DATASET_KIND)?;
        let field = |k: &str| c.meta.get(k).ok_or_else(|| Error::Format(format!("dataset header lacks '{}'", k)));
        let rows = field("rows")?.as_u64().ok_or_else(|| Error::Format("rows must be an integer".into()))? as usize;
        let labeled = field("labeled")?.as_bool().unwrap_or(false);
        let meta = DatasetMeta {
            source: field("source")?.as_str().unwrap_or_default().to_string(),
            window_seconds: field("window_seconds")?.as_f64().unwrap_or_default(),
            max_packets: field("max_packets")?.as_u64().unwrap_or_default() as usize,
            provenance: serde_json::from_value(field("provenance")?.clone())
                .map_err(|e| Error::Format(format!("provenance: {}", e)))?,
        };
        let samples_t = c.tensor("samples")?;
        let n = samples_t.shape().first().copied().unwrap_or(0);
        if samples_t.shape() != [n, rows, NUM_FEATURES] {
            return Err(Error::Format(format!("samples tensor has shape {:?}", samples_t.shape())));
        }
        let per = |name: &str, width: usize| -> Result<&[f64]> {
            let t = c.tensor(name)?;
            if t.len() != n * width {
                return Err(Error::Format(format!("tensor '{}' has {} values", name, t.len())));
            }
            Ok(t.data())
        };
        let labels_v = per("labels", 1)?;
        let fl = per("flow_length", 1)?;
        let win = per("window", 1)?;
        let org = per("origin", 1)?;
        let keys = per("keys", 5)?;
        let width = rows * NUM_FEATURES;
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            samples.push(Sample {
                matrix: samples_t.data()[i * width..(i + 1) * width].to_vec(),
                flow_length: fl[i] as usize,
                key: FlowKey::from_f64s(&keys[i * 5..(i + 1) * 5])?,
                window: win[i] as u64,
                origin: Origin::from_code(org[i])?,
            });
        }
        let labels =
            labels_v
                .iter()
                .map(|&v| {
                    if v == 0.0 || v == 1.0 {
                        Ok(v as u8)
                    } else {
                        Err(Error::Format(format!("non-binary label {}", v)))
                    }
                })
                .collect::<Result<Vec<u8>>>()?;
        let profile = NormalizationProfile {
            min: c.tensor("profile_min")?.data().to_vec(),
            max: c.tensor("profile_max")?.data().to_vec(),
        };
        let mut ds = LabeledDataset::new(rows, samples, labels, profile, meta)?;
        ds.labeled = labeled;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        LabeledDataset::from_container(&Container::read(path)?)
    }
}
