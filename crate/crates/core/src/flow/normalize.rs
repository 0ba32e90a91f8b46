use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::dataset::{Origin, Sample};
use crate::flow::extract::RawSample;
use crate::flow::features::NUM_FEATURES;

/// Per-feature min/max observed on the training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationProfile {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationProfile {
    /// Fits min/max over the real (non-padded) rows of `samples`.
    pub fn fit(samples: &[RawSample]) -> Result<Self> {
        let mut min = vec![f64::INFINITY; NUM_FEATURES];
        let mut max = vec![f64::NEG_INFINITY; NUM_FEATURES];
        let mut seen = false;
        for row in samples.iter().flat_map(|s| s.rows.iter()) {
            seen = true;
            for c in 0..NUM_FEATURES {
                min[c] = min[c].min(row[c]);
                max[c] = max[c].max(row[c]);
            }
        }
        if !seen {
            return Err(Error::Precondition("cannot fit a normalization profile without any packet rows".into()));
        }
        Ok(NormalizationProfile { min, max })
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != NUM_FEATURES || self.max.len() != NUM_FEATURES {
            return Err(Error::Config(format!(
                "normalization profile has {}/{} entries, expected {}",
                self.min.len(),
                self.max.len(),
                NUM_FEATURES
            )));
        }
        if let Some(c) = (0..NUM_FEATURES).find(|&c| !(self.max[c] >= self.min[c])) {
            return Err(Error::Format(format!("normalization profile column {} has max < min", c)));
        }
        Ok(())
    }

    /// Maps one raw value of column `c` into [0, 1]; a degenerate range maps to 0.
    pub fn scale(&self, c: usize, v: f64) -> f64 {
        let span = self.max[c] - self.min[c];
        if span <= 0.0 {
            0.0
        } else {
            ((v - self.min[c]) / span).clamp(0.0, 1.0)
        }
    }

    /// Normalizes `raw` into a `rows`-row matrix, zero-padding the tail.
    pub fn apply(&self, raw: &RawSample, rows: usize) -> Result<Sample> {
        self.validate()?;
        if raw.rows.is_empty() || raw.rows.len() > rows {
            return Err(Error::shape(
                "normalize",
                format!("sample has {} rows, matrix holds {}", raw.rows.len(), rows),
            ));
        }
        let mut matrix = vec![0.0; rows * NUM_FEATURES];
        for (j, row) in raw.rows.iter().enumerate() {
            for c in 0..NUM_FEATURES {
                matrix[j * NUM_FEATURES + c] = self.scale(c, row[c]);
            }
        }
        Ok(Sample { matrix, flow_length: raw.rows.len(), key: raw.key, window: raw.window, origin: Origin::Original })
    }

    pub fn apply_all(&self, raw: &[RawSample], rows: usize) -> Result<Vec<Sample>> {
        raw.iter().map(|s| self.apply(s, rows)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::key::FlowKey;
    use std::net::Ipv4Addr;

    fn raw(rows: Vec<[f64; NUM_FEATURES]>) -> RawSample {
        RawSample { key: FlowKey::new(Ipv4Addr::LOCALHOST, 1, Ipv4Addr::LOCALHOST, 2, 6), window: 0, rows }
    }

    #[test]
    fn min_max_rules() {
        let mut a = [7.0; NUM_FEATURES];
        let mut b = [7.0; NUM_FEATURES];
        a[1] = 0.0;
        b[1] = 100.0;
        let p = NormalizationProfile::fit(&[raw(vec![a]), raw(vec![b])]).unwrap();
        assert_eq!(p.scale(1, 25.0), 0.25);
        assert_eq!(p.scale(0, 7.0), 0.0);
        assert_eq!(p.scale(1, 250.0), 1.0);
        assert_eq!(p.scale(1, -3.0), 0.0);

        let s = p.apply(&raw(vec![b]), 10).unwrap();
        assert_eq!(s.flow_length, 1);
        assert_eq!(s.matrix[1], 1.0);
        assert!(s.matrix[NUM_FEATURES..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_feature_count_is_rejected() {
        let p = NormalizationProfile { min: vec![0.0; 10], max: vec![1.0; 10] };
        assert!(matches!(p.apply(&raw(vec![[0.0; NUM_FEATURES]]), 10), Err(Error::Config(_))));
        assert!(NormalizationProfile::fit(&[]).is_err());
    }
}
