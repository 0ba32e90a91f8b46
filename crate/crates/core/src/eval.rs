//! Detection metrics, before/after experiment grids and report tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::flow::LabeledDataset;

/// Confusion counts and derived ratios; a ratio with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub fnr: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        MetricsReport { tp, fp, fn_, tn, precision, recall, f1, fnr: ratio(fn_, fn_ + tp) }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::Fnr => self.fnr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Fnr,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Precision, Metric::Recall, Metric::F1, Metric::Fnr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::F1 => "F1",
            Metric::Fnr => "FNR",
        }
    }
}

/// Labels and predictions use 1 for attack, 0 for benign.
pub fn compute_metrics(labels: &[u8], predictions: &[u8]) -> Result<MetricsReport> {
    if labels.len() != predictions.len() {
        return Err(Error::Precondition(format!("{} labels but {} predictions", labels.len(), predictions.len())));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y != 0, p != 0) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDelta {
    pub metric: Metric,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub delta: Option<f64>,
}

impl MetricsDelta {
    pub fn new(metric: Metric, before: &MetricsReport, after: &MetricsReport) -> Self {
        let (b, a) = (before.get(metric), after.get(metric));
        MetricsDelta { metric, before: b, after: a, delta: a.zip(b).map(|(a, b)| a - b) }
    }
}

/// Models evaluated against attack samples of several perturbed traces,
/// each merged with the same benign pool.
pub struct ExperimentGrid<'a> {
    pub benign: &'a LabeledDataset,
    /// `(name, attack samples)`; every sample is counted as an attack.
    pub perturbations: Vec<(String, &'a LabeledDataset)>,
    /// `(method, model)`; the first entry is the baseline the others are compared with.
    pub models: Vec<(String, &'a Detector)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub perturbation: String,
    /// One report per model, in grid order.
    pub metrics: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub methods: Vec<String>,
    pub benign_hash: String,
    pub rows: Vec<GridRow>,
}

fn merged(benign: &LabeledDataset, attack: &LabeledDataset) -> Result<LabeledDataset> {
    if benign.rows != attack.rows {
        return Err(Error::Precondition(format!(
            "benign pool has {}-row samples, attack set {}-row samples",
            benign.rows, attack.rows
        )));
    }
    let mut ds = benign.clone();
    ds.labeled = true;
    for s in &attack.samples {
        ds.push(s.clone(), 1);
    }
    Ok(ds)
}

pub fn run_grid(grid: &ExperimentGrid<'_>) -> Result<GridResult> {
    if grid.models.is_empty() || grid.perturbations.is_empty() {
        return Err(Error::Precondition("grid needs at least one model and one perturbation".into()));
    }
    if grid.benign.is_empty() || grid.benign.count(1) > 0 {
        return Err(Error::Precondition("benign pool must be non-empty and contain only benign samples".into()));
    }
    let pool: Vec<usize> = (0..grid.benign.len()).collect();
    let benign_hash = grid.benign.content_hash(&pool);
    let mut rows = Vec::new();
    for (name, attack) in &grid.perturbations {
        if attack.is_empty() {
            return Err(Error::Precondition(format!("perturbation '{}' has no attack samples", name)));
        }
        let cell = merged(grid.benign, attack)?;
        if cell.content_hash(&pool) != benign_hash {
            return Err(Error::State(format!("benign pool changed in cell '{}'", name)));
        }
        let mut metrics = Vec::new();
        for (method, model) in &grid.models {
            let (_, preds) =
                model.classify(&cell).map_err(|e| Error::State(format!("cell ({}, {}): {}", name, method, e)))?;
            metrics.push(compute_metrics(&cell.labels, &preds)?);
        }
        rows.push(GridRow { perturbation: name.clone(), metrics });
    }
    Ok(GridResult { methods: grid.models.iter().map(|(m, _)| m.clone()).collect(), benign_hash, rows })
}

impl GridResult {
    pub fn metric(&self, perturbation: &str, method: &str) -> Option<&MetricsReport> {
        let m = self.methods.iter().position(|x| x == method)?;
        self.rows.iter().find(|r| r.perturbation == perturbation).map(|r| &r.metrics[m])
    }

    /// Baseline F1 and FNR, then F1, ΔF1, FNR and ΔFNR for every other method.
    pub fn table(&self, title: &str) -> Table {
        let base = &self.methods[0];
        let mut columns = vec![format!("{} F1", base), format!("{} FNR", base)];
        for m in &self.methods[1..] {
            columns.extend([format!("{} F1", m), format!("{} ΔF1", m), format!("{} FNR", m), format!("{} ΔFNR", m)]);
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let before = &r.metrics[0];
                let mut values = vec![before.f1, before.fnr];
                for after in &r.metrics[1..] {
                    values.extend([
                        after.f1,
                        MetricsDelta::new(Metric::F1, before, after).delta,
                        after.fnr,
                        MetricsDelta::new(Metric::Fnr, before, after).delta,
                    ]);
                }
                (r.perturbation.clone(), values)
            })
            .collect();
        Table { title: title.to_string(), corner: "Perturbation".into(), columns, rows }
    }
}

/// Before/after/Δ rows for each metric, one column block per experiment.
pub fn unperturbed_table(title: &str, experiments: &[(String, MetricsReport, MetricsReport)]) -> Table {
    let mut columns = Vec::new();
    for (name, _, _) in experiments {
        columns.extend([format!("{} Before", name), format!("{} After", name), format!("{} Δ", name)]);
    }
    let rows = Metric::ALL
        .iter()
        .map(|&metric| {
            let values = experiments
                .iter()
                .flat_map(|(_, b, a)| {
                    let d = MetricsDelta::new(metric, b, a);
                    [d.before, d.after, d.delta]
                })
                .collect();
            (metric.name().to_string(), values)
        })
        .collect();
    Table { title: title.to_string(), corner: "Metric".into(), columns, rows }
}

/// Labeled numeric table; `None` marks an undefined cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    /// Header of the label column.
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

const MISSING: &str = "—";

impl Table {
    /// Header row then one line per row; values at full precision, empty when undefined.
    pub fn to_csv(&self) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::Precondition(format!("table '{}' has no rows", self.title)));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(std::iter::once(&self.corner).chain(&self.columns)).map_err(fail)?;
        for (label, values) in &self.rows {
            let cells = values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default());
            w.write_record(std::iter::once(label.clone()).chain(cells)).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(title: &str, text: &str) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let fail = |e: csv::Error| Error::Format(format!("report table: {}", e));
        let header = r.headers().map_err(fail)?.clone();
        let corner = header.get(0).unwrap_or_default().to_string();
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(fail)?;
            let values = rec
                .iter()
                .skip(1)
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::Format(format!("report table: bad number '{}'", c)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != columns.len() {
                return Err(Error::Format("report table: ragged row".into()));
            }
            rows.push((rec.get(0).unwrap_or_default().to_string(), values));
        }
        Ok(Table { title: title.to_string(), corner, columns, rows })
    }

    /// Aligned text with four decimals and `—` for undefined cells.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(label, values)| {
                std::iter::once(label.clone())
                    .chain(values.iter().map(|v| match v {
                        Some(x) => format!("{:.4}", x),
                        None => MISSING.to_string(),
                    }))
                    .collect()
            })
            .collect();
        let header: Vec<String> = std::iter::once(self.corner.clone()).chain(self.columns.iter().cloned()).collect();
        let width =
            |i: usize| cells.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0);
        let widths: Vec<usize> = (0..header.len()).map(width).collect();
        let line = |row: &[String]| {
            let mut s = String::new();
            for (i, c) in row.iter().enumerate() {
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    let _ = write!(s, "{}{}", c, " ".repeat(pad));
                } else {
                    let _ = write!(s, "  {}{}", " ".repeat(pad), c);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = format!("{}\n", self.title);
        let head = line(&header);
        out.push_str(&head);
        out.push('\n');
        out.push_str(&"-".repeat(head.chars().count()));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.txt` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, body) in [("csv", self.to_csv()?), ("txt", self.to_text())] {
            let path = dir.join(format!("{}.{}", stem, ext));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_example() {
        let m = MetricsReport::from_counts(9, 1, 0, 10);
        assert_eq!(m.precision, Some(0.9));
        assert_eq!(m.recall, Some(1.0));
        assert!((m.f1.unwrap() - 0.947_368_421).abs() < 1e-8);
        assert_eq!(m.fnr, Some(0.0));
        assert_eq!(MetricsReport::from_counts(0, 0, 5, 5).precision, None);
        assert_eq!(compute_metrics(&[1, 1, 1], &[0, 0, 0]).unwrap().fnr, Some(1.0));
        assert!(compute_metrics(&[1], &[]).is_err());
    }

    #[test]
    fn table_round_trip_and_text() {
        let t = Table {
            title: "t".into(),
            corner: "Perturbation".into(),
            columns: vec!["A F1".into(), "A ΔF1".into()],
            rows: vec![
                ("IP Flags; TCP Len".into(), vec![Some(0.123456789), None]),
                ("x".into(), vec![Some(-1.0 / 3.0), Some(1.0)]),
            ],
        };
        let back = Table::from_csv("t", &t.to_csv().unwrap()).unwrap();
        assert_eq!(back, t);
        let text = t.to_text();
        assert!(text.contains("0.1235") && text.contains(MISSING) && text.contains("-0.3333"));
        assert_eq!(text, back.to_text());
    }
}
