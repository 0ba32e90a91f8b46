//! The end-to-end desk-scale experiment behind `reproduce`: a SYN flood and
//! an HTTP flood scenario, each with a plain detector, three adversarially
//! trained detectors and a grid of perturbed test traces.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifact::Provenance;
use crate::augment::{bfp_augment, fgsm_augment, gadot_augment, FgsmConfig, PerturbationPlan};
use crate::detector::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, run_grid, unperturbed_table, ExperimentGrid, GridResult, MetricsReport, Table};
use crate::flow::{
    dataset_from_records, label_by_endpoints, DatasetMeta, LabeledDataset, NormalizationProfile, ParsedCapture,
    DEFAULT_MAX_PACKETS, DEFAULT_WINDOW_SECONDS,
};
use crate::gan::{train_wgan_gp, GanConfig, GanModel};
use crate::perturb::{compose, PerturbReport, PerturbationSpec, Step};
use crate::synth::{attacker_set, synthesize, victim_set, Scenario};
use crate::wire::RawPacket;

/// Row label of the unperturbed test trace in every grid.
pub const UNPERTURBED: &str = "None";
pub const METHODS: [&str; 4] = ["Plain", "GADoT", "BFP", "FGSM"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Small traces and short training, for tests.
    Smoke,
    /// The default experiment size.
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoke" => Ok(Scale::Smoke),
            "desk" => Ok(Scale::Desk),
            _ => Err(Error::Config(format!("unknown scale '{}' (expected smoke or desk)", s))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Smoke => "smoke",
            Scale::Desk => "desk",
        })
    }
}

/// A named sequence of trace perturbation steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPerturbation {
    pub name: String,
    pub steps: Vec<Step>,
}

impl NamedPerturbation {
    fn of(name: &str, steps: &[&str]) -> Self {
        NamedPerturbation {
            name: name.to_string(),
            steps: steps.iter().map(|s| Step::default_for(s).expect("built-in step name")).collect(),
        }
    }
}

/// One attack type: training and test scenarios plus the perturbed traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub train: Scenario,
    pub test: Scenario,
    pub perturbations: Vec<NamedPerturbation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceConfig {
    pub seed: u64,
    pub scale: Scale,
    pub window_seconds: f64,
    pub max_packets: usize,
    pub detector: DetectorConfig,
    pub gan: GanConfig,
    pub plan: PerturbationPlan,
    pub fgsm: FgsmConfig,
    pub experiments: Vec<ExperimentConfig>,
}

/// The six SYN trace perturbations, simple then combined.
pub fn syn_perturbations() -> Vec<NamedPerturbation> {
    vec![
        NamedPerturbation::of("IP Flags", &["ip_flags"]),
        NamedPerturbation::of("TCP Len", &["tcp_len"]),
        NamedPerturbation::of("Padding Replacement", &["padding_replacement"]),
        NamedPerturbation::of("SYN Replication", &["syn_replication"]),
        NamedPerturbation::of("IP Flags + TCP Len + Padding", &["ip_flags", "tcp_len", "padding_replacement"]),
        NamedPerturbation::of("IP Flags + TCP Len + SYN Replication", &["ip_flags", "tcp_len", "syn_replication"]),
    ]
}

pub fn http_perturbations() -> Vec<NamedPerturbation> {
    vec![NamedPerturbation::of("Delay", &["delay"]), NamedPerturbation::of("Fragmentation", &["fragmentation"])]
}

impl ReproduceConfig {
    /// Configuration for `scale`, with every component seed derived from `seed`.
    pub fn new(scale: Scale, seed: u64) -> Self {
        let (train_secs, test_secs, gan_iterations, epochs) = match scale {
            Scale::Smoke => (20.0, 15.0, 60, 4),
            Scale::Desk => (90.0, 60.0, GanConfig::default().iterations, 60),
        };
        let sub = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);
        let syn = ExperimentConfig {
            name: "syn".into(),
            train: Scenario::syn_flood(sub(1), train_secs),
            test: Scenario::syn_flood(sub(2), test_secs),
            perturbations: syn_perturbations(),
        };
        let http = ExperimentConfig {
            name: "http".into(),
            train: Scenario::http_flood(sub(3), train_secs),
            test: Scenario::http_flood(sub(4), test_secs),
            perturbations: http_perturbations(),
        };
        ReproduceConfig {
            seed,
            scale,
            window_seconds: DEFAULT_WINDOW_SECONDS,
            max_packets: DEFAULT_MAX_PACKETS,
            detector: DetectorConfig { epochs, seed: sub(5), ..DetectorConfig::default() },
            gan: GanConfig { iterations: gan_iterations, seed: sub(6), ..GanConfig::default() },
            plan: PerturbationPlan::all(),
            fgsm: FgsmConfig::default(),
            experiments: vec![syn, http],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return Err(Error::Config("reproduce needs at least one experiment".into()));
        }
        for e in &self.experiments {
            e.train.validate()?;
            e.test.validate()?;
            if e.train.attack.is_none() || e.test.attack.is_none() {
                return Err(Error::Config(format!("experiment '{}' needs an attack in both scenarios", e.name)));
            }
            for p in &e.perturbations {
                if p.name == UNPERTURBED {
                    return Err(Error::Config(format!("perturbation name '{}' is reserved", UNPERTURBED)));
                }
            }
        }
        self.detector.validate(self.max_packets)?;
        self.gan.validate(self.max_packets)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self, self.seed)
    }
}

/// Extracts, normalizes (fitting a profile when `profile` is `None`) and
/// labels the samples of a scenario trace.
pub fn scenario_dataset(
    sc: &Scenario,
    packets: &[RawPacket],
    window_seconds: f64,
    max_packets: usize,
    profile: Option<&NormalizationProfile>,
    source: &str,
) -> Result<LabeledDataset> {
    let parsed = ParsedCapture::from_packets(packets);
    let meta = DatasetMeta {
        source: source.to_string(),
        window_seconds,
        max_packets,
        provenance: Some(Provenance::new(sc, sc.seed)),
    };
    let mut ds = dataset_from_records(&parsed.records, window_seconds, max_packets, profile, meta)?;
    if let (Some(a), Some(v)) = (attacker_set(sc), victim_set(sc)) {
        ds.labels = label_by_endpoints(&ds.samples, &a, &v)?;
    }
    ds.labeled = true;
    Ok(ds)
}

/// Everything produced for one attack type.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub name: String,
    pub train: LabeledDataset,
    pub benign_pool: LabeledDataset,
    pub perturbed: Vec<(String, LabeledDataset)>,
    pub perturb_reports: Vec<(String, PerturbReport)>,
    pub gan: GanModel,
    /// In [`METHODS`] order.
    pub models: Vec<Detector>,
    pub grid: GridResult,
}

impl ExperimentOutcome {
    pub fn model(&self, method: &str) -> Option<&Detector> {
        METHODS.iter().position(|&m| m == method).and_then(|i| self.models.get(i))
    }

    /// Metrics of `method` on the merged benign pool plus unperturbed attacks.
    pub fn unperturbed(&self, method: &str) -> Option<&MetricsReport> {
        self.grid.metric(UNPERTURBED, method)
    }
}

fn attack_only(ds: &LabeledDataset) -> LabeledDataset {
    ds.subset(&ds.indices_of(1))
}

pub fn run_experiment(cfg: &ReproduceConfig, e: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (w, m) = (cfg.window_seconds, cfg.max_packets);
    info!("[{}] synthesizing traces", e.name);
    let train_pkts = synthesize(&e.train)?;
    let train = scenario_dataset(&e.train, &train_pkts, w, m, None, &format!("{} train", e.name))?;
    let test_pkts = synthesize(&e.test)?;
    let test = scenario_dataset(&e.test, &test_pkts, w, m, Some(&train.profile), &format!("{} test", e.name))?;
    info!(
        "[{}] train {} benign / {} attack, test {} benign / {} attack",
        e.name,
        train.count(0),
        train.count(1),
        test.count(0),
        test.count(1)
    );
    let benign_pool = test.subset(&test.indices_of(0));

    let attackers = attacker_set(&e.test).expect("validated");
    let victims = victim_set(&e.test).expect("validated");
    let mut perturbed = vec![(UNPERTURBED.to_string(), attack_only(&test))];
    let mut perturb_reports = Vec::new();
    for (k, p) in e.perturbations.iter().enumerate() {
        let spec = PerturbationSpec {
            seed: e.test.seed.wrapping_add(100 + k as u64),
            attackers: attackers.clone(),
            victims: victims.clone(),
            steps: p.steps.clone(),
        };
        let (pkts, report) = compose(&test_pkts, &spec)?;
        let ds = scenario_dataset(&e.test, &pkts, w, m, Some(&train.profile), &format!("{} {}", e.name, p.name))?;
        perturbed.push((p.name.clone(), attack_only(&ds)));
        perturb_reports.push((p.name.clone(), report));
    }

    let provenance = cfg.provenance();
    let det_cfg = cfg.detector.clone();
    info!("[{}] training plain detector", e.name);
    let mut plain = Detector::train(&train, det_cfg.clone())?;
    plain.meta.provenance = Some(provenance.clone());

    info!("[{}] training WGAN-GP", e.name);
    let benign_train = train.subset(&train.indices_of(0));
    let mut gan = train_wgan_gp(&benign_train, cfg.gan.clone())?;
    gan.provenance = Some(provenance.clone());

    let aug_seed = cfg.seed ^ 0xa5a5;
    let mut models = vec![plain];
    for method in &METHODS[1..] {
        let ds = match *method {
            "GADoT" => gadot_augment(&train, &cfg.plan, &gan, aug_seed)?,
            "BFP" => bfp_augment(&train, &cfg.plan, aug_seed)?,
            _ => fgsm_augment(&train, &models[0], cfg.fgsm, aug_seed)?,
        };
        info!("[{}] training {} detector on {} samples", e.name, method, ds.len());
        let mut d = Detector::train(&ds, det_cfg.clone())?;
        d.meta.provenance = Some(provenance.clone());
        models.push(d);
    }

    let grid = run_grid(&ExperimentGrid {
        benign: &benign_pool,
        perturbations: perturbed.iter().map(|(n, d)| (n.clone(), d)).collect(),
        models: METHODS.iter().zip(&models).map(|(n, d)| (n.to_string(), d)).collect(),
    })?;
    Ok(ExperimentOutcome { name: e.name.clone(), train, benign_pool, perturbed, perturb_reports, gan, models, grid })
}

/// Report tables and the per-experiment outcomes.
#[derive(Debug, Clone)]
pub struct ReproduceReport {
    pub config: ReproduceConfig,
    pub outcomes: Vec<ExperimentOutcome>,
    pub tables: Vec<(String, Table)>,
}

impl ReproduceReport {
    pub fn outcome(&self, name: &str) -> Option<&ExperimentOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    /// Machine-readable summary of every grid cell and trace rewrite.
    pub fn summary(&self) -> serde_json::Value {
        let experiments: Vec<_> = self
            .outcomes
            .iter()
            .map(|o| {
                json!({
                    "name": o.name,
                    "benign_pool_hash": o.grid.benign_hash,
                    "benign_pool": o.benign_pool.len(),
                    "train": {"benign": o.train.count(0), "attack": o.train.count(1)},
                    "grid": o.grid.rows.iter().map(|r| json!({
                        "perturbation": r.perturbation,
                        "metrics": o.grid.methods.iter().zip(&r.metrics).map(|(m, x)| json!({"method": m, "report": x})).collect::<Vec<_>>(),
                    })).collect::<Vec<_>>(),
                    "perturb_reports": o.perturb_reports.iter().map(|(n, r)| json!({"perturbation": n, "report": r})).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "provenance": self.config.provenance(),
            "config": self.config,
            "experiments": experiments,
        })
    }

    /// Writes `<stem>.csv`/`<stem>.txt` per table, `summary.json`, and
    /// the trained checkpoints under `models/`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (stem, t) in &self.tables {
            t.write(dir, stem)?;
        }
        let summary = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&self.summary()).expect("summary serialises") + "\n";
        std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))?;
        let models = dir.join("models");
        std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        for o in &self.outcomes {
            o.gan.save(models.join(format!("{}_gan.ckpt", o.name)))?;
            for (m, d) in METHODS.iter().zip(&o.models) {
                d.save(models.join(format!("{}_{}.ckpt", o.name, m.to_ascii_lowercase())))?;
            }
        }
        Ok(())
    }
}

/// Table title and file stem for the grid of experiment `name`.
fn grid_table_name(name: &str) -> (String, String) {
    match name {
        "syn" => ("table4_syn".into(), "Evaluation of the SYN model against perturbed traces".into()),
        "http" => ("table5_http".into(), "Evaluation of the HTTP model against perturbed traces".into()),
        other => (format!("grid_{}", other), format!("Evaluation of the {} model against perturbed traces", other)),
    }
}

pub fn reproduce(cfg: &ReproduceConfig) -> Result<ReproduceReport> {
    cfg.validate()?;
    let mut outcomes = Vec::new();
    for e in &cfg.experiments {
        outcomes.push(run_experiment(cfg, e)?);
    }
    let before_after: Vec<(String, MetricsReport, MetricsReport)> = outcomes
        .iter()
        .map(|o| {
            let before = o.unperturbed("Plain").cloned().expect("grid has the unperturbed row");
            let after = o.unperturbed("GADoT").cloned().expect("grid has the unperturbed row");
            (o.name.to_ascii_uppercase(), before, after)
        })
        .collect();
    let mut tables = vec![(
        "table3".to_string(),
        unperturbed_table("Unperturbed test traces before and after GADoT training", &before_after),
    )];
    for o in &outcomes {
        let (stem, title) = grid_table_name(&o.name);
        tables.push((stem, o.grid.table(&title)));
    }
    Ok(ReproduceReport { config: cfg.clone(), outcomes, tables })
}

/// Metrics of `model` on `ds` at its threshold.
pub fn evaluate(model: &Detector, ds: &LabeledDataset) -> Result<MetricsReport> {
    ds.require_labels()?;
    let (_, preds) = model.classify(ds)?;
    compute_metrics(&ds.labels, &preds)
}
