//! Subcommands. Each one loads its inputs, calls into the library and
//! writes its artifact; errors carry the subcommand name.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use floodguard::artifact::Provenance;
use floodguard::augment::{bfp_augment, fgsm_augment, gadot_augment, FgsmConfig, PerturbationPlan};
use floodguard::detector::Detector;
use floodguard::eval::unperturbed_table;
use floodguard::flow::pcap::{read_packets, write_capture};
use floodguard::flow::{dataset_from_records, label_by_endpoints, DatasetMeta, IpSet, LabeledDataset, ParsedCapture};
use floodguard::gan::{train_wgan_gp, GanModel};
use floodguard::perturb::{compose, PerturbationSpec};
use floodguard::pipeline::{evaluate, reproduce, scenario_dataset, ReproduceConfig, Scale};
use floodguard::synth::{synthesize, Scenario};
use log::{info, warn};
use serde_json::json;

use crate::config::PipelineConfig;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic capture from a scenario.
    Synth(SynthArgs),
    /// Extract normalized flow samples from a capture.
    Extract(ExtractArgs),
    /// Train the WGAN-GP on the benign samples of a dataset.
    TrainGan(TrainGanArgs),
    /// Build an adversarial training set.
    Augment(AugmentArgs),
    /// Train a detector.
    Train(TrainArgs),
    /// Rewrite the attack packets of a capture.
    Perturb(PerturbArgs),
    /// Score every sample of a dataset.
    Classify(ClassifyArgs),
    /// Detection metrics of a model on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Run both experiments end to end and write the report tables.
    Reproduce(ReproduceArgs),
}

impl Command {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<()> {
        let (name, result) = match self {
            Command::Synth(a) => ("synth", synth(a, cfg)),
            Command::Extract(a) => ("extract", extract(a, cfg)),
            Command::TrainGan(a) => ("train-gan", train_gan(a, cfg)),
            Command::Augment(a) => ("augment", augment(a, cfg)),
            Command::Train(a) => ("train", train(a, cfg)),
            Command::Perturb(a) => ("perturb", perturb(a)),
            Command::Classify(a) => ("classify", classify(a)),
            Command::Evaluate(a) => ("evaluate", evaluate_cmd(a)),
            Command::Reproduce(a) => ("reproduce", reproduce_cmd(a, cfg)),
        };
        result.with_context(|| format!("{} failed", name))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AttackPreset {
    Syn,
    Http,
    Benign,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario file (TOML); overrides the preset.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "syn")]
    kind: AttackPreset,
    /// Trace length in seconds for a preset.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the resolved scenario here.
    #[arg(long)]
    dump_scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    Ok(Scenario::load(path)?)
}

fn synth(a: &SynthArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut sc = match &a.scenario {
        Some(p) => load_scenario(p)?,
        None => {
            let seed = cfg.seed.unwrap_or(1);
            match a.kind {
                AttackPreset::Syn => Scenario::syn_flood(seed, a.duration),
                AttackPreset::Http => Scenario::http_flood(seed, a.duration),
                AttackPreset::Benign => Scenario { seed, duration: a.duration, ..Scenario::default() },
            }
        }
    };
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    sc.validate()?;
    let pkts = synthesize(&sc)?;
    write_capture(&a.out, &pkts)?;
    if let Some(p) = &a.dump_scenario {
        std::fs::write(p, sc.to_toml_string()).map_err(|e| floodguard::Error::io(p, e))?;
    }
    println!("wrote {} packets to {}", pkts.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Time window in seconds [default: 10].
    #[arg(long)]
    window: Option<f64>,
    /// Packets per sample [default: 10].
    #[arg(long)]
    max_packets: Option<usize>,
    /// Label flows with the attacker and victim sets of this scenario.
    #[arg(long, conflicts_with_all = ["attackers", "victims"])]
    scenario: Option<PathBuf>,
    /// Attacker addresses, e.g. `172.16.0.0/16,10.0.0.9`.
    #[arg(long)]
    attackers: Option<String>,
    /// Victim addresses; any host when omitted.
    #[arg(long, requires = "attackers")]
    victims: Option<String>,
    /// Reuse the normalization profile of this dataset instead of fitting one.
    #[arg(long)]
    profile: Option<PathBuf>,
}

fn extract(a: &ExtractArgs, cfg: &PipelineConfig) -> Result<()> {
    let window = a.window.or(cfg.window_seconds).unwrap_or(floodguard::flow::DEFAULT_WINDOW_SECONDS);
    let max_packets = a.max_packets.or(cfg.max_packets).unwrap_or(floodguard::flow::DEFAULT_MAX_PACKETS);
    let pkts = read_packets(&a.input)?;
    let profile = match &a.profile {
        Some(p) => Some(LabeledDataset::load(p)?.profile),
        None => None,
    };
    let source = a.input.display().to_string();
    let ds = match (&a.scenario, &a.attackers) {
        (Some(p), _) => scenario_dataset(&load_scenario(p)?, &pkts, window, max_packets, profile.as_ref(), &source)?,
        (None, attackers) => {
            let meta = DatasetMeta {
                source,
                window_seconds: window,
                max_packets,
                provenance: Some(Provenance::new(&json!({"window_seconds": window, "max_packets": max_packets}), 0)),
            };
            let parsed = ParsedCapture::from_packets(&pkts);
            let mut ds = dataset_from_records(&parsed.records, window, max_packets, profile.as_ref(), meta)?;
            if let Some(att) = attackers {
                let att: IpSet = att.parse()?;
                let vic: IpSet = a.victims.as_deref().unwrap_or("").parse()?;
                ds.labels = label_by_endpoints(&ds.samples, &att, &vic)?;
                ds.labeled = true;
            }
            ds
        }
    };
    ds.save(&a.out)?;
    if ds.labeled {
        println!("{} samples ({} benign, {} attack) -> {}", ds.len(), ds.count(0), ds.count(1), a.out.display());
    } else {
        println!("{} unlabeled samples -> {}", ds.len(), a.out.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainGanArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Generator iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn train_gan(a: &TrainGanArgs, cfg: &PipelineConfig) -> Result<()> {
    let ds = LabeledDataset::load(&a.data)?;
    let benign = if ds.labeled {
        ds.subset(&ds.indices_of(0))
    } else {
        warn!("{} is unlabeled; treating every sample as benign", a.data.display());
        ds
    };
    let mut config = cfg.gan();
    if let Some(n) = a.iters {
        config.iterations = n;
    }
    if let Some(s) = a.seed.or(cfg.seed) {
        config.seed = s;
    }
    let model = train_wgan_gp(&benign, config)?;
    model.save(&a.out)?;
    if let Some(last) = model.history.last() {
        info!("final critic loss {:.4}, W estimate {:.4}", last.critic_loss, last.wasserstein);
    }
    println!("trained on {} benign samples -> {}", benign.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Gadot,
    Bfp,
    Fgsm,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Comma-separated features or `all` [default: all].
    #[arg(long)]
    plan: Option<String>,
    /// Generator checkpoint (gadot).
    #[arg(long)]
    gan: Option<PathBuf>,
    /// Detector checkpoint (fgsm).
    #[arg(long)]
    model: Option<PathBuf>,
    /// FGSM step size [default: 0.1].
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn augment(a: &AugmentArgs, cfg: &PipelineConfig) -> Result<()> {
    let ds = LabeledDataset::load(&a.data)?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let plan = match &a.plan {
        Some(p) => p.parse::<PerturbationPlan>()?,
        None => cfg.plan.clone().unwrap_or_else(PerturbationPlan::all),
    };
    let usage = |m: &str| floodguard::Error::Config(m.to_string());
    let out = match a.method {
        Method::Gadot => {
            let path = a.gan.as_ref().ok_or_else(|| usage("--method gadot needs --gan"))?;
            gadot_augment(&ds, &plan, &GanModel::load(path)?, seed)?
        }
        Method::Bfp => bfp_augment(&ds, &plan, seed)?,
        Method::Fgsm => {
            let path = a.model.as_ref().ok_or_else(|| usage("--method fgsm needs --model"))?;
            let epsilon = a.eps.or(cfg.fgsm.map(|f| f.epsilon)).unwrap_or(FgsmConfig::default().epsilon);
            fgsm_augment(&ds, &Detector::load(path)?, FgsmConfig { epsilon }, seed)?
        }
    };
    out.save(&a.out)?;
    println!("{} samples ({} benign, {} attack) -> {}", out.len(), out.count(0), out.count(1), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn train(a: &TrainArgs, cfg: &PipelineConfig) -> Result<()> {
    let ds = LabeledDataset::load(&a.data)?;
    let mut config = cfg.detector();
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed.or(cfg.seed) {
        config.seed = s;
    }
    let model = Detector::train(&ds, config)?;
    model.save(&a.out)?;
    println!(
        "trained {} epochs (kept epoch {}) on {} samples -> {}",
        model.meta.epochs_run,
        model.meta.best_epoch,
        ds.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Perturbation spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn perturb(a: &PerturbArgs) -> Result<()> {
    let mut spec = PerturbationSpec::load(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let pkts = read_packets(&a.input)?;
    let (out, report) = compose(&pkts, &spec)?;
    write_capture(&a.out, &out)?;
    println!("{}", report);
    Ok(())
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV with one `index,flow,window,score,label` line per sample.
    #[arg(long)]
    out: PathBuf,
}

fn classify(a: &ClassifyArgs) -> Result<()> {
    let model = Detector::load(&a.model)?;
    let ds = LabeledDataset::load(&a.data)?;
    let (scores, labels) = model.classify(&ds)?;
    let mut text = String::from("index,flow,window,score,label\n");
    for (i, ((s, score), label)) in ds.samples.iter().zip(&scores).zip(&labels).enumerate() {
        let _ = writeln!(text, "{},\"{}\",{},{},{}", i, s.key, s.window, score, label);
    }
    std::fs::write(&a.out, text).map_err(|e| floodguard::Error::io(&a.out, e))?;
    let attacks = labels.iter().filter(|&&l| l == 1).count();
    println!("{} samples, {} classified as attack -> {}", ds.len(), attacks, a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Model to compare against; prints before/after/Δ columns.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Also write the metrics as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let ds = LabeledDataset::load(&a.data)?;
    if !ds.labeled {
        bail!(floodguard::Error::Precondition(format!("{} has no labels", a.data.display())));
    }
    let after = evaluate(&Detector::load(&a.model)?, &ds)?;
    let mut doc = json!({"model": a.model, "data": a.data, "metrics": after});
    match &a.baseline {
        Some(b) => {
            let before = evaluate(&Detector::load(b)?, &ds)?;
            let name = a.data.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
            print!("{}", unperturbed_table("Evaluation", &[(name, before, after)]).to_text());
            doc["baseline"] = json!({"model": b, "metrics": before});
        }
        None => print!("{}", unperturbed_table("Evaluation", &[("Model".into(), after, after)]).to_text()),
    }
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        std::fs::write(out, text).map_err(|e| floodguard::Error::io(out, e))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// smoke or desk [default: desk].
    #[arg(long)]
    scale: Option<Scale>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

/// Experiment config from the scale and seed, with config-file overrides.
/// Component seeds always derive from the main seed.
pub fn reproduce_config(seed: Option<u64>, scale: Option<Scale>, cfg: &PipelineConfig) -> ReproduceConfig {
    let seed = seed.or(cfg.seed).unwrap_or(7);
    let mut rc = ReproduceConfig::new(scale.or(cfg.scale).unwrap_or(Scale::Desk), seed);
    if let Some(w) = cfg.window_seconds {
        rc.window_seconds = w;
    }
    if let Some(m) = cfg.max_packets {
        rc.max_packets = m;
    }
    if let Some(p) = &cfg.plan {
        rc.plan = p.clone();
    }
    if let Some(f) = cfg.fgsm {
        rc.fgsm = f;
    }
    if let Some(d) = &cfg.detector {
        rc.detector = floodguard::detector::DetectorConfig { seed: rc.detector.seed, ..d.clone() };
    }
    if let Some(g) = &cfg.gan {
        rc.gan = floodguard::gan::GanConfig { seed: rc.gan.seed, ..g.clone() };
    }
    rc
}

fn reproduce_cmd(a: &ReproduceArgs, cfg: &PipelineConfig) -> Result<()> {
    let rc = reproduce_config(a.seed, a.scale, cfg);
    info!("reproduce: scale {} seed {}", rc.scale, rc.seed);
    let report = reproduce(&rc)?;
    report.write(&a.out)?;
    for (_, t) in &report.tables {
        println!("{}", t.to_text());
    }
    println!("reports written to {}", a.out.display());
    Ok(())
}
