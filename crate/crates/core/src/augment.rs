//! Adversarial training sets: GAN-donor feature replacement (`gadot`), the
//! same procedure with real benign donors (`bfp`), and FGSM.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::flow::{Feature, LabeledDataset, Origin, Sample, NUM_FEATURES};
use crate::gan::GanModel;

/// A perturbable feature: one matrix column or the number of real rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PlanFeature {
    Column(Feature),
    FlowLength,
}

impl fmt::Display for PlanFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanFeature::Column(c) => write!(f, "{}", c),
            PlanFeature::FlowLength => f.write_str("flow_length"),
        }
    }
}

impl TryFrom<String> for PlanFeature {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PlanFeature> for String {
    fn from(f: PlanFeature) -> Self {
        f.to_string()
    }
}

impl FromStr for PlanFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        if norm == "flow_length" {
            Ok(PlanFeature::FlowLength)
        } else {
            s.parse().map(PlanFeature::Column)
        }
    }
}

/// Ordered list of distinct features to perturb, one appended copy each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PlanFeature>", into = "Vec<PlanFeature>")]
pub struct PerturbationPlan(Vec<PlanFeature>);

impl PerturbationPlan {
    pub fn new(features: Vec<PlanFeature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Config("perturbation plan is empty".into()));
        }
        for (i, f) in features.iter().enumerate() {
            if features[..i].contains(f) {
                return Err(Error::Config(format!("perturbation plan lists '{}' twice", f)));
            }
        }
        Ok(PerturbationPlan(features))
    }

    /// The eleven columns followed by `flow_length`.
    pub fn all() -> Self {
        let mut v: Vec<PlanFeature> = Feature::ALL.iter().map(|&c| PlanFeature::Column(c)).collect();
        v.push(PlanFeature::FlowLength);
        PerturbationPlan(v)
    }

    pub fn features(&self) -> &[PlanFeature] {
        &self.0
    }
}

impl TryFrom<Vec<PlanFeature>> for PerturbationPlan {
    type Error = Error;

    fn try_from(v: Vec<PlanFeature>) -> Result<Self> {
        PerturbationPlan::new(v)
    }
}

impl From<PerturbationPlan> for Vec<PlanFeature> {
    fn from(p: PerturbationPlan) -> Self {
        p.0
    }
}

impl FromStr for PerturbationPlan {
    type Err = Error;

    /// Comma-separated feature names, or `all`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(PerturbationPlan::all());
        }
        PerturbationPlan::new(s.split(',').map(str::parse).collect::<Result<_>>()?)
    }
}

impl fmt::Display for PerturbationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&names.join(","))
    }
}

/// Source of replacement values for the DDoS samples of one copy.
trait Donors {
    /// Value for column `col` of target row `row` from donor `i`.
    fn value(&self, i: usize, row: usize, col: usize) -> f64;
}

struct FakeDonors<'a> {
    batch: &'a crate::gan::FakeBenignBatch,
}

impl Donors for FakeDonors<'_> {
    fn value(&self, i: usize, row: usize, col: usize) -> f64 {
        self.batch.sample(i)[row * NUM_FEATURES + col]
    }
}

/// Real benign samples; target row `j` reads the donor's real row `j mod flow_length`
/// so zero padding is never donated.
struct BenignDonors<'a> {
    picks: Vec<&'a Sample>,
}

impl Donors for BenignDonors<'_> {
    fn value(&self, i: usize, row: usize, col: usize) -> f64 {
        let d = self.picks[i];
        d.get(row % d.flow_length.max(1), col)
    }
}

/// Lines 5-10 of the procedure: a copy of `t` whose DDoS samples take
/// donor values for `f`.
fn perturbed_copy(t: &LabeledDataset, f: PlanFeature, donors: &dyn Donors, origin: Origin) -> LabeledDataset {
    let mut tc = t.clone();
    let mut k = 0;
    for (s, &y) in tc.samples.iter_mut().zip(&t.labels) {
        if y != 1 {
            continue;
        }
        match f {
            PlanFeature::FlowLength => {
                for row in s.flow_length..t.rows {
                    for col in 0..NUM_FEATURES {
                        s.set(row, col, donors.value(k, row, col));
                    }
                }
                s.flow_length = t.rows;
            }
            PlanFeature::Column(c) => {
                for row in 0..s.flow_length {
                    s.set(row, c.column(), donors.value(k, row, c.column()));
                }
            }
        }
        s.origin = origin;
        k += 1;
    }
    tc
}

fn mark_original(mut t: LabeledDataset) -> LabeledDataset {
    t.samples.iter_mut().for_each(|s| s.origin = Origin::Original);
    t
}

fn append(dst: &mut LabeledDataset, src: LabeledDataset) {
    dst.samples.extend(src.samples);
    dst.labels.extend(src.labels);
}

fn require_ddos(t: &LabeledDataset) -> Result<usize> {
    t.require_labels()?;
    let n = t.count(1);
    if n == 0 {
        return Err(Error::Precondition("dataset has no DDoS samples to perturb".into()));
    }
    Ok(n)
}

/// Seed of the donor draw for the `k`-th plan entry of a run seeded with `seed`.
pub fn donor_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64 + 1)
}

/// Appends one copy of `t` per plan feature with that feature of every DDoS
/// sample replaced by generator output, then balances the classes.
pub fn gadot_augment(
    t: &LabeledDataset,
    plan: &PerturbationPlan,
    generator: &GanModel,
    seed: u64,
) -> Result<LabeledDataset> {
    let n = require_ddos(t)?;
    if generator.rows != t.rows {
        return Err(Error::Precondition(format!(
            "generator produces {}-row samples, dataset has {} rows",
            generator.rows, t.rows
        )));
    }
    let base = mark_original(t.clone());
    let mut adv = base.clone();
    for (k, &f) in plan.features().iter().enumerate() {
        let batch = generator.generate(n, donor_seed(seed, k))?;
        append(&mut adv, perturbed_copy(&base, f, &FakeDonors { batch: &batch }, Origin::Gadot));
    }
    adv.meta.source = format!("gadot plan={} seed={} <- {}", plan, seed, t.meta.source);
    balance(&adv, seed)
}

/// As [`gadot_augment`] with donors drawn with replacement from the benign samples of `t`.
pub fn bfp_augment(t: &LabeledDataset, plan: &PerturbationPlan, seed: u64) -> Result<LabeledDataset> {
    let n = require_ddos(t)?;
    let benign: Vec<&Sample> = t.indices_of(0).into_iter().map(|i| &t.samples[i]).collect();
    if benign.is_empty() {
        return Err(Error::Precondition("benign feature perturbation needs benign samples".into()));
    }
    let base = mark_original(t.clone());
    let mut adv = base.clone();
    for (k, &f) in plan.features().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(donor_seed(seed, k));
        let picks = (0..n).map(|_| benign[rng.random_range(0..benign.len())]).collect();
        append(&mut adv, perturbed_copy(&base, f, &BenignDonors { picks }, Origin::Bfp));
    }
    adv.meta.source = format!("bfp plan={} seed={} <- {}", plan, seed, t.meta.source);
    balance(&adv, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgsmConfig {
    /// L-infinity bound in normalised units.
    pub epsilon: f64,
}

impl Default for FgsmConfig {
    fn default() -> Self {
        FgsmConfig { epsilon: 0.1 }
    }
}

/// `clip(x + eps * sign(grad_x BCE(model(x), 1)), 0, 1)` over all rows,
/// padding included, for a `[n, rows*11]` batch.
pub fn fgsm_perturb(model: &Detector, x: &crate::autodiff::Tensor, epsilon: f64) -> Result<crate::autodiff::Tensor> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be >= 0, got {}", epsilon)));
    }
    let targets = vec![1.0; x.shape()[0]];
    let grad = model.input_gradient(x, &targets)?;
    Ok(x.zip_map(&grad, |v, g| {
        let step = if g > 0.0 {
            epsilon
        } else if g < 0.0 {
            -epsilon
        } else {
            0.0
        };
        (v + step).clamp(0.0, 1.0)
    }))
}

/// Appends an FGSM copy of every DDoS sample of `t`, then balances.
pub fn fgsm_augment(t: &LabeledDataset, model: &Detector, config: FgsmConfig, seed: u64) -> Result<LabeledDataset> {
    require_ddos(t)?;
    let idx = t.indices_of(1);
    let x = t.batch(&idx);
    let adv_x = fgsm_perturb(model, &x, config.epsilon)?;
    let width = t.rows * NUM_FEATURES;
    let mut adv = mark_original(t.clone());
    for (k, &i) in idx.iter().enumerate() {
        let mut s = t.samples[i].clone();
        s.matrix = adv_x.data()[k * width..(k + 1) * width].to_vec();
        s.flow_length = s.matrix.chunks(NUM_FEATURES).rposition(|r| r.iter().any(|&v| v != 0.0)).map_or(0, |p| p + 1);
        s.origin = Origin::Fgsm;
        adv.push(s, 1);
    }
    adv.meta.source = format!("fgsm eps={} <- {}", config.epsilon, t.meta.source);
    balance(&adv, seed)
}

/// Duplicates benign samples round-robin over a seeded shuffle until both
/// classes have the same size. A dataset with at least as many benign as
/// DDoS samples is returned unchanged.
pub fn balance(t: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    t.require_labels()?;
    let mut benign = t.indices_of(0);
    if benign.is_empty() {
        return Err(Error::Precondition("cannot balance a dataset without benign samples".into()));
    }
    let need = t.count(1).saturating_sub(benign.len());
    let mut out = t.clone();
    benign.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in benign.iter().cycle().take(need) {
        let mut s = t.samples[i].clone();
        s.origin = Origin::DuplicateBenign;
        out.push(s, 0);
    }
    Ok(out)
}
