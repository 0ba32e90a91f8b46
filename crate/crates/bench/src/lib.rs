//! Fixtures shared by the benchmarks.

use floodguard::flow::LabeledDataset;
use floodguard::perturb::{PerturbationSpec, Step};
use floodguard::pipeline::scenario_dataset;
use floodguard::synth::{attacker_set, synthesize, victim_set, Scenario};
use floodguard::wire::RawPacket;

/// A SYN flood trace of `seconds` seconds and its scenario.
pub fn syn_trace(seconds: f64) -> (Scenario, Vec<RawPacket>) {
    let sc = Scenario::syn_flood(1, seconds);
    let pkts = synthesize(&sc).expect("built-in scenario synthesizes");
    (sc, pkts)
}

/// Labeled samples of a SYN flood trace.
pub fn syn_dataset(seconds: f64) -> LabeledDataset {
    let (sc, pkts) = syn_trace(seconds);
    scenario_dataset(&sc, &pkts, 10.0, 10, None, "bench").expect("extraction succeeds")
}

/// The combined IP flags, TCP length and SYN replication rewrite.
pub fn combined_spec(sc: &Scenario) -> PerturbationSpec {
    PerturbationSpec {
        seed: 3,
        attackers: attacker_set(sc).expect("scenario has an attack"),
        victims: victim_set(sc).expect("scenario has an attack"),
        steps: ["ip_flags", "tcp_len", "syn_replication"]
            .iter()
            .map(|s| Step::default_for(s).expect("built-in step"))
            .collect(),
    }
}
