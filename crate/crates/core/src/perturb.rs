//! Problem-space perturbation of attack traces. Every step rewrites real
//! packets (checksums recomputed) so the trace stays valid and the attack
//! keeps its purpose: SYNs stay SYNs and the victim endpoint is untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowKey, IpSet};
use crate::wire::{Ipv4Frame, RawPacket, Timestamp, MAX_TCP_PAYLOAD, TCP_ACK, TCP_FIN, TCP_PSH, TCP_SYN};

/// One perturbation with its parameters. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// Sets the DF bit of each attack packet with probability `p_df`.
    IpFlags {
        #[serde(default = "half")]
        p_df: f64,
    },
    /// Appends a random payload to each attack SYN.
    TcpLen {
        #[serde(default = "default_payload")]
        bytes: [usize; 2],
    },
    /// Follows each attack SYN with dummy ACK packets of the same flow.
    PaddingReplacement {
        #[serde(default = "default_count")]
        count: [u32; 2],
        #[serde(default = "default_gap")]
        delay: [f64; 2],
    },
    /// Repeats each attack SYN after a delay.
    SynReplication {
        #[serde(default = "default_replicas")]
        count: [u32; 2],
        #[serde(default = "default_gap")]
        delay: [f64; 2],
    },
    /// Delays each attacker packet after the first of its flow; later
    /// packets of the flow shift along.
    Delay {
        #[serde(default = "default_delay")]
        seconds: [f64; 2],
    },
    /// Splits attack TCP payloads into segments of at most `max_segment` bytes.
    Fragmentation {
        #[serde(default = "default_mss")]
        max_segment: usize,
    },
}

fn half() -> f64 {
    0.5
}
fn default_payload() -> [usize; 2] {
    [1, 500]
}
fn default_count() -> [u32; 2] {
    [1, 8]
}
fn default_replicas() -> [u32; 2] {
    [1, 4]
}
fn default_gap() -> [f64; 2] {
    [0.01, 0.3]
}
fn default_delay() -> [f64; 2] {
    [0.1, 1.0]
}
fn default_mss() -> usize {
    16
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::IpFlags { .. } => "ip_flags",
            Step::TcpLen { .. } => "tcp_len",
            Step::PaddingReplacement { .. } => "padding_replacement",
            Step::SynReplication { .. } => "syn_replication",
            Step::Delay { .. } => "delay",
            Step::Fragmentation { .. } => "fragmentation",
        }
    }

    /// The step with its documented default parameters.
    pub fn default_for(name: &str) -> Result<Step> {
        Ok(match name {
            "ip_flags" => Step::IpFlags { p_df: half() },
            "tcp_len" => Step::TcpLen { bytes: default_payload() },
            "padding_replacement" | "padding" => {
                Step::PaddingReplacement { count: default_count(), delay: default_gap() }
            }
            "syn_replication" => Step::SynReplication { count: default_replicas(), delay: default_gap() },
            "delay" => Step::Delay { seconds: default_delay() },
            "fragmentation" => Step::Fragmentation { max_segment: default_mss() },
            other => return Err(Error::Config(format!("unknown perturbation '{}'", other))),
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Step::IpFlags { p_df } => (0.0..=1.0).contains(p_df),
            Step::TcpLen { bytes } => bytes[0] <= bytes[1],
            Step::PaddingReplacement { count, delay } | Step::SynReplication { count, delay } => {
                count[0] <= count[1] && count[1] <= 64 && valid_range(delay)
            }
            Step::Delay { seconds } => valid_range(seconds),
            Step::Fragmentation { max_segment } => *max_segment >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid parameters for {}: {:?}", self.name(), self)))
        }
    }
}

fn valid_range(r: &[f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1] && r[1] <= 3600.0
}

/// Ordered perturbation steps plus the attack filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    #[serde(default)]
    pub seed: u64,
    /// Source addresses of attack packets.
    pub attackers: IpSet,
    /// Destination addresses of attack packets; empty means any.
    #[serde(default)]
    pub victims: IpSet,
    pub steps: Vec<Step>,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Config("perturbation spec lists no steps".into()));
        }
        if self.attackers.is_empty() {
            return Err(Error::Config("perturbation spec needs attacker addresses".into()));
        }
        self.steps.iter().try_for_each(Step::validate)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: PerturbationSpec =
            toml::from_str(s).map_err(|e| Error::Config(format!("perturbation spec: {}", e)))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PerturbationSpec::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("spec serialises to TOML")
    }

    /// True when the frame is IPv4 from an attacker to a victim.
    pub fn is_attack(&self, frame: &[u8]) -> bool {
        let mut f = frame.to_vec();
        Ipv4Frame::new(&mut f).is_ok_and(|ip| {
            self.attackers.contains(ip.src()) && (self.victims.is_empty() || self.victims.contains(ip.dst()))
        })
    }
}

/// Packets touched or added by one step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub kind: String,
    /// Existing packets rewritten or retimed.
    pub modified: usize,
    /// Packets inserted.
    pub inserted: usize,
    /// Payloads shortened to the maximum segment size.
    pub clamped: usize,
    /// Attack packets the step could not apply to.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub packets_in: usize,
    pub packets_out: usize,
    pub attack_packets_in: usize,
    pub steps: Vec<StepReport>,
}

impl fmt::Display for PerturbReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string_pretty(self).map_err(|_| fmt::Error)?)
    }
}

/// Working packet with the metadata the steps need.
struct Pkt {
    raw: RawPacket,
    attack: bool,
}

fn frame_view(p: &mut RawPacket) -> Result<Ipv4Frame<'_>> {
    Ipv4Frame::new(&mut p.frame).map_err(|e| Error::State(format!("attack filter admitted a non-IPv4 frame: {}", e)))
}

fn is_syn(p: &mut RawPacket) -> bool {
    Ipv4Frame::new(&mut p.frame).and_then(|f| f.tcp_flags()).is_ok_and(|fl| fl & TCP_SYN != 0 && fl & TCP_ACK == 0)
}

fn next_id(frame: &mut Ipv4Frame<'_>, k: u32) {
    let id = frame.id().wrapping_add(k as u16);
    frame.set_id(id);
}

/// Applies `spec` to `packets` and returns the perturbed trace sorted by
/// timestamp, with a per-step report.
pub fn compose(packets: &[RawPacket], spec: &PerturbationSpec) -> Result<(Vec<RawPacket>, PerturbReport)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pkts: Vec<Pkt> = packets.iter().map(|p| Pkt { attack: spec.is_attack(&p.frame), raw: p.clone() }).collect();
    let mut report = PerturbReport {
        packets_in: packets.len(),
        attack_packets_in: pkts.iter().filter(|p| p.attack).count(),
        ..PerturbReport::default()
    };
    for step in &spec.steps {
        let mut r = StepReport { kind: step.name().to_string(), ..StepReport::default() };
        match step {
            Step::IpFlags { p_df } => ip_flags(&mut pkts, *p_df, &mut rng, &mut r)?,
            Step::TcpLen { bytes } => tcp_len(&mut pkts, *bytes, &mut rng, &mut r)?,
            Step::PaddingReplacement { count, delay } => padding(&mut pkts, *count, *delay, &mut rng, &mut r)?,
            Step::SynReplication { count, delay } => replicate(&mut pkts, *count, *delay, &mut rng, &mut r)?,
            Step::Delay { seconds } => delay_flows(&mut pkts, *seconds, &mut rng, &mut r)?,
            Step::Fragmentation { max_segment } => fragment(&mut pkts, *max_segment, &mut r)?,
        }
        if r.modified + r.inserted == 0 {
            log::warn!("perturbation {} changed no packets", r.kind);
        }
        report.steps.push(r);
    }
    let mut out: Vec<RawPacket> = pkts.into_iter().map(|p| p.raw).collect();
    out.sort_by_key(|p| p.ts);
    report.packets_out = out.len();
    Ok((out, report))
}

fn draw_u32(rng: &mut ChaCha8Rng, r: [u32; 2]) -> u32 {
    rng.random_range(r[0]..=r[1])
}

fn draw_secs(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn after(ts: Timestamp, secs: f64) -> Timestamp {
    Timestamp(ts.0 + ((secs * 1e6).round() as u64).max(1))
}

fn ip_flags(pkts: &mut [Pkt], p_df: f64, rng: &mut ChaCha8Rng, r: &mut StepReport) -> Result<()> {
    for p in pkts.iter_mut().filter(|p| p.attack) {
        let df = rng.random_bool(p_df);
        frame_view(&mut p.raw)?.set_dont_fragment(df);
        r.modified += 1;
    }
    Ok(())
}

fn tcp_len(pkts: &mut [Pkt], bytes: [usize; 2], rng: &mut ChaCha8Rng, r: &mut StepReport) -> Result<()> {
    for p in pkts.iter_mut().filter(|p| p.attack) {
        if !is_syn(&mut p.raw) {
            continue;
        }
        let mut f = frame_view(&mut p.raw)?;
        let mut payload = f.tcp_payload()?.to_vec();
        let extra = rng.random_range(bytes[0]..=bytes[1]);
        payload.extend((0..extra).map(|_| rng.random::<u8>()));
        if payload.len() > MAX_TCP_PAYLOAD {
            payload.truncate(MAX_TCP_PAYLOAD);
            r.clamped += 1;
        }
        let (seq, flags) = (f.tcp_seq()?, f.tcp_flags()?);
        f.rewrite_tcp(seq, flags, None, &payload)?;
        r.modified += 1;
    }
    Ok(())
}

/// Dummy ACKs after each attack SYN: same 5-tuple, empty payload.
fn padding(
    pkts: &mut Vec<Pkt>,
    count: [u32; 2],
    delay: [f64; 2],
    rng: &mut ChaCha8Rng,
    r: &mut StepReport,
) -> Result<()> {
    let mut added = Vec::new();
    for p in pkts.iter_mut().filter(|p| p.attack) {
        if !is_syn(&mut p.raw) {
            continue;
        }
        let k = draw_u32(rng, count);
        let mut ts = p.raw.ts;
        let f = frame_view(&mut p.raw)?;
        let seq = f.tcp_seq()?.wrapping_add(1 + f.tcp_payload()?.len() as u32);
        // A spoofed sender cannot learn the victim's sequence number, so every
        // dummy repeats one guessed acknowledgement.
        let ack: u32 = rng.random();
        for i in 0..k {
            ts = after(ts, draw_secs(rng, delay));
            let mut dummy = p.raw.clone();
            dummy.ts = ts;
            let mut f = frame_view(&mut dummy)?;
            next_id(&mut f, i + 1);
            f.rewrite_tcp(seq, TCP_ACK, Some(ack), &[])?;
            added.push(Pkt { raw: dummy, attack: true });
        }
        r.modified += usize::from(k > 0);
    }
    r.inserted = added.len();
    pkts.extend(added);
    Ok(())
}

fn replicate(
    pkts: &mut Vec<Pkt>,
    count: [u32; 2],
    delay: [f64; 2],
    rng: &mut ChaCha8Rng,
    r: &mut StepReport,
) -> Result<()> {
    let mut added = Vec::new();
    for p in pkts.iter_mut().filter(|p| p.attack) {
        if !is_syn(&mut p.raw) {
            continue;
        }
        let n = draw_u32(rng, count);
        let mut ts = p.raw.ts;
        for i in 0..n {
            ts = after(ts, draw_secs(rng, delay));
            let mut copy = p.raw.clone();
            copy.ts = ts;
            next_id(&mut frame_view(&mut copy)?, i + 1);
            added.push(Pkt { raw: copy, attack: true });
        }
        r.modified += usize::from(n > 0);
    }
    r.inserted = added.len();
    pkts.extend(added);
    Ok(())
}

fn flow_of(p: &mut RawPacket) -> Option<FlowKey> {
    let f = Ipv4Frame::new(&mut p.frame).ok()?;
    let (sp, dp) = f.tcp_ports().unwrap_or((0, 0));
    Some(FlowKey::new(f.src(), sp, f.dst(), dp, f.protocol()))
}

fn delay_flows(pkts: &mut [Pkt], secs: [f64; 2], rng: &mut ChaCha8Rng, r: &mut StepReport) -> Result<()> {
    // Packets of flows that carry attack traffic, grouped per flow in time order.
    let mut flows: BTreeMap<FlowKey, Vec<usize>> = BTreeMap::new();
    let mut attack_flows = std::collections::BTreeSet::new();
    for (i, p) in pkts.iter_mut().enumerate() {
        if let Some(k) = flow_of(&mut p.raw) {
            flows.entry(k).or_default().push(i);
            if p.attack {
                attack_flows.insert(k);
            }
        }
    }
    for k in attack_flows {
        let mut members = flows.remove(&k).unwrap_or_default();
        members.sort_by_key(|&i| pkts[i].raw.ts);
        let mut shift = 0u64;
        for (pos, &i) in members.iter().enumerate() {
            if pos > 0 && pkts[i].attack {
                shift += (draw_secs(rng, secs) * 1e6).round() as u64;
            }
            if shift > 0 {
                pkts[i].raw.ts = Timestamp(pkts[i].raw.ts.0 + shift);
                r.modified += 1;
            }
        }
    }
    Ok(())
}

fn fragment(pkts: &mut Vec<Pkt>, mss: usize, r: &mut StepReport) -> Result<()> {
    let mut out = Vec::with_capacity(pkts.len());
    for mut p in pkts.drain(..) {
        if !p.attack {
            out.push(p);
            continue;
        }
        let (seq, flags, payload) = {
            let f = frame_view(&mut p.raw)?;
            match (f.tcp_seq(), f.tcp_flags(), f.tcp_payload()) {
                (Ok(s), Ok(fl), Ok(pl)) => (s, fl, pl.to_vec()),
                _ => {
                    r.skipped += 1;
                    out.push(p);
                    continue;
                }
            }
        };
        if payload.len() <= mss || flags & TCP_SYN != 0 {
            if payload.is_empty() || flags & TCP_SYN != 0 {
                r.skipped += 1;
            }
            out.push(p);
            continue;
        }
        let chunks: Vec<&[u8]> = payload.chunks(mss).collect();
        let n = chunks.len();
        let mut offset = 0u32;
        for (i, chunk) in chunks.into_iter().enumerate() {
            let last = i + 1 == n;
            let mut fl = flags & !(TCP_PSH | TCP_FIN);
            if last {
                fl = flags;
            }
            let mut seg = p.raw.clone();
            seg.ts = Timestamp(p.raw.ts.0 + i as u64);
            let mut f = frame_view(&mut seg)?;
            if i > 0 {
                next_id(&mut f, i as u32);
            }
            f.rewrite_tcp(seq.wrapping_add(offset), fl, None, chunk)?;
            offset += chunk.len() as u32;
            out.push(Pkt { raw: seg, attack: true });
        }
        r.modified += 1;
        r.inserted += n - 1;
    }
    *pkts = out;
    Ok(())
}
