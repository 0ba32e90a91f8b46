use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Start of every synthetic trace (2020-09-13T12:26:40Z).
pub const DEFAULT_START: f64 = 1_600_000_000.0;

/// Everything needed to generate one capture; the seed fixes every byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Trace length in seconds; flows start inside `[0, duration)`.
    pub duration: f64,
    /// Epoch seconds of the trace origin.
    pub start_time: f64,
    pub benign: BenignMix,
    pub attack: Option<AttackSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario { seed: 1, duration: 60.0, start_time: DEFAULT_START, benign: BenignMix::default(), attack: None }
    }
}

/// Benign traffic mix. Rates are flows started per second; zero disables
/// a component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenignMix {
    pub web_rate: f64,
    pub ssh_rate: f64,
    pub dns_rate: f64,
    pub icmp_rate: f64,
    /// Number of client hosts, numbered from 10.0.0.10.
    pub clients: u16,
    /// Mean of the exponential think time between requests (s).
    pub mean_gap: f64,
    /// Round-trip time range (s), drawn per flow.
    pub rtt: [f64; 2],
    /// Log-normal parameters of HTTP request payloads (bytes).
    pub request_size: LogNormal,
    /// Log-normal parameters of HTTP response sizes (bytes).
    pub response_size: LogNormal,
    /// Mean ssh session length (s).
    pub ssh_session: f64,
    /// Fraction of web connections kept alive for a longer request series.
    pub keepalive_fraction: f64,
    /// Requests on a kept-alive connection, inclusive range.
    pub keepalive_requests: [u32; 2],
    /// Mean think time between requests on a kept-alive connection (s).
    pub keepalive_gap: f64,
}

impl Default for BenignMix {
    fn default() -> Self {
        BenignMix {
            web_rate: 4.0,
            ssh_rate: 0.2,
            dns_rate: 2.0,
            icmp_rate: 0.3,
            clients: 40,
            mean_gap: 0.25,
            rtt: [0.01, 0.1],
            request_size: LogNormal { mu: 5.8, sigma: 0.4 },
            response_size: LogNormal { mu: 8.0, sigma: 1.0 },
            ssh_session: 20.0,
            keepalive_fraction: 0.3,
            keepalive_requests: [5, 30],
            keepalive_gap: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormal {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    SynFlood,
    HttpGetFlood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Attack flows started per second. A SYN flood flow is a single SYN,
    /// so this is also its SYN packet rate.
    pub rate: f64,
    /// Number of distinct source addresses, drawn from `source_net`.
    pub source_pool: u32,
    pub source_net: Ipv4Addr,
    pub source_prefix: u8,
    pub victim: SocketAddrV4,
    /// Attack window inside the trace, as fractions of the duration.
    pub active: [f64; 2],
    /// Victim answers SYNs with SYN-ACK while its backlog has room.
    pub replies: bool,
    pub backlog: usize,
    /// Seconds a half-open connection occupies the backlog.
    pub backlog_timeout: f64,
    /// GET requests per HTTP flood connection, inclusive range.
    pub requests: [u32; 2],
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: AttackKind::SynFlood,
            rate: 10.0,
            source_pool: 500,
            source_net: Ipv4Addr::new(172, 16, 0, 0),
            source_prefix: 16,
            victim: SocketAddrV4::new(Ipv4Addr::new(192, 168, 10, 50), 80),
            active: [0.0, 1.0],
            replies: true,
            backlog: 16,
            backlog_timeout: 3.0,
            requests: [3, 6],
        }
    }
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::Config(format!("scenario: {}", e)))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialises to TOML")
    }

    /// Benign mix plus a SYN flood against the default victim.
    pub fn syn_flood(seed: u64, duration: f64) -> Self {
        Scenario { seed, duration, attack: Some(AttackSpec::default()), ..Scenario::default() }
    }

    /// Benign mix plus an HTTP GET flood against the default victim.
    pub fn http_flood(seed: u64, duration: f64) -> Self {
        Scenario {
            seed,
            duration,
            attack: Some(AttackSpec { kind: AttackKind::HttpGetFlood, rate: 6.0, ..AttackSpec::default() }),
            ..Scenario::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad(format!("duration must be >= 0, got {}", self.duration));
        }
        if !(self.start_time.is_finite() && self.start_time >= 0.0) {
            return bad("start_time must be a non-negative epoch".into());
        }
        let b = &self.benign;
        for (name, r) in
            [("web_rate", b.web_rate), ("ssh_rate", b.ssh_rate), ("dns_rate", b.dns_rate), ("icmp_rate", b.icmp_rate)]
        {
            if !(r.is_finite() && r >= 0.0) {
                return bad(format!("{} must be >= 0, got {}", name, r));
            }
        }
        if b.clients == 0 || b.clients > 240 {
            return bad("clients must be in 1..=240".into());
        }
        if !(b.mean_gap > 0.0 && b.ssh_session > 0.0 && b.keepalive_gap > 0.0) {
            return bad("mean_gap, ssh_session and keepalive_gap must be positive".into());
        }
        if !(0.0..=1.0).contains(&b.keepalive_fraction) {
            return bad("keepalive_fraction must be in [0, 1]".into());
        }
        if b.keepalive_requests[0] == 0 || b.keepalive_requests[1] < b.keepalive_requests[0] {
            return bad("keepalive_requests must be a non-empty range starting at >= 1".into());
        }
        if !(b.rtt[0] > 0.0 && b.rtt[1] >= b.rtt[0]) {
            return bad("rtt must be an increasing positive range".into());
        }
        for ln in [b.request_size, b.response_size] {
            if !(ln.mu.is_finite() && ln.sigma.is_finite() && ln.sigma >= 0.0) {
                return bad("log-normal parameters must be finite with sigma >= 0".into());
            }
        }
        if let Some(a) = &self.attack {
            if !(a.rate.is_finite() && a.rate > 0.0) {
                return bad(format!("attack rate must be > 0, got {}", a.rate));
            }
            if a.source_pool == 0 || a.source_prefix > 32 {
                return bad("source pool must be non-empty with a prefix <= 32".into());
            }
            let room = 1u64 << (32 - u32::from(a.source_prefix));
            if u64::from(a.source_pool) > room {
                return bad(format!("source pool {} exceeds the /{} network", a.source_pool, a.source_prefix));
            }
            if !(0.0 <= a.active[0] && a.active[0] < a.active[1] && a.active[1] <= 1.0) {
                return bad("attack active window must satisfy 0 <= start < end <= 1".into());
            }
            if a.backlog == 0 || !(a.backlog_timeout > 0.0) {
                return bad("backlog size and timeout must be positive".into());
            }
            if a.requests[0] == 0 || a.requests[1] < a.requests[0] {
                return bad("requests must be a non-empty range starting at >= 1".into());
            }
        }
        Ok(())
    }
}
