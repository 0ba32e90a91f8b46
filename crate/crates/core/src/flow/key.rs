use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::packet::PacketRecord;

/// Bidirectional 5-tuple; the lower `(ip, port)` endpoint comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub ip_a: Ipv4Addr,
    pub port_a: u16,
    pub ip_b: Ipv4Addr,
    pub port_b: u16,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(src: Ipv4Addr, src_port: u16, dst: Ipv4Addr, dst_port: u16, protocol: u8) -> Self {
        if (src, src_port) <= (dst, dst_port) {
            FlowKey { ip_a: src, port_a: src_port, ip_b: dst, port_b: dst_port, protocol }
        } else {
            FlowKey { ip_a: dst, port_a: dst_port, ip_b: src, port_b: src_port, protocol }
        }
    }

    pub fn of(rec: &PacketRecord) -> Self {
        FlowKey::new(rec.src, rec.src_port, rec.dst, rec.dst_port, rec.protocol)
    }

    /// Packs the key into five exactly-representable floats.
    pub fn to_f64s(self) -> [f64; 5] {
        [
            f64::from(u32::from(self.ip_a)),
            f64::from(self.port_a),
            f64::from(u32::from(self.ip_b)),
            f64::from(self.port_b),
            f64::from(self.protocol),
        ]
    }

    pub fn from_f64s(v: &[f64]) -> Result<Self> {
        let bad = || Error::Format(format!("invalid packed flow key {:?}", v));
        if v.len() != 5 || v.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
            return Err(bad());
        }
        let ip = |x: f64| u32::try_from(x as u64).map(Ipv4Addr::from).map_err(|_| bad());
        let port = |x: f64| u16::try_from(x as u64).map_err(|_| bad());
        Ok(FlowKey {
            ip_a: ip(v[0])?,
            port_a: port(v[1])?,
            ip_b: ip(v[2])?,
            port_b: port(v[3])?,
            protocol: u8::try_from(v[4] as u64).map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}<->{}:{}/{}", self.ip_a, self.port_a, self.ip_b, self.port_b, self.protocol)
    }
}

/// A set of IPv4 addresses given as single hosts or CIDR blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct IpSet {
    blocks: Vec<(Ipv4Addr, u8)>,
}

impl IpSet {
    pub fn new() -> Self {
        IpSet::default()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn insert_block(&mut self, net: Ipv4Addr, prefix: u8) {
        self.blocks.push((net, prefix.min(32)));
    }

    pub fn insert(&mut self, ip: Ipv4Addr) {
        self.insert_block(ip, 32);
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        let v = u32::from(ip);
        self.blocks.iter().any(|&(net, prefix)| {
            let mask = if prefix == 0 { 0 } else { u32::MAX << (32 - prefix) };
            v & mask == u32::from(net) & mask
        })
    }

    /// True when some address could belong to both sets.
    pub fn overlaps(&self, other: &IpSet) -> bool {
        self.blocks.iter().any(|&(a, pa)| {
            other.blocks.iter().any(|&(b, pb)| {
                let p = pa.min(pb);
                let mask = if p == 0 { 0 } else { u32::MAX << (32 - p) };
                u32::from(a) & mask == u32::from(b) & mask
            })
        })
    }
}

impl FromStr for IpSet {
    type Err = Error;

    /// Comma-separated list such as `10.0.0.5,172.16.0.0/16`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = IpSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (addr, prefix) = match part.split_once('/') {
                Some((a, p)) => (
                    a,
                    p.parse::<u8>()
                        .ok()
                        .filter(|&p| p <= 32)
                        .ok_or_else(|| Error::Config(format!("bad prefix length in '{}'", part)))?,
                ),
                None => (part, 32),
            };
            let ip: Ipv4Addr = addr.parse().map_err(|_| Error::Config(format!("bad IPv4 address '{}'", addr)))?;
            set.insert_block(ip, prefix);
        }
        Ok(set)
    }
}

impl TryFrom<Vec<String>> for IpSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        v.join(",").parse()
    }
}

impl From<IpSet> for Vec<String> {
    fn from(s: IpSet) -> Self {
        s.blocks.iter().map(|(ip, p)| if *p == 32 { ip.to_string() } else { format!("{}/{}", ip, p) }).collect()
    }
}
