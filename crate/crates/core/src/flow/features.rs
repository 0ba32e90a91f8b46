use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::packet::PacketRecord;
use crate::wire::Timestamp;

pub const NUM_FEATURES: usize = 11;
pub const DEFAULT_MAX_PACKETS: usize = 10;
pub const DEFAULT_WINDOW_SECONDS: f64 = 10.0;

/// Column order of every sample matrix, shared by all modules.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "time",
    "packet_len",
    "highest_layer",
    "ip_flags",
    "protocols",
    "tcp_len",
    "tcp_ack",
    "tcp_flags",
    "tcp_win",
    "udp_len",
    "icmp_type",
];

/// One column of the sample matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Time,
    PacketLen,
    HighestLayer,
    IpFlags,
    Protocols,
    TcpLen,
    TcpAck,
    TcpFlags,
    TcpWin,
    UdpLen,
    IcmpType,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Time,
        Feature::PacketLen,
        Feature::HighestLayer,
        Feature::IpFlags,
        Feature::Protocols,
        Feature::TcpLen,
        Feature::TcpAck,
        Feature::TcpFlags,
        Feature::TcpWin,
        Feature::UdpLen,
        Feature::IcmpType,
    ];

    pub fn column(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        FEATURE_NAMES[self.column()]
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown feature '{}'", s)))
    }
}

/// Raw (unnormalized) feature row of one packet.
///
/// `reference` is the timestamp the Time column is measured from and
/// `ack_base` the acknowledgment number that maps to a relative ack of 0.
pub fn featurize(rec: &PacketRecord, reference: Timestamp, ack_base: u32) -> [f64; NUM_FEATURES] {
    debug_assert!(rec.ts >= reference);
    let time = rec.ts.0.saturating_sub(reference.0) as f64 / 1e6;
    let ack =
        if rec.tcp_flags & crate::wire::TCP_ACK != 0 { f64::from(rec.tcp_ack.wrapping_sub(ack_base)) } else { 0.0 };
    [
        time,
        f64::from(rec.ip_len),
        f64::from(rec.highest_layer),
        f64::from(rec.ip_flags),
        f64::from(rec.protocols),
        f64::from(rec.tcp_len),
        ack,
        f64::from(rec.tcp_flags),
        f64::from(rec.tcp_window),
        f64::from(rec.udp_len),
        f64::from(rec.icmp_type),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::packet::{layer, proto_bit};
    use std::net::Ipv4Addr;

    fn record() -> PacketRecord {
        PacketRecord {
            ts: Timestamp(5_000_000),
            src: Ipv4Addr::new(10, 0, 0, 1),
            dst: Ipv4Addr::new(10, 0, 0, 2),
            ip_flags: 2,
            ip_len: 40,
            protocol: 6,
            src_port: 1234,
            dst_port: 80,
            tcp_flags: 2,
            tcp_ack: 0,
            tcp_window: 64240,
            tcp_len: 0,
            udp_len: 0,
            icmp_type: 0,
            highest_layer: layer::TCP,
            protocols: proto_bit::IP | proto_bit::TCP,
        }
    }

    #[test]
    fn feature_names_parse() {
        for f in Feature::ALL {
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
        }
        assert_eq!("TCP Len".parse::<Feature>().unwrap(), Feature::TcpLen);
        assert!("bogus".parse::<Feature>().is_err());
    }

    #[test]
    fn syn_row() {
        let r = record();
        let row = featurize(&r, r.ts, 0);
        assert_eq!(row[Feature::Time.column()], 0.0);
        assert_eq!(row[Feature::TcpFlags.column()], 2.0);
        assert_eq!(row[Feature::TcpLen.column()], 0.0);
        assert_eq!(row[Feature::UdpLen.column()], 0.0);
        assert_eq!(row[Feature::IcmpType.column()], 0.0);
    }

    #[test]
    fn relative_time_and_ack() {
        let mut r = record();
        r.tcp_flags = crate::wire::TCP_ACK;
        r.tcp_ack = 5;
        let row = featurize(&r, Timestamp(4_750_000), u32::MAX - 4);
        assert_eq!(row[0], 0.25);
        assert_eq!(row[Feature::TcpAck.column()], 10.0);
    }
}
