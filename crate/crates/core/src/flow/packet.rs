use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::pcap::PcapReader;
use crate::wire::{RawPacket, Timestamp, ETHERTYPE_IPV4, ETHERTYPE_IPV6, ETH_LEN, PROTO_ICMP, PROTO_TCP, PROTO_UDP};

/// Highest-layer codes. The deepest recognised layer wins.
pub mod layer {
    pub const OTHER: u32 = 0;
    pub const ICMP: u32 = 1;
    pub const TCP: u32 = 6;
    pub const UDP: u32 = 17;
    pub const DNS: u32 = 53;
    pub const HTTP: u32 = 80;
    pub const TLS: u32 = 443;
}

/// Bits of the protocols-present mask.
pub mod proto_bit {
    pub const IP: u32 = 1 << 0;
    pub const TCP: u32 = 1 << 1;
    pub const UDP: u32 = 1 << 2;
    pub const ICMP: u32 = 1 << 3;
    pub const HTTP: u32 = 1 << 4;
    pub const DNS: u32 = 1 << 5;
    pub const TLS: u32 = 1 << 6;
}

/// Header fields of one IPv4 packet needed for feature extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub ts: Timestamp,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    /// The 3-bit IPv4 flags field.
    pub ip_flags: u8,
    /// IPv4 total length.
    pub ip_len: u16,
    pub protocol: u8,
    pub src_port: u16,
    pub dst_port: u16,
    /// The nine TCP flag bits (NS..FIN).
    pub tcp_flags: u16,
    pub tcp_ack: u32,
    pub tcp_window: u16,
    /// TCP payload length in bytes.
    pub tcp_len: u32,
    /// UDP length field (header + payload).
    pub udp_len: u16,
    pub icmp_type: u8,
    pub highest_layer: u32,
    pub protocols: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Ipv4(Box<PacketRecord>),
    Ipv6,
    NonIp,
    Malformed,
}

fn app_layer(port_a: u16, port_b: u16, tcp: bool) -> Option<(u32, u32)> {
    let has = |p: u16| port_a == p || port_b == p;
    if tcp && (has(80) || has(8080)) {
        Some((layer::HTTP, proto_bit::HTTP))
    } else if tcp && has(443) {
        Some((layer::TLS, proto_bit::TLS))
    } else if has(53) {
        Some((layer::DNS, proto_bit::DNS))
    } else {
        None
    }
}

/// Decodes an Ethernet frame.
pub fn decode(pkt: &RawPacket) -> Decoded {
    let f = &pkt.frame;
    if f.len() < ETH_LEN {
        return Decoded::Malformed;
    }
    match u16::from_be_bytes([f[12], f[13]]) {
        ETHERTYPE_IPV4 => {}
        ETHERTYPE_IPV6 => return Decoded::Ipv6,
        _ => return Decoded::NonIp,
    }
    let ip = &f[ETH_LEN..];
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return Decoded::Malformed;
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    let ip_len = u16::from_be_bytes([ip[2], ip[3]]);
    if ihl < 20 || ip.len() < ihl || usize::from(ip_len) < ihl {
        return Decoded::Malformed;
    }
    let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    let protocol = ip[9];
    let mut rec = PacketRecord {
        ts: pkt.ts,
        src: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
        dst: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
        ip_flags: ip[6] >> 5,
        ip_len,
        protocol,
        src_port: 0,
        dst_port: 0,
        tcp_flags: 0,
        tcp_ack: 0,
        tcp_window: 0,
        tcp_len: 0,
        udp_len: 0,
        icmp_type: 0,
        highest_layer: layer::OTHER,
        protocols: proto_bit::IP,
    };
    // Bytes actually carried for this datagram (captures may be truncated).
    let end = usize::from(ip_len).min(ip.len());
    let seg = &ip[ihl..end];
    let seg_len = usize::from(ip_len) - ihl;
    if frag_offset != 0 {
        return Decoded::Ipv4(Box::new(rec));
    }
    match protocol {
        PROTO_TCP if seg.len() >= 20 => {
            let doff = usize::from(seg[12] >> 4) * 4;
            rec.src_port = u16::from_be_bytes([seg[0], seg[1]]);
            rec.dst_port = u16::from_be_bytes([seg[2], seg[3]]);
            rec.tcp_ack = u32::from_be_bytes([seg[8], seg[9], seg[10], seg[11]]);
            rec.tcp_flags = (u16::from(seg[12] & 1) << 8) | u16::from(seg[13]);
            rec.tcp_window = u16::from_be_bytes([seg[14], seg[15]]);
            rec.tcp_len = seg_len.saturating_sub(doff) as u32;
            rec.highest_layer = layer::TCP;
            rec.protocols |= proto_bit::TCP;
            if rec.tcp_len > 0 {
                if let Some((code, bit)) = app_layer(rec.src_port, rec.dst_port, true) {
                    rec.highest_layer = code;
                    rec.protocols |= bit;
                }
            }
        }
        PROTO_UDP if seg.len() >= 8 => {
            rec.src_port = u16::from_be_bytes([seg[0], seg[1]]);
            rec.dst_port = u16::from_be_bytes([seg[2], seg[3]]);
            rec.udp_len = u16::from_be_bytes([seg[4], seg[5]]);
            rec.highest_layer = layer::UDP;
            rec.protocols |= proto_bit::UDP;
            if rec.udp_len > 8 {
                if let Some((code, bit)) = app_layer(rec.src_port, rec.dst_port, false) {
                    rec.highest_layer = code;
                    rec.protocols |= bit;
                }
            }
        }
        PROTO_ICMP if !seg.is_empty() => {
            rec.icmp_type = seg[0];
            rec.highest_layer = layer::ICMP;
            rec.protocols |= proto_bit::ICMP;
        }
        PROTO_TCP | PROTO_UDP | PROTO_ICMP => return Decoded::Malformed,
        _ => {}
    }
    Decoded::Ipv4(Box::new(rec))
}

/// Decoded records of a capture plus counts of frames that were skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedCapture {
    pub records: Vec<PacketRecord>,
    /// Non-IPv4 frames (ARP, IPv6, ...) and malformed IPv4 frames.
    pub skipped: usize,
    pub skipped_ipv6: usize,
    pub skipped_malformed: usize,
}

impl ParsedCapture {
    pub fn from_packets<'a>(packets: impl IntoIterator<Item = &'a RawPacket>) -> Self {
        let mut out = ParsedCapture::default();
        for p in packets {
            out.push(p);
        }
        out
    }

    fn push(&mut self, p: &RawPacket) {
        match decode(p) {
            Decoded::Ipv4(rec) => self.records.push(*rec),
            Decoded::Ipv6 => {
                self.skipped += 1;
                self.skipped_ipv6 += 1;
            }
            Decoded::NonIp => self.skipped += 1,
            Decoded::Malformed => {
                self.skipped += 1;
                self.skipped_malformed += 1;
            }
        }
    }
}

/// Reads a pcap file and decodes its IPv4 packets in capture order.
pub fn parse_capture(path: impl AsRef<Path>) -> Result<ParsedCapture> {
    let mut out = ParsedCapture::default();
    for pkt in PcapReader::open(path)? {
        out.push(&pkt?);
    }
    Ok(out)
}
