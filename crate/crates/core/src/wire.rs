//! Ethernet/IPv4/TCP/UDP/ICMP frame construction, in-place rewriting and
//! checksum maintenance.
//!
//! Frames are plain byte vectors starting at the Ethernet header. Every
//! builder and editor leaves all checksums valid.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ETH_LEN: usize = 14;
pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const ETHERTYPE_IPV6: u16 = 0x86dd;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

pub const TCP_FIN: u16 = 0x001;
pub const TCP_SYN: u16 = 0x002;
pub const TCP_RST: u16 = 0x004;
pub const TCP_PSH: u16 = 0x008;
pub const TCP_ACK: u16 = 0x010;

/// IPv4 flags field value with only "don't fragment" set.
pub const IP_FLAG_DF: u8 = 0b010;
/// IPv4 flags field value with only "more fragments" set.
pub const IP_FLAG_MF: u8 = 0b001;

/// Largest TCP payload a rewritten frame may carry (Ethernet MSS).
pub const MAX_TCP_PAYLOAD: usize = 1460;

/// Capture timestamp in microseconds since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round().max(0.0) as u64)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn plus_secs(self, secs: f64) -> Self {
        Timestamp(self.0 + (secs * 1e6).round().max(0.0) as u64)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// One captured frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub ts: Timestamp,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, Copy)]
pub struct IpParams {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub id: u16,
    pub ttl: u8,
    pub dont_fragment: bool,
}

#[derive(Debug, Clone)]
pub struct TcpParams {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: u16,
    pub window: u16,
}

fn mac_for(ip: Ipv4Addr) -> [u8; 6] {
    let o = ip.octets();
    [0x02, 0x00, o[0], o[1], o[2], o[3]]
}

/// One's-complement sum folded to 16 bits (not inverted).
fn ones_complement_sum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in chunks {
        let mut iter = chunk.chunks_exact(2);
        for pair in &mut iter {
            sum += u32::from(u16::from_be_bytes([pair[0], pair[1]]));
            sum = (sum & 0xffff) + (sum >> 16);
        }
        if let [last] = iter.remainder() {
            sum += u32::from(*last) << 8;
            sum = (sum & 0xffff) + (sum >> 16);
        }
    }
    sum as u16
}

fn checksum(chunks: &[&[u8]]) -> u16 {
    !ones_complement_sum(chunks)
}

fn pseudo_header(src: [u8; 4], dst: [u8; 4], proto: u8, len: usize) -> [u8; 12] {
    let mut p = [0u8; 12];
    p[..4].copy_from_slice(&src);
    p[4..8].copy_from_slice(&dst);
    p[9] = proto;
    p[10..12].copy_from_slice(&(len as u16).to_be_bytes());
    p
}

fn ip_header(ip: &IpParams, proto: u8, payload_len: usize) -> [u8; 20] {
    let mut h = [0u8; 20];
    h[0] = 0x45;
    h[2..4].copy_from_slice(&((20 + payload_len) as u16).to_be_bytes());
    h[4..6].copy_from_slice(&ip.id.to_be_bytes());
    if ip.dont_fragment {
        h[6] = IP_FLAG_DF << 5;
    }
    h[8] = ip.ttl;
    h[9] = proto;
    h[12..16].copy_from_slice(&ip.src.octets());
    h[16..20].copy_from_slice(&ip.dst.octets());
    let c = checksum(&[&h]);
    h[10..12].copy_from_slice(&c.to_be_bytes());
    h
}

fn frame_with(ip: &IpParams, proto: u8, transport: &[u8]) -> Vec<u8> {
    let mut f = Vec::with_capacity(ETH_LEN + 20 + transport.len());
    f.extend_from_slice(&mac_for(ip.dst));
    f.extend_from_slice(&mac_for(ip.src));
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    f.extend_from_slice(&ip_header(ip, proto, transport.len()));
    f.extend_from_slice(transport);
    f
}

pub fn build_tcp(ip: &IpParams, tcp: &TcpParams, payload: &[u8]) -> Vec<u8> {
    let mut seg = vec![0u8; 20];
    seg[0..2].copy_from_slice(&tcp.src_port.to_be_bytes());
    seg[2..4].copy_from_slice(&tcp.dst_port.to_be_bytes());
    seg[4..8].copy_from_slice(&tcp.seq.to_be_bytes());
    seg[8..12].copy_from_slice(&tcp.ack.to_be_bytes());
    seg[12] = (5 << 4) | ((tcp.flags >> 8) & 1) as u8;
    seg[13] = (tcp.flags & 0xff) as u8;
    seg[14..16].copy_from_slice(&tcp.window.to_be_bytes());
    seg.extend_from_slice(payload);
    let pseudo = pseudo_header(ip.src.octets(), ip.dst.octets(), PROTO_TCP, seg.len());
    let c = checksum(&[&pseudo, &seg]);
    seg[16..18].copy_from_slice(&c.to_be_bytes());
    frame_with(ip, PROTO_TCP, &seg)
}

pub fn build_udp(ip: &IpParams, src_port: u16, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let len = 8 + payload.len();
    let mut seg = vec![0u8; 8];
    seg[0..2].copy_from_slice(&src_port.to_be_bytes());
    seg[2..4].copy_from_slice(&dst_port.to_be_bytes());
    seg[4..6].copy_from_slice(&(len as u16).to_be_bytes());
    seg.extend_from_slice(payload);
    let pseudo = pseudo_header(ip.src.octets(), ip.dst.octets(), PROTO_UDP, len);
    let mut c = checksum(&[&pseudo, &seg]);
    if c == 0 {
        c = 0xffff;
    }
    seg[6..8].copy_from_slice(&c.to_be_bytes());
    frame_with(ip, PROTO_UDP, &seg)
}

pub fn build_icmp(ip: &IpParams, icmp_type: u8, code: u8, ident: u16, seq: u16, payload: &[u8]) -> Vec<u8> {
    let mut msg = vec![icmp_type, code, 0, 0];
    msg.extend_from_slice(&ident.to_be_bytes());
    msg.extend_from_slice(&seq.to_be_bytes());
    msg.extend_from_slice(payload);
    let c = checksum(&[&msg]);
    msg[2..4].copy_from_slice(&c.to_be_bytes());
    frame_with(ip, PROTO_ICMP, &msg)
}

/// Mutable view of an Ethernet/IPv4 frame.
pub struct Ipv4Frame<'a> {
    frame: &'a mut Vec<u8>,
    ihl: usize,
}

impl<'a> Ipv4Frame<'a> {
    pub fn new(frame: &'a mut Vec<u8>) -> Result<Self> {
        if frame.len() < ETH_LEN + 20
            || u16::from_be_bytes([frame[12], frame[13]]) != ETHERTYPE_IPV4
            || frame[ETH_LEN] >> 4 != 4
        {
            return Err(Error::Precondition("frame is not Ethernet/IPv4".into()));
        }
        let ihl = usize::from(frame[ETH_LEN] & 0x0f) * 4;
        let total = u16::from_be_bytes([frame[ETH_LEN + 2], frame[ETH_LEN + 3]]) as usize;
        if ihl < 20 || frame.len() < ETH_LEN + total || total < ihl {
            return Err(Error::Precondition("IPv4 header lengths are inconsistent".into()));
        }
        Ok(Ipv4Frame { frame, ihl })
    }

    fn ip(&self) -> &[u8] {
        &self.frame[ETH_LEN..]
    }

    pub fn src(&self) -> Ipv4Addr {
        let h = self.ip();
        Ipv4Addr::new(h[12], h[13], h[14], h[15])
    }

    pub fn dst(&self) -> Ipv4Addr {
        let h = self.ip();
        Ipv4Addr::new(h[16], h[17], h[18], h[19])
    }

    pub fn protocol(&self) -> u8 {
        self.ip()[9]
    }

    pub fn total_len(&self) -> usize {
        u16::from_be_bytes([self.ip()[2], self.ip()[3]]) as usize
    }

    pub fn id(&self) -> u16 {
        u16::from_be_bytes([self.ip()[4], self.ip()[5]])
    }

    pub fn set_id(&mut self, id: u16) {
        self.frame[ETH_LEN + 4..ETH_LEN + 6].copy_from_slice(&id.to_be_bytes());
        self.fix_ip_checksum();
    }

    pub fn flags(&self) -> u8 {
        self.ip()[6] >> 5
    }

    pub fn set_dont_fragment(&mut self, df: bool) {
        let b = &mut self.frame[ETH_LEN + 6];
        if df {
            *b |= IP_FLAG_DF << 5;
        } else {
            *b &= !(IP_FLAG_DF << 5);
        }
        self.fix_ip_checksum();
    }

    fn transport_range(&self) -> std::ops::Range<usize> {
        ETH_LEN + self.ihl..ETH_LEN + self.total_len()
    }

    pub fn transport(&self) -> &[u8] {
        &self.frame[self.transport_range()]
    }

    fn fix_ip_checksum(&mut self) {
        let start = ETH_LEN;
        self.frame[start + 10] = 0;
        self.frame[start + 11] = 0;
        let c = checksum(&[&self.frame[start..start + self.ihl]]);
        self.frame[start + 10..start + 12].copy_from_slice(&c.to_be_bytes());
    }

    fn tcp_header_len(&self) -> Result<usize> {
        if self.protocol() != PROTO_TCP || self.transport().len() < 20 {
            return Err(Error::Precondition("frame does not carry a TCP segment".into()));
        }
        Ok(usize::from(self.transport()[12] >> 4) * 4)
    }

    pub fn tcp_flags(&self) -> Result<u16> {
        self.tcp_header_len()?;
        let t = self.transport();
        Ok((u16::from(t[12] & 1) << 8) | u16::from(t[13]))
    }

    pub fn tcp_seq(&self) -> Result<u32> {
        self.tcp_header_len()?;
        let t = self.transport();
        Ok(u32::from_be_bytes([t[4], t[5], t[6], t[7]]))
    }

    pub fn tcp_ports(&self) -> Result<(u16, u16)> {
        self.tcp_header_len()?;
        let t = self.transport();
        Ok((u16::from_be_bytes([t[0], t[1]]), u16::from_be_bytes([t[2], t[3]])))
    }

    pub fn tcp_payload(&self) -> Result<&[u8]> {
        let hl = self.tcp_header_len()?;
        Ok(&self.transport()[hl..])
    }

    /// Rewrites the TCP segment's sequence number, flags and payload;
    /// IP total length and both checksums are recomputed, every other byte
    /// of the frame is kept.
    pub fn rewrite_tcp(&mut self, seq: u32, flags: u16, ack: Option<u32>, payload: &[u8]) -> Result<()> {
        let hl = self.tcp_header_len()?;
        let seg_start = ETH_LEN + self.ihl;
        let mut seg: Vec<u8> = self.frame[seg_start..seg_start + hl].to_vec();
        seg[4..8].copy_from_slice(&seq.to_be_bytes());
        if let Some(ack) = ack {
            seg[8..12].copy_from_slice(&ack.to_be_bytes());
        }
        seg[12] = (seg[12] & 0xfe) | ((flags >> 8) & 1) as u8;
        seg[13] = (flags & 0xff) as u8;
        seg[16] = 0;
        seg[17] = 0;
        seg.extend_from_slice(payload);
        let total = self.ihl + seg.len();
        if total > usize::from(u16::MAX) {
            return Err(Error::Precondition("rewritten packet exceeds 65535 bytes".into()));
        }
        self.frame.truncate(seg_start);
        self.frame.extend_from_slice(&seg);
        self.frame[ETH_LEN + 2..ETH_LEN + 4].copy_from_slice(&(total as u16).to_be_bytes());
        self.fix_ip_checksum();
        self.fix_transport_checksum();
        Ok(())
    }

    pub fn fix_transport_checksum(&mut self) {
        let range = self.transport_range();
        let (src, dst, proto) = (self.src().octets(), self.dst().octets(), self.protocol());
        let slot = match proto {
            PROTO_TCP if range.len() >= 20 => 16,
            PROTO_UDP if range.len() >= 8 => 6,
            PROTO_ICMP if range.len() >= 4 => 2,
            _ => return,
        };
        let at = range.start + slot;
        self.frame[at] = 0;
        self.frame[at + 1] = 0;
        let seg = &self.frame[range.clone()];
        let mut c = if proto == PROTO_ICMP {
            checksum(&[seg])
        } else {
            let pseudo = pseudo_header(src, dst, proto, seg.len());
            checksum(&[&pseudo, seg])
        };
        if proto == PROTO_UDP && c == 0 {
            c = 0xffff;
        }
        self.frame[at..at + 2].copy_from_slice(&c.to_be_bytes());
    }
}

/// Independent checksum verifier: sums whole headers including their
/// checksum fields with 64-bit accumulation and checks for all-ones.
/// Non-IPv4 frames are reported valid (nothing to check).
pub fn verify_checksums(frame: &[u8]) -> bool {
    fn folded(words: impl Iterator<Item = u64>) -> u64 {
        let mut s: u64 = words.sum();
        while s > 0xffff {
            s = (s & 0xffff) + (s >> 16);
        }
        s
    }
    fn words(b: &[u8]) -> impl Iterator<Item = u64> + '_ {
        (0..b.len()).step_by(2).map(move |i| {
            let hi = u64::from(b[i]) << 8;
            let lo = b.get(i + 1).map_or(0, |&v| u64::from(v));
            hi | lo
        })
    }
    if frame.len() < ETH_LEN + 20 || u16::from_be_bytes([frame[12], frame[13]]) != ETHERTYPE_IPV4 {
        return true;
    }
    let ip = &frame[ETH_LEN..];
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    let total = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    if ihl < 20 || ip.len() < total || total < ihl {
        return false;
    }
    if folded(words(&ip[..ihl])) != 0xffff {
        return false;
    }
    let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    let more_fragments = ip[6] & 0x20 != 0;
    if frag_offset != 0 || more_fragments {
        return true;
    }
    let seg = &ip[ihl..total];
    let proto = ip[9];
    let pseudo = [
        u64::from(u16::from_be_bytes([ip[12], ip[13]])),
        u64::from(u16::from_be_bytes([ip[14], ip[15]])),
        u64::from(u16::from_be_bytes([ip[16], ip[17]])),
        u64::from(u16::from_be_bytes([ip[18], ip[19]])),
        u64::from(proto),
        seg.len() as u64,
    ];
    match proto {
        PROTO_TCP => seg.len() >= 20 && folded(pseudo.into_iter().chain(words(seg))) == 0xffff,
        PROTO_UDP => {
            if seg.len() < 8 {
                return false;
            }
            // A zero UDP checksum means "not computed".
            seg[6..8] == [0, 0] || folded(pseudo.into_iter().chain(words(seg))) == 0xffff
        }
        PROTO_ICMP => seg.len() >= 4 && folded(words(seg)) == 0xffff,
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip() -> IpParams {
        IpParams {
            src: Ipv4Addr::new(10, 0, 0, 5),
            dst: Ipv4Addr::new(192, 168, 1, 1),
            id: 7,
            ttl: 64,
            dont_fragment: true,
        }
    }

    fn syn() -> Vec<u8> {
        build_tcp(
            &ip(),
            &TcpParams { src_port: 40000, dst_port: 80, seq: 1000, ack: 0, flags: TCP_SYN, window: 8192 },
            &[],
        )
    }

    #[test]
    fn known_ipv4_header_checksum() {
        // Classic worked example: 4500 0073 0000 4000 4011 ---- c0a8 0001 c0a8 00c7
        let hdr: [u8; 20] = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8, 0x00, 0x01, 0xc0, 0xa8,
            0x00, 0xc7,
        ];
        assert_eq!(checksum(&[&hdr]), 0xb861);
    }

    #[test]
    fn built_frames_verify() {
        assert!(verify_checksums(&syn()));
        assert!(verify_checksums(&build_udp(&ip(), 5353, 53, b"abcde")));
        assert!(verify_checksums(&build_icmp(&ip(), 8, 0, 1, 1, b"ping")));
    }

    #[test]
    fn corrupted_frames_fail_verification() {
        let mut f = syn();
        let last = f.len() - 1;
        f[last] ^= 0x01;
        assert!(!verify_checksums(&f));
        let mut f = syn();
        f[ETH_LEN + 8] = 3; // TTL
        assert!(!verify_checksums(&f));
    }

    #[test]
    fn df_toggle_keeps_checksum_valid() {
        let mut f = syn();
        let mut v = Ipv4Frame::new(&mut f).unwrap();
        assert_eq!(v.flags(), IP_FLAG_DF);
        v.set_dont_fragment(false);
        assert_eq!(v.flags(), 0);
        assert!(verify_checksums(&f));
    }

    #[test]
    fn rewrite_payload_updates_lengths() {
        let mut f = syn();
        let before = f.len();
        let mut v = Ipv4Frame::new(&mut f).unwrap();
        v.rewrite_tcp(1000, TCP_SYN, None, &[0xab; 10]).unwrap();
        assert_eq!(v.total_len(), 50);
        assert_eq!(v.tcp_payload().unwrap(), &[0xab; 10]);
        assert_eq!(f.len(), before + 10);
        assert!(verify_checksums(&f));
    }
}
