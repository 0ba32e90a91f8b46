//! Brute-force reference extractor and the hand-crafted captures it is
//! compared on.

use std::net::Ipv4Addr;

use floodguard::flow::{FlowKey, PacketRecord, RawSample};
use floodguard::wire::{build_icmp, build_tcp, build_udp, IpParams, RawPacket, TcpParams, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ip(src: Ipv4Addr, dst: Ipv4Addr) -> IpParams {
    IpParams { src, dst, id: 1, ttl: 64, dont_fragment: true }
}

pub fn tcp(sp: u16, dp: u16, flags: u16, ack: u32) -> TcpParams {
    TcpParams { src_port: sp, dst_port: dp, seq: 7, ack, flags, window: 1024 }
}

pub const A: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
pub const B: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);

pub fn pkt(secs: f64, frame: Vec<u8>) -> RawPacket {
    RawPacket { ts: Timestamp::from_secs_f64(secs), frame }
}

pub type Endpoint = (u32, u16);

pub fn endpoints(r: &PacketRecord) -> (Endpoint, Endpoint) {
    let s = (u32::from(r.src), r.src_port);
    let d = (u32::from(r.dst), r.dst_port);
    if s <= d {
        (s, d)
    } else {
        (d, s)
    }
}

/// Brute force: every window x every flow, scanning all packets each time.
pub fn reference_extract(recs: &[PacketRecord], window_us: u64, max_packets: usize) -> Vec<RawSample> {
    let mut out = Vec::new();
    if recs.is_empty() {
        return out;
    }
    let mut t0 = u64::MAX;
    let mut t1 = 0;
    for r in recs {
        t0 = t0.min(r.ts.0);
        t1 = t1.max(r.ts.0);
    }
    let mut flows: Vec<(Endpoint, Endpoint, u8)> = Vec::new();
    for r in recs {
        let (lo, hi) = endpoints(r);
        if !flows.contains(&(lo, hi, r.protocol)) {
            flows.push((lo, hi, r.protocol));
        }
    }
    flows.sort();
    let mut w = 0u64;
    while t0 + w * window_us <= t1 {
        let (start, end) = (t0 + w * window_us, t0 + (w + 1) * window_us);
        for &(lo, hi, proto) in &flows {
            let mut members: Vec<usize> = Vec::new();
            for (i, r) in recs.iter().enumerate() {
                if r.ts.0 >= start && r.ts.0 < end && endpoints(r) == (lo, hi) && r.protocol == proto {
                    members.push(i);
                }
            }
            if members.is_empty() {
                continue;
            }
            // Insertion sort on timestamp keeps capture order among ties.
            for a in 1..members.len() {
                let mut b = a;
                while b > 0 && recs[members[b - 1]].ts > recs[members[b]].ts {
                    members.swap(b - 1, b);
                    b -= 1;
                }
            }
            members.truncate(max_packets);
            let first = recs[members[0]].ts.0;
            let mut rows = Vec::new();
            for (pos, &i) in members.iter().enumerate() {
                let r = &recs[i];
                let forward = (u32::from(r.src), r.src_port) == lo;
                let mut ack = 0.0;
                if r.tcp_flags & 0x10 != 0 {
                    let base = members[..=pos]
                        .iter()
                        .map(|&k| &recs[k])
                        .find(|q| q.tcp_flags & 0x10 != 0 && ((u32::from(q.src), q.src_port) == lo) == forward)
                        .unwrap()
                        .tcp_ack;
                    ack = f64::from(r.tcp_ack.wrapping_sub(base));
                }
                rows.push([
                    (r.ts.0 - first) as f64 / 1e6,
                    f64::from(r.ip_len),
                    f64::from(r.highest_layer),
                    f64::from(r.ip_flags),
                    f64::from(r.protocols),
                    f64::from(r.tcp_len),
                    ack,
                    f64::from(r.tcp_flags),
                    f64::from(r.tcp_window),
                    f64::from(r.udp_len),
                    f64::from(r.icmp_type),
                ]);
            }
            out.push(RawSample {
                key: FlowKey {
                    ip_a: Ipv4Addr::from(lo.0),
                    port_a: lo.1,
                    ip_b: Ipv4Addr::from(hi.0),
                    port_b: hi.1,
                    protocol: proto,
                },
                window: w,
                rows,
            });
        }
        w += 1;
    }
    out
}

/// A capture of up to 50 packets over a handful of hosts with timestamp
/// ties, non-IP frames and one deliberately long flow.
pub fn crafted_capture(seed: u64) -> Vec<RawPacket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hosts = [A, B, Ipv4Addr::new(192, 168, 1, 9)];
    let n = rng.random_range(1..=50);
    let mut pkts = Vec::with_capacity(n);
    let burst = rng.random_range(0..n.min(14));
    for i in 0..n {
        let secs = if i < burst {
            // Dense flow: more than ten packets inside one window.
            2.0 + 0.01 * i as f64
        } else if rng.random_bool(0.3) {
            rng.random_range(0..60) as f64 * 0.5
        } else {
            rng.random_range(0.0..35.0)
        };
        let (s, d) = if i < burst {
            (A, B)
        } else {
            let s = hosts[rng.random_range(0..3)];
            let mut d = hosts[rng.random_range(0..3)];
            if d == s {
                d = hosts[(hosts.iter().position(|&h| h == s).unwrap() + 1) % 3];
            }
            (s, d)
        };
        let sp = [80u16, 443, 5000, 5001][rng.random_range(0..4)];
        let dp = [80u16, 53, 5000, 6000][rng.random_range(0..4)];
        let frame = match if i < burst { 0 } else { rng.random_range(0..5) } {
            0 | 1 => {
                let flags = [0x002, 0x012, 0x010, 0x018, 0x011][rng.random_range(0..5)];
                let payload = vec![b'x'; rng.random_range(0..3) * 40];
                let mut t = tcp(sp, dp, flags, rng.random());
                t.window = rng.random();
                if i < burst {
                    t.src_port = 40000;
                    t.dst_port = 80;
                }
                build_tcp(&ip(s, d), &t, &payload)
            }
            2 => build_udp(&ip(s, d), sp, dp, &vec![1u8; rng.random_range(0..100)]),
            3 => build_icmp(&ip(s, d), [0u8, 8][rng.random_range(0..2)], 0, 1, 1, &[0; 8]),
            _ => {
                let mut arp = vec![0xff; 12];
                arp.extend_from_slice(&[0x08, 0x06]);
                arp.extend_from_slice(&[0u8; 28]);
                arp
            }
        };
        pkts.push(pkt(secs, frame));
    }
    pkts
}
