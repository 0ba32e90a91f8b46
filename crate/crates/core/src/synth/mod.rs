//! Seed-deterministic synthetic traces: a benign mix of web, ssh, DNS and
//! ICMP traffic plus an optional SYN flood or HTTP GET flood.

mod scenario;

pub use scenario::{AttackKind, AttackSpec, BenignMix, LogNormal, Scenario, DEFAULT_START};

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::Result;
use crate::flow::pcap::write_capture;
use crate::flow::IpSet;
use crate::wire::{
    build_icmp, build_tcp, build_udp, IpParams, RawPacket, TcpParams, Timestamp, TCP_ACK, TCP_FIN, TCP_PSH, TCP_RST,
    TCP_SYN,
};

pub const CLIENT_NET: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 0);
pub const WEB_SERVERS: [Ipv4Addr; 5] = [
    Ipv4Addr::new(192, 168, 10, 50),
    Ipv4Addr::new(192, 168, 10, 51),
    Ipv4Addr::new(192, 168, 10, 52),
    Ipv4Addr::new(192, 168, 10, 53),
    Ipv4Addr::new(192, 168, 10, 54),
];
pub const SSH_SERVER: Ipv4Addr = Ipv4Addr::new(192, 168, 10, 60);
pub const DNS_SERVER: Ipv4Addr = Ipv4Addr::new(192, 168, 10, 3);

/// Fraction of web connection attempts that hit a closed port (SYN, RST).
const REFUSED_FRACTION: f64 = 0.05;
/// SYN window of the crafted flood packets (the common packet-crafting default).
const ATTACK_SYN_WINDOW: u16 = 8192;
const SERVER_WINDOW: u16 = 65160;
const SERVER_DATA_WINDOW: u16 = 509;
/// Client OS profiles: (SYN window, data window).
const CLIENT_STACKS: [(u16, u16); 3] = [(64240, 502), (65535, 2058), (29200, 229)];

/// Independent random streams so enabling one component never changes
/// the bytes of another.
#[derive(Clone, Copy)]
enum Stream {
    Web = 1,
    Ssh = 2,
    Dns = 3,
    Icmp = 4,
    Attack = 5,
}

fn stream_rng(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Generates the full trace, sorted by timestamp (generation order on ties).
pub fn synthesize(sc: &Scenario) -> Result<Vec<RawPacket>> {
    sc.validate()?;
    let mut pkts = synth_benign(sc)?;
    if let Some(a) = &sc.attack {
        pkts.extend(match a.kind {
            AttackKind::SynFlood => synth_syn_flood(sc)?,
            AttackKind::HttpGetFlood => synth_http_flood(sc)?,
        });
    }
    pkts.sort_by_key(|p| p.ts);
    Ok(pkts)
}

pub fn write_scenario(sc: &Scenario, path: impl AsRef<Path>) -> Result<usize> {
    let pkts = synthesize(sc)?;
    write_capture(path, &pkts)?;
    Ok(pkts.len())
}

/// Attacker address set (the source network) of a scenario, if it has an attack.
pub fn attacker_set(sc: &Scenario) -> Option<IpSet> {
    sc.attack.as_ref().map(|a| {
        let mut s = IpSet::new();
        s.insert_block(a.source_net, a.source_prefix);
        s
    })
}

pub fn victim_set(sc: &Scenario) -> Option<IpSet> {
    sc.attack.as_ref().map(|a| {
        let mut s = IpSet::new();
        s.insert(*a.victim.ip());
        s
    })
}

struct Emitter {
    out: Vec<RawPacket>,
    id: u16,
}

impl Emitter {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Emitter { out: Vec::new(), id: rng.random() }
    }

    fn ip(&mut self, src: Ipv4Addr, dst: Ipv4Addr, ttl: u8, df: bool) -> IpParams {
        self.id = self.id.wrapping_add(1);
        IpParams { src, dst, id: self.id, ttl, dont_fragment: df }
    }

    fn push(&mut self, t: u64, frame: Vec<u8>) {
        self.out.push(RawPacket { ts: Timestamp(t), frame });
    }
}

/// Both endpoints of one TCP connection with their sequence state.
struct Conn {
    client: Ipv4Addr,
    server: Ipv4Addr,
    cport: u16,
    sport: u16,
    cseq: u32,
    sseq: u32,
    cwin: u16,
    swin: u16,
    c_df: bool,
    c_ttl: u8,
}

impl Conn {
    fn client(&mut self, em: &mut Emitter, t: u64, flags: u16, payload: &[u8]) {
        let ip = em.ip(self.client, self.server, self.c_ttl, self.c_df);
        let tcp = TcpParams {
            src_port: self.cport,
            dst_port: self.sport,
            seq: self.cseq,
            ack: if flags & TCP_ACK != 0 { self.sseq } else { 0 },
            flags,
            window: self.cwin,
        };
        em.push(t, build_tcp(&ip, &tcp, payload));
        self.cseq = self.cseq.wrapping_add(seq_len(flags, payload));
    }

    fn server(&mut self, em: &mut Emitter, t: u64, flags: u16, payload: &[u8]) {
        let ip = em.ip(self.server, self.client, 64, true);
        let tcp = TcpParams {
            src_port: self.sport,
            dst_port: self.cport,
            seq: self.sseq,
            ack: if flags & TCP_ACK != 0 { self.cseq } else { 0 },
            flags,
            window: self.swin,
        };
        em.push(t, build_tcp(&ip, &tcp, payload));
        self.sseq = self.sseq.wrapping_add(seq_len(flags, payload));
    }
}

fn seq_len(flags: u16, payload: &[u8]) -> u32 {
    payload.len() as u32 + u32::from(flags & (TCP_SYN | TCP_FIN) != 0)
}

fn micros(secs: f64) -> u64 {
    (secs * 1e6).round().max(1.0) as u64
}

fn exp(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng)
}

fn lognormal(rng: &mut ChaCha8Rng, p: LogNormal) -> f64 {
    let z: f64 = rand_distr::StandardNormal.sample(rng);
    (p.mu + p.sigma * z).exp()
}

/// `round(rate * span)` start offsets (µs from the trace origin), sorted.
fn flow_starts(rng: &mut ChaCha8Rng, rate: f64, from: f64, to: f64, origin: u64) -> Vec<u64> {
    let n = (rate * (to - from)).round() as usize;
    let mut v: Vec<u64> = (0..n).map(|_| origin + ((from + rng.random::<f64>() * (to - from)) * 1e6) as u64).collect();
    v.sort_unstable();
    v
}

fn client_addr(i: u16) -> Ipv4Addr {
    let o = CLIENT_NET.octets();
    Ipv4Addr::new(o[0], o[1], o[2], 10 + i as u8)
}

fn ephemeral(rng: &mut ChaCha8Rng) -> u16 {
    rng.random_range(32768..61000)
}

/// Payload of `len` bytes; HTTP requests start with a GET line.
fn http_request(rng: &mut ChaCha8Rng, len: usize, host: Ipv4Addr) -> Vec<u8> {
    let mut p = format!(
        "GET /item/{} HTTP/1.1\r\nHost: {}\r\nUser-Agent: bench/1.0\r\nX-Fill: ",
        rng.random_range(0..100_000),
        host
    )
    .into_bytes();
    while p.len() + 4 < len {
        p.push(b'a' + rng.random_range(0..26u8));
    }
    p.extend_from_slice(b"\r\n\r\n");
    p.truncate(len.max(16));
    p
}

fn random_bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.random()).collect()
}

pub fn synth_benign(sc: &Scenario) -> Result<Vec<RawPacket>> {
    sc.validate()?;
    let origin = micros(sc.start_time);
    let mut out = Vec::new();
    if sc.duration <= 0.0 {
        return Ok(out);
    }
    out.extend(web_flows(sc, origin));
    out.extend(ssh_flows(sc, origin));
    out.extend(dns_flows(sc, origin));
    out.extend(icmp_flows(sc, origin));
    out.sort_by_key(|p| p.ts);
    Ok(out)
}

fn pick_client(rng: &mut ChaCha8Rng, b: &BenignMix) -> (u16, Ipv4Addr) {
    let i = rng.random_range(0..b.clients);
    (i, client_addr(i))
}

fn web_flows(sc: &Scenario, origin: u64) -> Vec<RawPacket> {
    let b = &sc.benign;
    let mut rng = stream_rng(sc.seed, Stream::Web);
    let mut em = Emitter::new(&mut rng);
    for start in flow_starts(&mut rng, b.web_rate, 0.0, sc.duration, origin) {
        let (ci, client) = pick_client(&mut rng, b);
        let server = WEB_SERVERS[rng.random_range(0..WEB_SERVERS.len())];
        let tls = rng.random_bool(0.3);
        let (syn_win, data_win) = CLIENT_STACKS[usize::from(ci) % CLIENT_STACKS.len()];
        let rtt = rng.random_range(b.rtt[0]..=b.rtt[1]);
        let mut c = Conn {
            client,
            server,
            cport: ephemeral(&mut rng),
            sport: if tls { 443 } else { 80 },
            cseq: rng.random(),
            sseq: rng.random(),
            cwin: syn_win,
            swin: SERVER_WINDOW,
            c_df: true,
            c_ttl: 64,
        };
        let mut t = start;
        c.client(&mut em, t, TCP_SYN, &[]);
        t += micros(rtt * rng.random_range(0.9..1.1));
        if rng.random_bool(REFUSED_FRACTION) {
            c.swin = 0;
            c.server(&mut em, t, TCP_RST | TCP_ACK, &[]);
            continue;
        }
        c.server(&mut em, t, TCP_SYN | TCP_ACK, &[]);
        c.cwin = data_win;
        c.swin = SERVER_DATA_WINDOW;
        t += micros(rng.random_range(0.0001..0.001));
        c.client(&mut em, t, TCP_ACK, &[]);
        let keepalive = rng.random_bool(b.keepalive_fraction);
        let (requests, gap) = if keepalive {
            let [lo, hi] = b.keepalive_requests;
            (rng.random_range(lo..=hi) as usize, b.keepalive_gap)
        } else {
            (1 + (exp(&mut rng, 0.8).floor() as usize).min(4), b.mean_gap)
        };
        for _ in 0..requests {
            t += micros(exp(&mut rng, gap));
            let len = lognormal(&mut rng, b.request_size).clamp(60.0, 1400.0) as usize;
            let req = if tls { random_bytes(&mut rng, len) } else { http_request(&mut rng, len, server) };
            c.client(&mut em, t, TCP_PSH | TCP_ACK, &req);
            t += micros(rtt * rng.random_range(0.9..1.3));
            let total = lognormal(&mut rng, b.response_size).clamp(100.0, 12.0 * 1460.0) as usize;
            let segments = total.div_ceil(1460);
            for s in 0..segments {
                let len = if s + 1 == segments { total - 1460 * s } else { 1460 };
                let flags = if s + 1 == segments { TCP_PSH | TCP_ACK } else { TCP_ACK };
                c.server(&mut em, t, flags, &random_bytes(&mut rng, len));
                if s % 2 == 1 || s + 1 == segments {
                    t += micros(rng.random_range(0.0001..0.002));
                    c.client(&mut em, t, TCP_ACK, &[]);
                }
                t += micros(exp(&mut rng, 0.002));
            }
        }
        t += micros(exp(&mut rng, b.mean_gap));
        c.client(&mut em, t, TCP_FIN | TCP_ACK, &[]);
        t += micros(rtt);
        c.server(&mut em, t, TCP_FIN | TCP_ACK, &[]);
        t += micros(rng.random_range(0.0001..0.001));
        c.client(&mut em, t, TCP_ACK, &[]);
    }
    em.out
}

fn ssh_flows(sc: &Scenario, origin: u64) -> Vec<RawPacket> {
    let b = &sc.benign;
    let mut rng = stream_rng(sc.seed, Stream::Ssh);
    let mut em = Emitter::new(&mut rng);
    for start in flow_starts(&mut rng, b.ssh_rate, 0.0, sc.duration, origin) {
        let (ci, client) = pick_client(&mut rng, b);
        let (syn_win, data_win) = CLIENT_STACKS[usize::from(ci) % CLIENT_STACKS.len()];
        let rtt = rng.random_range(b.rtt[0]..=b.rtt[1]);
        let mut c = Conn {
            client,
            server: SSH_SERVER,
            cport: ephemeral(&mut rng),
            sport: 22,
            cseq: rng.random(),
            sseq: rng.random(),
            cwin: syn_win,
            swin: SERVER_WINDOW,
            c_df: true,
            c_ttl: 64,
        };
        let mut t = start;
        c.client(&mut em, t, TCP_SYN, &[]);
        t += micros(rtt);
        c.server(&mut em, t, TCP_SYN | TCP_ACK, &[]);
        c.cwin = data_win;
        c.swin = SERVER_DATA_WINDOW;
        t += micros(0.0003);
        c.client(&mut em, t, TCP_ACK, &[]);
        // Banners and key exchange.
        for (from_client, len) in [(false, 41), (true, 36), (true, 1512 - 40), (false, 1080), (true, 48), (false, 500)]
        {
            t += micros(rtt * rng.random_range(0.5..1.0));
            let payload = random_bytes(&mut rng, len);
            if from_client {
                c.client(&mut em, t, TCP_PSH | TCP_ACK, &payload);
            } else {
                c.server(&mut em, t, TCP_PSH | TCP_ACK, &payload);
            }
        }
        let end = t + micros(exp(&mut rng, b.ssh_session).clamp(2.0, 120.0));
        while t < end {
            t += micros(exp(&mut rng, 0.6));
            let len = [36usize, 36, 52, 68][rng.random_range(0..4)];
            c.client(&mut em, t, TCP_PSH | TCP_ACK, &random_bytes(&mut rng, len));
            t += micros(rtt);
            c.server(&mut em, t, TCP_PSH | TCP_ACK, &random_bytes(&mut rng, len));
            if rng.random_bool(0.5) {
                t += micros(0.0004);
                c.client(&mut em, t, TCP_ACK, &[]);
            }
        }
        t += micros(0.01);
        c.client(&mut em, t, TCP_FIN | TCP_ACK, &[]);
        t += micros(rtt);
        c.server(&mut em, t, TCP_FIN | TCP_ACK, &[]);
        t += micros(0.0004);
        c.client(&mut em, t, TCP_ACK, &[]);
    }
    em.out
}

fn dns_flows(sc: &Scenario, origin: u64) -> Vec<RawPacket> {
    let b = &sc.benign;
    let mut rng = stream_rng(sc.seed, Stream::Dns);
    let mut em = Emitter::new(&mut rng);
    for start in flow_starts(&mut rng, b.dns_rate, 0.0, sc.duration, origin) {
        let (_, client) = pick_client(&mut rng, b);
        let port = ephemeral(&mut rng);
        let qlen = rng.random_range(28..70);
        let query = random_bytes(&mut rng, qlen);
        let ip = em.ip(client, DNS_SERVER, 64, false);
        em.push(start, build_udp(&ip, port, 53, &query));
        let rtt = rng.random_range(b.rtt[0]..=b.rtt[1]) * 0.3;
        let rlen = qlen + rng.random_range(16..240);
        let answer = random_bytes(&mut rng, rlen);
        let ip = em.ip(DNS_SERVER, client, 64, false);
        em.push(start + micros(rtt), build_udp(&ip, 53, port, &answer));
    }
    em.out
}

fn icmp_flows(sc: &Scenario, origin: u64) -> Vec<RawPacket> {
    let b = &sc.benign;
    let mut rng = stream_rng(sc.seed, Stream::Icmp);
    let mut em = Emitter::new(&mut rng);
    for start in flow_starts(&mut rng, b.icmp_rate, 0.0, sc.duration, origin) {
        let (_, client) = pick_client(&mut rng, b);
        let target = WEB_SERVERS[rng.random_range(0..WEB_SERVERS.len())];
        let ident: u16 = rng.random();
        let rtt = rng.random_range(b.rtt[0]..=b.rtt[1]);
        let payload = random_bytes(&mut rng, 56);
        for seq in 0..rng.random_range(1..=4u16) {
            let t = start + micros(f64::from(seq));
            let ip = em.ip(client, target, 64, false);
            em.push(t, build_icmp(&ip, 8, 0, ident, seq, &payload));
            let ip = em.ip(target, client, 64, false);
            em.push(t + micros(rtt), build_icmp(&ip, 0, 0, ident, seq, &payload));
        }
    }
    em.out
}

/// Distinct source addresses drawn from the attack network.
fn source_pool(rng: &mut ChaCha8Rng, a: &AttackSpec) -> Vec<Ipv4Addr> {
    let bits = 32 - u32::from(a.source_prefix);
    let room = if bits >= 32 { u32::MAX as usize } else { (1usize << bits) - 1 };
    let base = u32::from(a.source_net) & if bits >= 32 { 0 } else { u32::MAX << bits };
    if room <= 1 {
        return vec![Ipv4Addr::from(base)];
    }
    let n = (a.source_pool as usize).min(room - 1);
    let mut hosts: Vec<usize> = sample(rng, room - 1, n).into_iter().map(|h| h + 1).collect();
    hosts.sort_unstable();
    hosts.into_iter().map(|h| Ipv4Addr::from(base + h as u32)).collect()
}

/// Hands out source ports so that each (address, port) pair is used once.
struct PortBook {
    next: BTreeMap<Ipv4Addr, u32>,
}

impl PortBook {
    fn take(&mut self, rng: &mut ChaCha8Rng, ip: Ipv4Addr) -> u16 {
        let n = self.next.entry(ip).or_insert_with(|| rng.random_range(0..64_000));
        let port = 1024 + (*n % 64_511) as u16;
        *n += 1;
        port
    }
}

fn attack_spec(sc: &Scenario) -> Option<&AttackSpec> {
    sc.attack.as_ref().filter(|_| sc.duration > 0.0)
}

pub fn synth_syn_flood(sc: &Scenario) -> Result<Vec<RawPacket>> {
    sc.validate()?;
    let Some(a) = attack_spec(sc) else {
        return Ok(Vec::new());
    };
    let origin = micros(sc.start_time);
    let mut rng = stream_rng(sc.seed, Stream::Attack);
    let mut em = Emitter::new(&mut rng);
    let pool = source_pool(&mut rng, a);
    let mut ports = PortBook { next: BTreeMap::new() };
    let mut backlog: VecDeque<u64> = VecDeque::new();
    let (from, to) = (a.active[0] * sc.duration, a.active[1] * sc.duration);
    for t in flow_starts(&mut rng, a.rate, from, to, origin) {
        let src = pool[rng.random_range(0..pool.len())];
        let mut c = Conn {
            client: src,
            server: *a.victim.ip(),
            cport: ports.take(&mut rng, src),
            sport: a.victim.port(),
            cseq: rng.random(),
            sseq: rng.random(),
            cwin: ATTACK_SYN_WINDOW,
            swin: SERVER_WINDOW,
            c_df: false,
            c_ttl: 64,
        };
        c.client(&mut em, t, TCP_SYN, &[]);
        while backlog.front().is_some_and(|&exp| exp <= t) {
            backlog.pop_front();
        }
        if a.replies && backlog.len() < a.backlog {
            backlog.push_back(t + micros(a.backlog_timeout));
            c.server(&mut em, t + micros(rng.random_range(0.0002..0.001)), TCP_SYN | TCP_ACK, &[]);
        }
    }
    Ok(em.out)
}

pub fn synth_http_flood(sc: &Scenario) -> Result<Vec<RawPacket>> {
    sc.validate()?;
    let Some(a) = attack_spec(sc) else {
        return Ok(Vec::new());
    };
    // Requests and responses follow the benign size profile; only pacing and
    // connection handling give the flood away.
    let b = &sc.benign;
    let origin = micros(sc.start_time);
    let mut rng = stream_rng(sc.seed, Stream::Attack);
    let mut em = Emitter::new(&mut rng);
    let pool = source_pool(&mut rng, a);
    let mut ports = PortBook { next: BTreeMap::new() };
    let (from, to) = (a.active[0] * sc.duration, a.active[1] * sc.duration);
    for start in flow_starts(&mut rng, a.rate, from, to, origin) {
        let src = pool[rng.random_range(0..pool.len())];
        let mut c = Conn {
            client: src,
            server: *a.victim.ip(),
            cport: ports.take(&mut rng, src),
            sport: a.victim.port(),
            cseq: rng.random(),
            sseq: rng.random(),
            cwin: ATTACK_SYN_WINDOW,
            swin: SERVER_WINDOW,
            c_df: true,
            c_ttl: 128,
        };
        let mut t = start;
        c.client(&mut em, t, TCP_SYN, &[]);
        t += micros(rng.random_range(0.0002..0.001));
        c.server(&mut em, t, TCP_SYN | TCP_ACK, &[]);
        c.cwin = CLIENT_STACKS[0].1;
        c.swin = SERVER_DATA_WINDOW;
        t += micros(rng.random_range(0.00005..0.0003));
        c.client(&mut em, t, TCP_ACK, &[]);
        for _ in 0..rng.random_range(a.requests[0]..=a.requests[1]) {
            t += micros(rng.random_range(0.00005..0.0005));
            let len = lognormal(&mut rng, b.request_size).clamp(60.0, 1400.0) as usize;
            let req = http_request(&mut rng, len, *a.victim.ip());
            c.client(&mut em, t, TCP_PSH | TCP_ACK, &req);
            t += micros(rng.random_range(0.0002..0.001));
            let total = lognormal(&mut rng, b.response_size).clamp(100.0, 12.0 * 1460.0) as usize;
            let segments = total.div_ceil(1460);
            for s in 0..segments {
                let len = if s + 1 == segments { total - 1460 * s } else { 1460 };
                let flags = if s + 1 == segments { TCP_PSH | TCP_ACK } else { TCP_ACK };
                c.server(&mut em, t, flags, &vec![b'x'; len]);
                if s % 2 == 1 || s + 1 == segments {
                    t += micros(rng.random_range(0.00005..0.0003));
                    c.client(&mut em, t, TCP_ACK, &[]);
                }
                t += micros(rng.random_range(0.00002..0.0002));
            }
        }
        t += micros(rng.random_range(0.00005..0.0005));
        c.client(&mut em, t, TCP_RST | TCP_ACK, &[]);
    }
    Ok(em.out)
}
