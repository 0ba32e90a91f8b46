use std::collections::{BTreeMap, BTreeSet};

use floodguard::flow::pcap::capture_bytes;
use floodguard::flow::{extract_samples, FlowKey, PacketRecord, ParsedCapture};
use floodguard::synth::{synthesize, AttackSpec, BenignMix, Scenario};
use floodguard::wire::{verify_checksums, Ipv4Frame, TCP_ACK, TCP_SYN};

fn quiet() -> BenignMix {
    BenignMix { web_rate: 0.0, ssh_rate: 0.0, dns_rate: 0.0, icmp_rate: 0.0, ..BenignMix::default() }
}

fn records(sc: &Scenario) -> Vec<PacketRecord> {
    let parsed = ParsedCapture::from_packets(&synthesize(sc).unwrap());
    assert_eq!(parsed.skipped, 0);
    parsed.records
}

#[test]
fn same_seed_gives_identical_bytes() {
    let sc = Scenario::syn_flood(1, 8.0);
    let a = capture_bytes(&synthesize(&sc).unwrap());
    let b = capture_bytes(&synthesize(&sc).unwrap());
    assert_eq!(a, b);
    let other = capture_bytes(&synthesize(&Scenario::syn_flood(2, 8.0)).unwrap());
    assert_ne!(a, other);
}

#[test]
fn zero_duration_is_an_empty_capture() {
    let sc = Scenario { duration: 0.0, ..Scenario::syn_flood(1, 0.0) };
    let pkts = synthesize(&sc).unwrap();
    assert!(pkts.is_empty());
    assert_eq!(capture_bytes(&pkts).len(), 24);
}

#[test]
fn web_flows_have_distinct_keys() {
    let sc = Scenario { duration: 5.0, benign: BenignMix { web_rate: 2.0, ..quiet() }, ..Scenario::default() };
    let recs = records(&sc);
    let keys: BTreeSet<FlowKey> = recs.iter().map(FlowKey::of).collect();
    assert!(keys.len() >= 10, "{} keys", keys.len());
    let syns = recs.iter().filter(|r| r.tcp_flags == TCP_SYN).count();
    assert_eq!(syns, 10);
}

#[test]
fn syn_flood_rate_and_flags() {
    let sc = Scenario {
        duration: 1.0,
        benign: quiet(),
        attack: Some(AttackSpec { rate: 100.0, replies: false, ..AttackSpec::default() }),
        ..Scenario::default()
    };
    let recs = records(&sc);
    assert_eq!(recs.len(), 100);
    assert!(recs.iter().all(|r| r.tcp_flags == TCP_SYN && r.dst_port == 80));
}

#[test]
fn replied_syns_form_two_packet_flows() {
    let sc = Scenario {
        duration: 2.0,
        benign: quiet(),
        attack: Some(AttackSpec { rate: 20.0, backlog: 1000, ..AttackSpec::default() }),
        ..Scenario::default()
    };
    let samples = extract_samples(&records(&sc), 10.0, 10).unwrap();
    assert_eq!(samples.len(), 40);
    assert!(samples.iter().all(|s| s.flow_length() == 2));
}

#[test]
fn single_source_pool_reuses_one_address() {
    let sc = Scenario {
        duration: 1.0,
        benign: quiet(),
        attack: Some(AttackSpec { rate: 50.0, source_pool: 1, replies: false, ..AttackSpec::default() }),
        ..Scenario::default()
    };
    let recs = records(&sc);
    let srcs: BTreeSet<_> = recs.iter().map(|r| r.src).collect();
    let ports: BTreeSet<_> = recs.iter().map(|r| r.src_port).collect();
    assert_eq!(srcs.len(), 1);
    assert_eq!(ports.len(), recs.len());
}

#[test]
fn http_flood_flows_carry_gets() {
    let sc = Scenario { benign: quiet(), ..Scenario::http_flood(5, 4.0) };
    let pkts = synthesize(&sc).unwrap();
    let victim = sc.attack.as_ref().unwrap().victim;
    let mut gets = 0;
    for p in &pkts {
        let mut frame = p.frame.clone();
        let f = Ipv4Frame::new(&mut frame).unwrap();
        let (sp, dp) = f.tcp_ports().unwrap();
        let payload = f.tcp_payload().unwrap();
        if f.dst() == *victim.ip() {
            assert_eq!(dp, victim.port());
            if !payload.is_empty() {
                assert!(payload.starts_with(b"GET "));
                gets += 1;
            }
        } else {
            assert_eq!(sp, victim.port());
        }
    }
    assert!(gets > 0);
    let recs = ParsedCapture::from_packets(&pkts).records;
    let samples = extract_samples(&recs, 10.0, 10).unwrap();
    assert!(samples.iter().all(|s| s.flow_length() >= 4));
}

#[test]
fn every_frame_has_valid_checksums() {
    for sc in [Scenario::syn_flood(3, 10.0), Scenario::http_flood(3, 10.0)] {
        let pkts = synthesize(&sc).unwrap();
        assert!(pkts.len() > 100);
        assert!(pkts.iter().all(|p| verify_checksums(&p.frame)));
        assert!(pkts.windows(2).all(|w| w[0].ts <= w[1].ts));
    }
}

#[test]
fn benign_mix_covers_every_component() {
    let sc = Scenario { duration: 30.0, ..Scenario::default() };
    let recs = records(&sc);
    let mut by_proto: BTreeMap<u8, usize> = BTreeMap::new();
    for r in &recs {
        *by_proto.entry(r.protocol).or_default() += 1;
    }
    assert!(by_proto.get(&6).copied().unwrap_or(0) > 100);
    assert!(by_proto.get(&17).copied().unwrap_or(0) > 10);
    assert!(by_proto.get(&1).copied().unwrap_or(0) > 0);
    assert!(recs.iter().any(|r| r.dst_port == 22));
    assert!(recs.iter().any(|r| r.tcp_flags & TCP_ACK != 0 && r.tcp_len > 0));
    assert!(sc.attack.is_none());
}
