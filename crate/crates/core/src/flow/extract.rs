use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::features::{featurize, NUM_FEATURES};
use crate::flow::key::FlowKey;
use crate::flow::packet::PacketRecord;
use crate::wire::{Timestamp, TCP_ACK};

/// Unnormalized sample: one raw feature row per kept packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub key: FlowKey,
    pub window: u64,
    pub rows: Vec<[f64; NUM_FEATURES]>,
}

impl RawSample {
    pub fn flow_length(&self) -> usize {
        self.rows.len()
    }
}

/// Converts a window length to whole microseconds, rejecting non-positive values.
pub fn window_micros(window_seconds: f64) -> Result<u64> {
    if !(window_seconds.is_finite() && window_seconds > 0.0) {
        return Err(Error::Config(format!("window length must be positive, got {}", window_seconds)));
    }
    Ok(((window_seconds * 1e6).round() as u64).max(1))
}

/// Groups packets into per-(window, flow) samples.
///
/// Windows are tumbling and aligned to the earliest timestamp. Packets are
/// stably sorted by timestamp, so ties keep capture order. Samples are
/// returned ordered by `(window, key)`.
pub fn extract_samples(records: &[PacketRecord], window_seconds: f64, max_packets: usize) -> Result<Vec<RawSample>> {
    let width = window_micros(window_seconds)?;
    if max_packets == 0 {
        return Err(Error::Config("max_packets must be at least 1".into()));
    }
    let Some(start) = records.iter().map(|r| r.ts).min() else {
        return Ok(Vec::new());
    };
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| records[i].ts);

    let mut groups: BTreeMap<(u64, FlowKey), Vec<usize>> = BTreeMap::new();
    for i in order {
        let window = (records[i].ts.0 - start.0) / width;
        let members = groups.entry((window, FlowKey::of(&records[i]))).or_default();
        if members.len() < max_packets {
            members.push(i);
        }
    }

    Ok(groups
        .into_iter()
        .map(|((window, key), members)| RawSample { key, window, rows: featurize_flow(records, &members, &key) })
        .collect())
}

/// Rows for the given packets of one flow in one window, in order.
///
/// Time is relative to the first packet; the ack baseline is the first ack
/// seen in each direction.
pub(crate) fn featurize_flow(records: &[PacketRecord], members: &[usize], key: &FlowKey) -> Vec<[f64; NUM_FEATURES]> {
    let reference: Timestamp = records[members[0]].ts;
    let mut ack_base: [Option<u32>; 2] = [None, None];
    members
        .iter()
        .map(|&i| {
            let r = &records[i];
            let dir = usize::from(!(r.src == key.ip_a && r.src_port == key.port_a));
            let base = if r.tcp_flags & TCP_ACK != 0 { *ack_base[dir].get_or_insert(r.tcp_ack) } else { 0 };
            featurize(r, reference, base)
        })
        .collect()
}
