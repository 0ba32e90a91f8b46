//! Capture parsing, bidirectional flow grouping per time window, and
//! normalized `10 x 11` samples.

pub mod dataset;
mod extract;
mod features;
mod key;
mod label;
mod normalize;
pub mod packet;
pub mod pcap;

pub use dataset::{DatasetMeta, LabeledDataset, Origin, Sample};
pub use extract::{extract_samples, window_micros, RawSample};
pub use features::{featurize, Feature, DEFAULT_MAX_PACKETS, DEFAULT_WINDOW_SECONDS, FEATURE_NAMES, NUM_FEATURES};
pub use key::{FlowKey, IpSet};
pub use label::{label_by_endpoints, Endpoints};
pub use normalize::NormalizationProfile;
pub use packet::{decode, layer, parse_capture, proto_bit, Decoded, PacketRecord, ParsedCapture};

use crate::error::Result;

/// Extracts raw samples from a capture, fits or reuses a profile, and
/// returns an unlabeled dataset.
pub fn dataset_from_records(
    records: &[PacketRecord],
    window_seconds: f64,
    max_packets: usize,
    profile: Option<&NormalizationProfile>,
    meta: DatasetMeta,
) -> Result<LabeledDataset> {
    let raw = extract_samples(records, window_seconds, max_packets)?;
    let profile = match profile {
        Some(p) => p.clone(),
        None => NormalizationProfile::fit(&raw)?,
    };
    let samples = profile.apply_all(&raw, max_packets)?;
    LabeledDataset::unlabeled(max_packets, samples, profile, meta)
}
