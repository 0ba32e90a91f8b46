//! Minimal reverse-mode differentiation engine: tensors, a tape-style
//! graph, layer helpers, Adam and parameter checkpoints.

mod adam;
mod graph;
pub mod layers;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{GatherMap, Gradients, Graph, NodeId};
pub use params::{Bound, ParamSet};
pub use tensor::Tensor;

pub(crate) use graph::sigmoid;

use std::path::Path;

use serde_json::Value;

use crate::artifact::Container;
use crate::error::Result;

/// Writes `params` (prefixed with `prefix.`) into `container`.
pub fn push_params(container: &mut Container, prefix: &str, params: &ParamSet) {
    for (name, t) in params.iter() {
        container.push(&format!("{}.{}", prefix, name), t.clone());
    }
}

/// Reads back the tensors written by [`push_params`] under `prefix`.
pub fn pull_params(container: &Container, prefix: &str) -> ParamSet {
    let lead = format!("{}.", prefix);
    ParamSet::from_entries(
        container
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&lead).map(|s| (s.to_string(), t.clone())))
            .collect(),
    )
}

/// Saves a bare parameter set as a checkpoint.
pub fn save_checkpoint(path: impl AsRef<Path>, kind: &str, meta: Value, params: &ParamSet) -> Result<()> {
    let mut c = Container::new(kind, meta);
    push_params(&mut c, "params", params);
    c.write(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>, kind: &str) -> Result<(Value, ParamSet)> {
    let c = Container::read(path)?;
    c.expect_kind(kind)?;
    let params = pull_params(&c, "params");
    Ok((c.meta, params))
}
