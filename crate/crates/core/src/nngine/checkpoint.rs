//! Checkpointing: bit-exact persistence of a parameter store and its
//! training position.
//!
//! Layout (on top of the binary container, see
//! [`numerics::container`](crate::numerics::container)):
//!
//! - header `kind` = `beamlink-checkpoint`, `step`, `epoch`, `batch`, and
//!   `frozen` (comma-joined frozen parameter names, possibly empty)
//! - `p/{name}` — parameter values
//! - `m/{name}`, `v/{name}` — Adam moments
//! - `b/{name}` — non-trainable buffers (batch-norm running statistics)
//!
//! Gradients are deliberately not saved: they are transient within a step.
//! All arrays round-trip as raw little-endian f64 bytes, so a save/load
//! cycle reproduces training state exactly.

use std::path::Path;

use super::store::ParameterStore;
use crate::numerics::container::{ArrayData, ArrayEntry, Container};
use crate::{Error, Result};

const KIND: &str = "beamlink-checkpoint";

/// Where a training run stands when a checkpoint is cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SchedulePos {
    pub epoch: usize,
    /// Batches completed within the epoch.
    pub batch: usize,
}

pub fn save_checkpoint(path: &Path, store: &ParameterStore, pos: SchedulePos) -> Result<()> {
    save_checkpoint_with(path, store, pos, &[])
}

/// Like [`save_checkpoint`], with caller-owned metadata stored under `x/`
/// header keys (model dimensions, experiment tags, …).
pub fn save_checkpoint_with(
    path: &Path,
    store: &ParameterStore,
    pos: SchedulePos,
    extras: &[(String, String)],
) -> Result<()> {
    let mut c = Container::new();
    c.header.insert("kind".into(), KIND.into());
    for (key, value) in extras {
        c.header.insert(format!("x/{key}"), value.clone());
    }
    c.header.insert("step".into(), store.step().to_string());
    c.header.insert("epoch".into(), pos.epoch.to_string());
    c.header.insert("batch".into(), pos.batch.to_string());
    c.header.insert(
        "frozen".into(),
        store.frozen_names().collect::<Vec<_>>().join(","),
    );
    for (name, entry) in store.entries() {
        let dims = vec![entry.rows(), entry.cols()];
        c.entries.insert(format!("p/{name}"), ArrayEntry::real(dims.clone(), entry.value.clone())?);
        c.entries.insert(format!("m/{name}"), ArrayEntry::real(dims.clone(), entry.m.clone())?);
        c.entries.insert(format!("v/{name}"), ArrayEntry::real(dims, entry.v.clone())?);
    }
    for (name, buf) in store.buffers() {
        c.entries.insert(
            format!("b/{name}"),
            ArrayEntry::real(vec![buf.rows(), buf.cols()], buf.value.clone())?,
        );
    }
    c.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, SchedulePos)> {
    let (store, pos, _) = load_checkpoint_with(path)?;
    Ok((store, pos))
}

/// Like [`load_checkpoint`], also returning the `x/`-prefixed metadata that
/// [`save_checkpoint_with`] stored (keys come back without the prefix).
pub fn load_checkpoint_with(
    path: &Path,
) -> Result<(ParameterStore, SchedulePos, Vec<(String, String)>)> {
    let c = Container::load(path)?;
    if c.header.get("kind").map(String::as_str) != Some(KIND) {
        return Err(Error::Integrity(format!(
            "container at {} is not a checkpoint",
            path.display()
        )));
    }
    let read_usize = |key: &str| -> Result<usize> {
        c.header
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Integrity(format!("checkpoint header lacks `{key}`")))
    };
    let step = read_usize("step")? as u64;
    let pos = SchedulePos { epoch: read_usize("epoch")?, batch: read_usize("batch")? };

    let mut store = ParameterStore::new();
    for (key, entry) in &c.entries {
        let Some(name) = key.strip_prefix("p/") else { continue };
        let (rows, cols) = entry_dims(key, entry)?;
        store.insert(name, rows, cols, real_data(key, entry)?)?;
        let m = c
            .entries
            .get(&format!("m/{name}"))
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks moments for `{name}`")))?;
        let v = c
            .entries
            .get(&format!("v/{name}"))
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks moments for `{name}`")))?;
        let slot = store.get_mut(name)?;
        slot.m = real_data(&format!("m/{name}"), m)?;
        slot.v = real_data(&format!("v/{name}"), v)?;
        if slot.m.len() != slot.value.len() || slot.v.len() != slot.value.len() {
            return Err(Error::Integrity(format!(
                "checkpoint moments for `{name}` disagree with its shape"
            )));
        }
    }
    for (key, entry) in &c.entries {
        let Some(name) = key.strip_prefix("b/") else { continue };
        let (rows, cols) = entry_dims(key, entry)?;
        store.insert_buffer(name, rows, cols, real_data(key, entry)?)?;
    }
    store.set_step(step);
    let frozen = c
        .header
        .get("frozen")
        .map(String::as_str)
        .unwrap_or("")
        .split(',')
        .filter(|s| !s.is_empty())
        .map(String::from);
    store.set_frozen(frozen);
    let extras = c
        .header
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("x/").map(|key| (key.to_string(), v.clone())))
        .collect();
    Ok((store, pos, extras))
}

fn entry_dims(key: &str, entry: &ArrayEntry) -> Result<(usize, usize)> {
    if entry.dims.len() != 2 {
        return Err(Error::Integrity(format!(
            "checkpoint entry `{key}` has rank {}, expected 2",
            entry.dims.len()
        )));
    }
    Ok((entry.dims[0], entry.dims[1]))
}

fn real_data(key: &str, entry: &ArrayEntry) -> Result<Vec<f64>> {
    match &entry.data {
        ArrayData::Real(d) => Ok(d.clone()),
        ArrayData::Complex(_) => {
            Err(Error::Integrity(format!("checkpoint entry `{key}` is complex, expected real")))
        }
    }
}
