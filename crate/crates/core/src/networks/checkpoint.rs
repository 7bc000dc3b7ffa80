//! `WDGC1` named-tensor checkpoints.
//!
//! Layout: magic `WDGC1`, little-endian `u32` entry count, then per entry a
//! `u32` name length, the UTF-8 name bytes and one `WDGT1` tensor record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ModelBundle;
use crate::error::{Error, Result};
use crate::tensor::snapshot::{read_tensor, write_tensor, CountingReader, SnapshotError};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"WDGC1";

/// An ordered collection of named tensors as stored on disk.
pub type NamedTensors = BTreeMap<String, Tensor>;

pub fn write_named<W: Write>(w: &mut W, entries: &NamedTensors) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_named<R: Read>(r: R) -> std::result::Result<NamedTensors, SnapshotError> {
    let mut r = CountingReader::new(r);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let count = r.read_u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.read_u32()? as usize;
        let at = r.offset;
        let bytes = r.read_bytes(len)?;
        let name = String::from_utf8(bytes).map_err(|_| SnapshotError::BadMagic {
            offset: at,
            expected: "UTF-8 tensor name".into(),
        })?;
        out.insert(name, read_tensor(&mut r)?);
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, entries: &NamedTensors) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_named(&mut w, entries)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<NamedTensors> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    match read_named(BufReader::new(f)) {
        Ok(v) => Ok(v),
        Err(SnapshotError::Io(e)) => Err(Error::io(path, e)),
        Err(e) => Err(e.into()),
    }
}

/// Model parameters keyed by their bundle-qualified names.
pub fn bundle_entries(bundle: &ModelBundle) -> NamedTensors {
    bundle.named_parameters().into_iter().collect()
}

/// Overwrites every bundle parameter from `entries`.
///
/// Fails without modifying the bundle if any parameter is absent or has a
/// different shape; the error lists every missing name.
pub fn restore_bundle(bundle: &mut ModelBundle, entries: &NamedTensors) -> Result<()> {
    let params = bundle.named_parameters();
    let missing: Vec<String> = params
        .iter()
        .filter(|(n, _)| !entries.contains_key(n))
        .map(|(n, _)| n.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::CheckpointMissing(missing));
    }
    for (name, t) in &params {
        let stored = &entries[name];
        if stored.shape() != t.shape() {
            return Err(Error::invalid(format!(
                "checkpoint parameter `{name}` has shape {:?}, model expects {:?}",
                stored.shape(),
                t.shape()
            )));
        }
    }
    for (name, _) in params {
        let stored = entries[&name].to_dtype(bundle.dtype()).requires_grad_(true);
        bundle.set_parameter(&name, stored)?;
    }
    Ok(())
}
