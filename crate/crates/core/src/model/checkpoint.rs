//! Checkpoint files.
//!
//! ```text
//! magic        7 bytes "SMCKPT1"
//! config       9 × u32: k, channels, n_ssmrb, skip_taps, skip_channels,
//!              branch_channels, mod_hidden, variant, patch_size
//! count        u32
//! count × { name_len u32, name bytes, rank u32, rank × u32 extents,
//!           f32 values }
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{build, Model, ModelConfig, ModelError, Variant};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SMCKPT1";

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes `model`; values are stored as f32.
pub fn write_checkpoint<W: Write>(model: &Model, mut out: W) -> Result<(), ModelError> {
    let cfg = model.config();
    let mut buf = CHECKPOINT_MAGIC.to_vec();
    for v in [
        cfg.k,
        cfg.channels,
        cfg.n_ssmrb,
        cfg.skip_taps,
        cfg.skip_channels,
        cfg.branch_channels,
        cfg.mod_hidden,
        cfg.variant.code() as usize,
        cfg.patch_size,
    ] {
        put_u32(&mut buf, v)?;
    }
    put_u32(&mut buf, model.params().len())?;
    for (name, p) in model.param_names().iter().zip(model.params()) {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, p.rank())?;
        for &e in p.shape() {
            put_u32(&mut buf, e)?;
        }
        for &v in p.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, ModelError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint and checks it against the topology its config
/// implies; every parameter name and shape must match.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Model, ModelError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, at: 0 };
    if cur.take(7, "magic")? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let mut field = |name: &str| cur.u32(name);
    let k = field("k")?;
    let channels = field("channels")?;
    let n_ssmrb = field("n_ssmrb")?;
    let skip_taps = field("skip_taps")?;
    let skip_channels = field("skip_channels")?;
    let branch_channels = field("branch_channels")?;
    let mod_hidden = field("mod_hidden")?;
    let code = field("variant")?;
    let patch_size = field("patch_size")?;
    let variant = Variant::from_code(code as u32)
        .ok_or_else(|| ModelError::Checkpoint(format!("unknown variant code {code}")))?;
    let config = ModelConfig {
        k,
        channels,
        n_ssmrb,
        skip_taps,
        skip_channels,
        branch_channels,
        mod_hidden,
        variant,
        patch_size,
    };
    let mut model = build(&config, 0)?;

    let count = cur.u32("parameter count")?;
    if count != model.params().len() {
        return Err(ModelError::Checkpoint(format!(
            "config implies {} parameters, file has {count}",
            model.params().len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for expected in model.param_names() {
        let len = cur.u32("name length")?;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?;
        if name != expected {
            return Err(ModelError::Checkpoint(format!("expected parameter {expected}, found {name}")));
        }
        let rank = cur.u32("rank")?;
        let shape = (0..rank).map(|_| cur.u32("extent")).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| ModelError::Checkpoint(format!("{name}: extents overflow")))?;
        let raw = cur.take(
            n.checked_mul(4)
                .ok_or_else(|| ModelError::Checkpoint(format!("{name}: extents overflow")))?,
            name,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
        values.push(t);
    }
    if cur.at != bytes.len() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.at)));
    }
    model.set_params(values)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    read_checkpoint(&fs::read(path)?[..])
}
