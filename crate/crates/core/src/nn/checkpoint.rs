//! `FLTLNS01` checkpoint container.
//!
//! ```text
//! magic      8 bytes  "FLTLNS01"
//! count      u32      number of layer widths (L + 1)
//! widths     u32 x count
//! activation u8       0 = relu, 1 = tanh
//! n_dropout  u32
//! dropout    (layer u32, rate f64) x n_dropout
//! tensors    (len u64, f64 x len) for W^[0..L-1] then b^[0..L-1]
//! ```
//! All integers and floats are little-endian; tensors are row-major.

use std::path::Path;

use super::{
    arch::{Activation, Architecture, DropoutLayer},
    params::ParamVector,
};
use crate::{
    codec::{put_f64s, read_file, write_file, ByteReader},
    error::{Error, Result},
};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLTLNS01";

pub fn encode_checkpoint(arch: &Architecture, params: &ParamVector) -> Result<Vec<u8>> {
    if !params.matches(arch) {
        return Err(Error::dim("checkpoint parameters", arch.num_params(), params.len()));
    }
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(arch.widths().len() as u32).to_le_bytes());
    for &w in arch.widths() {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.push(arch.activation().tag());
    out.extend_from_slice(&(arch.dropout().len() as u32).to_le_bytes());
    for d in arch.dropout() {
        out.extend_from_slice(&(d.layer as u32).to_le_bytes());
        out.extend_from_slice(&d.rate.to_le_bytes());
    }
    for t in params.layout().tensors() {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        put_f64s(&mut out, &params.values()[t.range()]);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Architecture, ParamVector)> {
    let mut r = ByteReader::new(bytes);
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            field: "magic",
            message: "not an FLTLNS01 checkpoint".into(),
        });
    }
    let count = r.u32_le("layer count")? as usize;
    if !(2..=1024).contains(&count) {
        return Err(Error::Parse {
            field: "layer count",
            message: format!("implausible layer count {count}"),
        });
    }
    let widths = (0..count)
        .map(|_| r.u32_le("widths").map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let tag = r.u8("activation")?;
    let activation = Activation::from_tag(tag).ok_or_else(|| Error::Parse {
        field: "activation",
        message: format!("unknown activation tag {tag}"),
    })?;
    let n_dropout = r.u32_le("dropout count")? as usize;
    if n_dropout > count {
        return Err(Error::Parse {
            field: "dropout count",
            message: format!("{n_dropout} dropout layers for {count} widths"),
        });
    }
    let dropout = (0..n_dropout)
        .map(|_| {
            Ok(DropoutLayer {
                layer: r.u32_le("dropout layer")? as usize,
                rate: r.f64_le("dropout rate")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture::new(widths, activation, dropout).map_err(|e| Error::Parse {
        field: "architecture",
        message: e.to_string(),
    })?;
    let layout = arch.layout();
    let mut values = Vec::with_capacity(layout.len());
    for t in layout.tensors() {
        let len = r.u64_le("tensor length")? as usize;
        if len != t.len() {
            return Err(Error::Parse {
                field: "tensor length",
                message: format!("{:?}[{}] has {len} values, expected {}", t.kind, t.layer, t.len()),
            });
        }
        values.extend(r.f64s_le(len, "tensor data")?);
    }
    r.expect_end("checkpoint")?;
    Ok((arch, ParamVector::from_values(layout, values)?))
}

pub fn save_checkpoint(path: &Path, arch: &Architecture, params: &ParamVector) -> Result<()> {
    write_file(path, &encode_checkpoint(arch, params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(Architecture, ParamVector)> {
    decode_checkpoint(&read_file(path)?)
}
