//! Little-endian binary containers for PCA bases (`UDCK`) and network
//! checkpoints (`UDCN`).
//!
//! `UDCK`: magic, `u16` version, `u16` b, `u32` side, then the mean and the
//! `b` components as `f32`, `side * side` values each.
//!
//! `UDCN`: magic, `u16` version, `u32` base_channels, `u32` scales, `u32`
//! filter_size, `u32` code_dim, `f32` leaky_slope, `u32` tensor count, then
//! per tensor: `u32` name length, UTF-8 name, `u32` rank, `u32` dims, and
//! the `f32` payload. Ranks drop leading unit dimensions.

use std::path::Path;

use indexmap::IndexMap;

use crate::discnet::{NetworkConfig, NetworkParams, Tensor};
use crate::error::{Error, Result};
use crate::kernel_code::PcaBasis;

use super::{read_bytes, write_bytes};

pub const BASIS_MAGIC: &[u8; 4] = b"UDCK";
pub const MODEL_MAGIC: &[u8; 4] = b"UDCN";
pub const VERSION: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(self.path, "size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(
                self.path,
                format!("missing {} magic", String::from_utf8_lossy(magic)),
            ));
        }
        let v = self.u16()?;
        if v != VERSION {
            return Err(Error::format(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_basis(basis: &PcaBasis) -> Result<Vec<u8>> {
    let b = u16::try_from(basis.code_dim())
        .map_err(|_| Error::InvalidArgument("code dimension too large".into()))?;
    let side =
        u32::try_from(basis.side).map_err(|_| Error::InvalidArgument("side too large".into()))?;
    let mut out = BASIS_MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out.extend_from_slice(&side.to_le_bytes());
    put_f32s(&mut out, basis.mean.iter().map(|&v| v as f32));
    for c in &basis.components {
        put_f32s(&mut out, c.iter().map(|&v| v as f32));
    }
    Ok(out)
}

pub fn decode_basis(bytes: &[u8], path: &Path) -> Result<PcaBasis> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    r.header(BASIS_MAGIC)?;
    let b = r.u16()? as usize;
    let side = r.u32()? as usize;
    if b == 0 || side == 0 {
        return Err(Error::format(path, "empty basis"));
    }
    let d = side
        .checked_mul(side)
        .ok_or_else(|| Error::format(path, "side too large"))?;
    let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
    let mean = widen(r.f32s(d)?);
    let components = (0..b)
        .map(|_| r.f32s(d).map(widen))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    PcaBasis::new(side, mean, components)
}

pub fn encode_model(params: &NetworkParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = MODEL_MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cfg.base_channels, cfg.scales, cfg.filter_size, cfg.code_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(cfg.leaky_slope as f32).to_le_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.tensors() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = t.shape();
        let lead = shape.iter().take(3).take_while(|&&d| d == 1).count();
        let dims = &shape[lead..];
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, t.data().iter().copied());
    }
    out
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<NetworkParams> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    r.header(MODEL_MAGIC)?;
    let base_channels = r.u32()? as usize;
    let scales = r.u32()? as usize;
    let filter_size = r.u32()? as usize;
    let code_dim = r.u32()? as usize;
    let leaky_slope = r.f32()? as f64;
    let cfg = NetworkConfig {
        base_channels,
        scales,
        filter_size,
        code_dim,
        leaky_slope,
    };
    let count = r.u32()? as usize;
    let mut tensors = IndexMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        if !(1..=4).contains(&rank) {
            return Err(Error::format(
                path,
                format!("tensor {name} has rank {rank}"),
            ));
        }
        let mut shape = [1usize; 4];
        for slot in shape[4 - rank..].iter_mut() {
            *slot = r.u32()? as usize;
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(path, "tensor too large"))?;
        let data = r.f32s(n)?;
        if tensors
            .insert(name.clone(), Tensor::from_vec(shape, data)?)
            .is_some()
        {
            return Err(Error::format(path, format!("duplicate tensor {name}")));
        }
    }
    r.finish()?;
    NetworkParams::from_tensors(cfg, tensors).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_basis(path: impl AsRef<Path>, basis: &PcaBasis) -> Result<()> {
    write_bytes(path.as_ref(), &encode_basis(basis)?)
}

pub fn read_basis(path: impl AsRef<Path>) -> Result<PcaBasis> {
    let path = path.as_ref();
    decode_basis(&read_bytes(path)?, path)
}

pub fn write_model(path: impl AsRef<Path>, params: &NetworkParams) -> Result<()> {
    write_bytes(path.as_ref(), &encode_model(params))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    decode_model(&read_bytes(path)?, path)
}
