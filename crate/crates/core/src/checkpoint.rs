//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CNNCKPT1"
//! u32 tensor count
//! per tensor: u16 name length, name bytes, u8 rank, rank × u64 dims, f64 payload
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! The first tensor, `meta.state`, holds `[fingerprint, epoch, seed_hi, seed_lo]`
//! (seed halves are 32-bit so every entry is exact in an `f64`). Parameters
//! follow in update order, then each batch-norm layer's running mean and
//! variance.

use std::path::Path;

use crate::config::fingerprint;
use crate::error::{Error, Result};
use crate::network::{ArchSpec, Network};
use crate::tensor::Vector;

pub const MAGIC: &[u8; 8] = b"CNNCKPT1";
const META: &str = "meta.state";

/// Counters saved alongside the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct TrainingState {
    /// Epochs completed.
    pub epoch: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

fn bn_prefix(weight_name: &str) -> &str {
    weight_name.strip_suffix(".w").unwrap_or(weight_name)
}

/// Every tensor a checkpoint of `net` holds, in file order.
pub fn tensors(net: &Network, state: TrainingState) -> Vec<NamedTensor> {
    let meta = vec![
        f64::from(fingerprint(net.arch())),
        state.epoch as f64,
        (state.seed >> 32) as f64,
        (state.seed & 0xFFFF_FFFF) as f64,
    ];
    let mut out = vec![NamedTensor {
        name: META.into(),
        dims: vec![4],
        data: meta,
    }];
    out.extend(net.params().into_iter().map(|p| NamedTensor {
        name: p.name.clone(),
        dims: p.dims.clone(),
        data: p.value.clone(),
    }));
    for bn in net.batch_norms() {
        let prefix = bn_prefix(&bn.weight.name);
        for (suffix, v) in [("running_mean", &bn.running_mean), ("running_var", &bn.running_var)] {
            out.push(NamedTensor {
                name: format!("{prefix}.{suffix}"),
                dims: vec![v.len()],
                data: v.as_slice().to_vec(),
            });
        }
    }
    out
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend((tensors.len() as u32).to_le_bytes());
    for t in tensors {
        b.extend((t.name.len() as u16).to_le_bytes());
        b.extend(t.name.as_bytes());
        b.push(t.dims.len() as u8);
        for &d in &t.dims {
            b.extend((d as u64).to_le_bytes());
        }
        for &v in &t.data {
            b.extend(v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&b);
    b.extend(crc.to_le_bytes());
    b
}

pub fn encode(net: &Network, state: TrainingState) -> Vec<u8> {
    encode_tensors(&tensors(net, state))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::parse(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes at offset {}, file is {} bytes",
                    self.pos,
                    self.bytes.len()
                ),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses and checksums a checkpoint; tensors come back with the byte
/// offset of their record.
pub fn decode(bytes: &[u8]) -> Result<Vec<(u64, NamedTensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, not a checkpoint"));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = r.pos as u64;
        let len = usize::from(r.u16("name length")?);
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::parse(at + 2, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")?;
        let mut dims = Vec::with_capacity(usize::from(rank));
        for _ in 0..rank {
            let d = r.u64("dims")?;
            dims.push(usize::try_from(d).map_err(|_| Error::parse(r.pos as u64 - 8, format!("dimension {d} too large")))?);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::parse(at, format!("{name}: dims {dims:?} overflow")))?;
        let payload = r.take(len, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((at, NamedTensor { name, dims, data }));
    }
    let body = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::parse(
            r.pos as u64,
            format!("{} trailing bytes after checksum", bytes.len() - r.pos),
        ));
    }
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(out)
}

/// Rebuilds a network of architecture `arch` from checkpoint bytes.
pub fn restore(bytes: &[u8], arch: &ArchSpec) -> Result<(Network, TrainingState)> {
    let decoded = decode(bytes)?;
    let mut net = Network::build(arch.clone(), 0)?;
    let expected = tensors(&net, TrainingState::default());
    if decoded.len() != expected.len() {
        return Err(Error::parse(
            8,
            format!("checkpoint holds {} tensors, architecture needs {}", decoded.len(), expected.len()),
        ));
    }
    for ((at, got), want) in decoded.iter().zip(&expected) {
        if got.name != want.name || got.dims != want.dims {
            return Err(Error::parse(
                *at,
                format!("found {} {:?}, expected {} {:?}", got.name, got.dims, want.name, want.dims),
            ));
        }
    }
    let meta = &decoded[0].1.data;
    let found = meta[0] as u32;
    let wanted = fingerprint(arch);
    if found != wanted {
        return Err(Error::Version {
            expected: wanted,
            found,
        });
    }
    let state = TrainingState {
        epoch: meta[1] as u64,
        seed: ((meta[2] as u64) << 32) | meta[3] as u64,
    };
    let mut rest = decoded.into_iter().skip(1).map(|(_, t)| t.data);
    for p in net.params_mut() {
        p.value = rest.next().expect("count checked");
    }
    for bn in net.batch_norms_mut() {
        bn.running_mean = Vector::new(rest.next().expect("count checked"));
        bn.running_var = Vector::new(rest.next().expect("count checked"));
    }
    Ok((net, state))
}

pub fn save(path: impl AsRef<Path>, net: &Network, state: TrainingState) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net, state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>, arch: &ArchSpec) -> Result<(Network, TrainingState)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(&bytes, arch)
}
