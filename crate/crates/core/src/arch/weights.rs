//! Binary weight file.
//!
//! ```text
//! "UNET1"              5 bytes
//! version              u32 LE (currently 1)
//! width                u32 LE
//! num_classes          u32 LE
//! array count          u32 LE
//! per array:  rank u8, dims u32 LE × rank, values f32 LE × Π dims
//! CRC32                u32 LE over every preceding byte
//! ```
//!
//! Arrays follow [`UnionNet::state_arrays`] order, so batch-norm running
//! statistics are included.

use std::path::Path;

use super::net::{NetConfig, UnionNet};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 5] = b"UNET1";
pub const WEIGHT_VERSION: u32 = 1;

pub fn encode_weights(net: &UnionNet) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_weights(&mut w, net);
    w.buf
}

pub(crate) fn write_weights(w: &mut ByteWriter, net: &UnionNet) {
    let start = w.buf.len();
    let cfg = net.config();
    w.bytes(WEIGHT_MAGIC);
    w.u32(WEIGHT_VERSION);
    w.u32(cfg.width as u32);
    w.u32(cfg.num_classes as u32);
    let arrays = net.state_arrays();
    w.u32(arrays.len() as u32);
    for a in &arrays {
        w.u8(a.dims.len() as u8);
        for &d in a.dims {
            w.u32(d as u32);
        }
        w.f32s(a.values);
    }
    let crc = crc32fast::hash(&w.buf[start..]);
    w.u32(crc);
}

pub(crate) fn encoded_len(net: &UnionNet) -> usize {
    let header = WEIGHT_MAGIC.len() + 4 * 4;
    let body: usize = net
        .state_arrays()
        .iter()
        .map(|a| 1 + 4 * a.dims.len() + 4 * a.values.len())
        .sum();
    header + body + 4
}

struct RawArray {
    offset: usize,
    dims: Vec<usize>,
    values: Vec<f32>,
}

struct RawWeights {
    width: usize,
    num_classes: usize,
    arrays: Vec<RawArray>,
}

fn read_raw(r: &mut ByteReader<'_>) -> Result<RawWeights> {
    let start = r.pos();
    let magic = r.take(WEIGHT_MAGIC.len(), "magic")?;
    if magic != WEIGHT_MAGIC {
        return Err(Error::Parse {
            offset: start,
            msg: format!(
                "bad magic {:?}, expected \"UNET1\"",
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let at = r.pos();
    let version = r.u32("version")?;
    if version != WEIGHT_VERSION {
        return Err(Error::Parse {
            offset: at,
            msg: format!("unsupported weight file version {version}"),
        });
    }
    let width = r.u32("width")? as usize;
    let num_classes = r.u32("num_classes")? as usize;
    let count = r.u32("array count")? as usize;
    let mut arrays = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let offset = r.pos();
        let rank = r.u8("array rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("array dims")? as usize);
        }
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(len) = len else {
            return Err(Error::Parse {
                offset,
                msg: format!("array {i} dims {dims:?} overflow"),
            });
        };
        let values = r.f32s(len, "array values")?;
        arrays.push(RawArray {
            offset,
            dims,
            values,
        });
    }
    r.check_crc(start)?;
    Ok(RawWeights {
        width,
        num_classes,
        arrays,
    })
}

fn install(net: &mut UnionNet, raw: RawWeights, header_offset: usize) -> Result<()> {
    let cfg = net.config();
    if raw.width != cfg.width || raw.num_classes != cfg.num_classes {
        return Err(Error::Parse {
            offset: header_offset,
            msg: format!(
                "shape-table mismatch: file has width {} / {} classes, model has width {} / {} classes",
                raw.width, raw.num_classes, cfg.width, cfg.num_classes
            ),
        });
    }
    let expected: Vec<(String, Vec<usize>)> = net
        .state_arrays()
        .iter()
        .map(|a| (a.name.to_string(), a.dims.to_vec()))
        .collect();
    if raw.arrays.len() != expected.len() {
        return Err(Error::Parse {
            offset: header_offset,
            msg: format!(
                "shape-table mismatch: file has {} arrays, model has {}",
                raw.arrays.len(),
                expected.len()
            ),
        });
    }
    for (a, (name, dims)) in raw.arrays.iter().zip(&expected) {
        if &a.dims != dims {
            return Err(Error::Parse {
                offset: a.offset,
                msg: format!(
                    "shape-table mismatch for {name}: file {:?}, model {:?}",
                    a.dims, dims
                ),
            });
        }
    }
    for (dst, a) in net.state_arrays_mut().into_iter().zip(raw.arrays) {
        *dst = a.values;
    }
    Ok(())
}

/// Decodes a weight block at the start of `bytes`, returning the model and the
/// number of bytes consumed.
pub fn decode_weights(bytes: &[u8]) -> Result<(UnionNet, usize)> {
    let mut r = ByteReader::new(bytes);
    let raw = read_raw(&mut r)?;
    let in_channels = match raw.arrays.first() {
        Some(a) if a.dims.len() == 4 => a.dims[1],
        _ => {
            return Err(Error::Parse {
                offset: WEIGHT_MAGIC.len() + 16,
                msg: "first array is not a conv kernel".into(),
            })
        }
    };
    let cfg = NetConfig {
        in_channels,
        width: raw.width,
        num_classes: raw.num_classes,
    };
    cfg.validate().map_err(|e| Error::Parse {
        offset: WEIGHT_MAGIC.len() + 4,
        msg: e.to_string(),
    })?;
    let mut net = UnionNet::zeros(cfg)?;
    install(&mut net, raw, WEIGHT_MAGIC.len() + 4)?;
    Ok((net, r.pos()))
}

/// Decodes into an existing model, requiring an identical shape table.
pub fn decode_weights_into(net: &mut UnionNet, bytes: &[u8]) -> Result<usize> {
    let mut r = ByteReader::new(bytes);
    let raw = read_raw(&mut r)?;
    // decode fully before touching the model so failures leave it intact
    let mut staged = net.clone();
    install(&mut staged, raw, WEIGHT_MAGIC.len() + 4)?;
    for (dst, src) in net
        .state_arrays_mut()
        .into_iter()
        .zip(staged.state_arrays())
    {
        dst.copy_from_slice(src.values);
    }
    Ok(r.pos())
}

pub fn save_weights(net: &UnionNet, path: impl AsRef<Path>) -> Result<()> {
    crate::codec::write_atomic(path.as_ref(), &encode_weights(net))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<UnionNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_weights(&bytes)?.0)
}

pub fn load_weights_into(net: &mut UnionNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights_into(net, &bytes).map(|_| ())
}
