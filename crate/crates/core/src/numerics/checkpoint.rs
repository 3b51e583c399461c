//! Binary checkpoint codec.
//!
//! Layout: the 8-byte magic `NGVCKPT1`, then one record per tensor until end
//! of input. A record is the name length (`u32` LE), the UTF-8 name bytes, the
//! rank (`u32` LE), one `u64` LE per extent, and the values as `f64` LE.

use std::path::Path;

use crate::error::{Error, Result};

use super::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"NGVCKPT1";

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.num_values() * 8 + params.len() * 32);
    out.extend_from_slice(MAGIC);
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.rank() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                detail: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint. Every entry comes back trainable.
pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            detail: "bad magic, expected NGVCKPT1".into(),
        });
    }
    let mut params = ParamSet::new();
    while r.pos < bytes.len() {
        let name_at = r.pos;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?).map_err(|e| Error::Parse {
            offset: name_at + 4,
            detail: format!("name is not utf-8: {e}"),
        })?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Parse {
                offset: r.pos,
                detail: format!("extent product overflows for {shape:?}"),
            })?;
        let raw = r.take(count.saturating_mul(8), "values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, values).map_err(|e| Error::Parse {
            offset: name_at,
            detail: e.to_string(),
        })?;
        params.insert(name, tensor).map_err(|e| Error::Parse {
            offset: name_at,
            detail: e.to_string(),
        })?;
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert(
            "enc.0.weight",
            Tensor::new(vec![2, 1, 1, 1], vec![1.5, -0.0]).unwrap(),
        )
        .unwrap();
        ps.insert("b", Tensor::new(vec![1], vec![f64::MIN_POSITIVE]).unwrap())
            .unwrap();
        ps
    }

    #[test]
    fn layout_is_stable() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..8], b"NGVCKPT1");
        assert_eq!(&bytes[8..12], &12u32.to_le_bytes());
        assert_eq!(&bytes[12..24], b"enc.0.weight");
        assert_eq!(&bytes[24..28], &4u32.to_le_bytes());
        assert_eq!(
            bytes.len(),
            8 + (4 + 12 + 4 + 32 + 16) + (4 + 1 + 4 + 8 + 8)
        );
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ps = sample();
        let back = decode(&encode(&ps)).unwrap();
        assert!(ps.same_values(&back));
        assert_eq!(encode(&back), encode(&ps));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode(&sample());
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert!(offset > 8),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            decode(b"NGVCKPT0"),
            Err(Error::Parse { offset: 0, .. })
        ));
    }
}
