//! Little-endian primitives shared by the sample and checkpoint formats.

use crate::error::{GsmError, Result};
use crate::tensor::Tensor;

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| GsmError::InvalidArgument(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Rank, extents, then row-major f32 elements.
pub(crate) fn put_tensor(buf: &mut Vec<u8>, t: &Tensor<f32>) -> Result<()> {
    put_u32(buf, t.rank())?;
    for &d in t.shape() {
        put_u32(buf, d)?;
    }
    buf.reserve(4 * t.numel());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Cursor that reports the byte offset of every failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(GsmError::format(
                self.offset(),
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.remaining()
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8]) -> Result<()> {
        let at = self.offset();
        let got = self.take(expected.len(), "magic")?;
        if got != expected {
            return Err(GsmError::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub fn tensor(&mut self) -> Result<Tensor<f32>> {
        let at = self.offset();
        let rank = self.u32("rank")?;
        if rank > 8 {
            return Err(GsmError::format(at, format!("rank {rank} exceeds 8")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let ext_at = self.offset();
            let d = self.u32("extent")?;
            if d == 0 {
                return Err(GsmError::format(ext_at, "zero extent"));
            }
            count = count
                .checked_mul(d)
                .filter(|c| c.checked_mul(4).is_some_and(|b| b <= self.remaining()))
                .ok_or_else(|| {
                    GsmError::format(
                        ext_at,
                        "extent product overflows or exceeds the remaining bytes",
                    )
                })?;
            shape.push(d);
        }
        let raw = self.take(4 * count, "elements")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(&shape, data)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(GsmError::format(
                self.offset(),
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}
