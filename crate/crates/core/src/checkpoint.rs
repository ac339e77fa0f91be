//! Named-tensor checkpoint file.
//!
//! Layout: `"GSMCKPT1"`, entry count (u32 LE), then per entry the name
//! length (u32 LE), the UTF-8 name, the rank (u32 LE), the extents (u32 LE)
//! and the row-major f32 LE elements. Entries appear in byte-wise name
//! order, so equal maps always encode to equal bytes.

use crate::binfmt::{put_tensor, put_u32, Reader};
use crate::error::{GsmError, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GSMCKPT1";

pub type NamedTensors = BTreeMap<String, Tensor<f32>>;

pub fn encode_checkpoint(entries: &NamedTensors) -> Result<Vec<u8>> {
    let mut buf = CHECKPOINT_MAGIC.to_vec();
    put_u32(&mut buf, entries.len())?;
    for (name, t) in entries {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_tensor(&mut buf, t)?;
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NamedTensors> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let count = r.u32("entry count")?;
    let mut out = NamedTensors::new();
    for _ in 0..count {
        let at = r.offset();
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| GsmError::format(at, "entry name is not UTF-8"))?
            .to_owned();
        let t = r.tensor()?;
        if out.insert(name.clone(), t).is_some() {
            return Err(GsmError::format(at, format!("duplicate entry '{name}'")));
        }
    }
    r.finish()?;
    Ok(out)
}

pub fn write_checkpoint(path: &Path, entries: &NamedTensors) -> Result<()> {
    std::fs::write(path, encode_checkpoint(entries)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<NamedTensors> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        let mut m = NamedTensors::new();
        m.insert("b".into(), Tensor::new(&[2, 1], vec![1.5, -0.0]).unwrap());
        m.insert(
            "a.weight".into(),
            Tensor::new(&[3], vec![f32::MIN_POSITIVE, 2.0, 1e-30]).unwrap(),
        );
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        let names: Vec<_> = back.keys().cloned().collect();
        assert_eq!(names, vec!["a.weight", "b"]);
        assert_eq!(back["b"].data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn corruption_is_located() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(GsmError::Format { offset: 0, .. })
        ));
        let bytes = encode_checkpoint(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 2];
        assert!(matches!(
            decode_checkpoint(cut),
            Err(GsmError::Format { .. })
        ));
    }
}
