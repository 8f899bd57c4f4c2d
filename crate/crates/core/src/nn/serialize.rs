//! Versioned tensor container.
//!
//! ```text
//! magic      8 bytes   "RSTENSOR"
//! version    u32 LE    currently 1
//! meta_len   u32 LE
//! meta       meta_len bytes of UTF-8 JSON
//! count      u32 LE    number of tensors
//! count × {
//!   name_len u32 LE, name (UTF-8),
//!   rows u32 LE, cols u32 LE,
//!   rows·cols × f32 LE, row-major
//! }
//! ```

use super::tensor::{ParamSet, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RSTENSOR";
pub const VERSION: u32 = 1;

pub fn encode(meta: &serde_json::Value, tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Bundle("truncated tensor container".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor<f32>)>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Bundle("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Bundle(format!("unsupported container version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta: serde_json::Value = serde_json::from_slice(r.take(meta_len)?)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Bundle("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != bytes.len() {
        return Err(Error::Bundle("trailing bytes after tensors".into()));
    }
    Ok((meta, tensors))
}

/// Flattens a parameter set into prefixed `f32` tensors.
pub fn export_params<T: Real>(prefix: &str, params: &ParamSet<T>) -> Vec<(String, Tensor<f32>)> {
    params
        .iter()
        .map(|(n, t)| (format!("{prefix}/{n}"), t.cast()))
        .collect()
}

/// Overwrites every tensor of `params` from the prefixed entries of `tensors`.
pub fn import_params<T: Real>(
    prefix: &str,
    params: &mut ParamSet<T>,
    tensors: &[(String, Tensor<f32>)],
) -> Result<()> {
    let names: Vec<String> = params.names().to_vec();
    for (k, name) in names.iter().enumerate() {
        let key = format!("{prefix}/{name}");
        let src = tensors
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Bundle(format!("missing tensor {key}")))?;
        let dst = &mut params.tensors_mut()[k];
        if (src.rows, src.cols) != (dst.rows, dst.cols) {
            return Err(Error::Bundle(format!(
                "tensor {key} has shape {}x{}, expected {}x{}",
                src.rows, src.cols, dst.rows, dst.cols
            )));
        }
        *dst = src.cast();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn container_roundtrip(
            shapes in proptest::collection::vec((0usize..4, 0usize..5), 0..4),
            seed in any::<u32>(),
        ) {
            let tensors: Vec<(String, Tensor<f32>)> = shapes
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| {
                    let data = (0..r * c).map(|j| (seed as f32) * 0.001 - j as f32).collect();
                    (format!("t{i}"), Tensor::from_vec(r, c, data))
                })
                .collect();
            let meta = serde_json::json!({ "k": seed });
            let bytes = encode(&meta, &tensors).unwrap();
            let (m2, t2) = decode(&bytes).unwrap();
            prop_assert_eq!(m2, meta);
            prop_assert_eq!(t2, tensors);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"nope").is_err());
        let mut bytes = encode(&serde_json::json!({}), &[]).unwrap();
        bytes[8] = 9;
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn little_endian_layout() {
        let t = vec![("w".to_string(), Tensor::from_vec(1, 1, vec![1.0f32]))];
        let bytes = encode(&serde_json::json!(null), &t).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
    }
}
