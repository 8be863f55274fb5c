//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes  "AIFT"
//! version      u16
//! patch_size   u32
//! seed         u64
//! n_widths     u32, then n_widths x u32 channel widths
//! n_tensors    u32
//! per tensor:  name_len u32, name (UTF-8), rank u32, rank x u32 extents,
//!              product(extents) x f32 values
//! ```

use std::fs;
use std::path::Path;

use crate::error::{AiftError, Result};
use crate::model::{init_params_with, AiftParams, ModelMeta};

pub const MAGIC: &[u8; 4] = b"AIFT";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode(params: &AiftParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.meta.patch_size as u32).to_le_bytes());
    out.extend_from_slice(&params.meta.seed.to_le_bytes());
    out.extend_from_slice(&(params.meta.widths.len() as u32).to_le_bytes());
    for w in params.meta.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    let tensors = params.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            AiftError::Integrity(format!("truncated checkpoint at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint, checking that every tensor matches the architecture
/// implied by its metadata.
pub fn decode(bytes: &[u8]) -> Result<AiftParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(AiftError::Integrity("bad magic, not an AIFT checkpoint".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(AiftError::Integrity(format!("unsupported checkpoint version {version}")));
    }
    let patch_size = r.u32()? as usize;
    let seed = r.u64()?;
    let n_widths = r.u32()? as usize;
    if n_widths != 4 {
        return Err(AiftError::Integrity(format!("expected 4 channel widths, found {n_widths}")));
    }
    let mut widths = [0usize; 4];
    for w in &mut widths {
        *w = r.u32()? as usize;
    }
    let meta = ModelMeta { patch_size, seed, widths };
    let mut params = init_params_with(meta).map_err(|e| AiftError::Integrity(format!("bad metadata: {e}")))?;

    let expected: Vec<(String, Vec<usize>)> =
        params.named_tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(AiftError::Integrity(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut slots = params.tensors_mut();
    for ((name, shape), slot) in expected.iter().zip(slots.iter_mut()) {
        let len = r.u32()? as usize;
        let got =
            std::str::from_utf8(r.take(len)?).map_err(|_| AiftError::Integrity("tensor name is not UTF-8".into()))?;
        if got != name {
            return Err(AiftError::Integrity(format!("expected tensor {name}, found {got}")));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(AiftError::Integrity(format!("{name}: shape {dims:?}, expected {shape:?}")));
        }
        let raw = r.take(shape.iter().product::<usize>() * 4)?;
        for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(AiftError::Integrity(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    params.check_integrity()?;
    Ok(params)
}

pub fn save(path: impl AsRef<Path>, params: &AiftParams) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<AiftParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AiftError::input(path, e.to_string()))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> AiftParams {
        init_params_with(ModelMeta { patch_size: 16, seed: 21, widths: [2, 3, 4, 5] }).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_after_f32_rounding() {
        let mut p = params();
        let bytes = encode(&p);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
        p.round_to_f32();
        assert_eq!(back, p);
    }

    #[test]
    fn corruption_is_integrity_error() {
        let bytes = encode(&params());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(AiftError::Integrity(_))));
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(AiftError::Integrity(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(AiftError::Integrity(_))));
        let mut nan = bytes.clone();
        let at = nan.len() - 4;
        nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&nan), Err(AiftError::Integrity(_))));
        let mut size = bytes;
        size[6..10].copy_from_slice(&24u32.to_le_bytes());
        assert!(matches!(decode(&size), Err(AiftError::Integrity(_))));
    }
}
