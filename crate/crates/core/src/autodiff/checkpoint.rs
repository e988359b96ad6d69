//! Binary checkpoint format.
//!
//! ```text
//! magic "SPCK" | u32 version | u32 tensor count
//! per tensor: u32 name length | name bytes | u32 rank | u32 dims[rank] | f32 values
//! 32-byte SHA-256 of everything above
//! ```
//! All integers and floats are little endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AutodiffError, ParamStore, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

/// Serializes every parameter value of `store` (grads are not saved).
pub fn write_checkpoint<T: Scalar, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<(), AutodiffError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.params() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for x in p.value.data() {
            buf.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    w.write_all(&buf)?;
    w.write_all(&digest)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint, verifying the trailing checksum.
pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<ParamStore<T>, AutodiffError> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    if all.len() < 12 + 32 {
        return Err(bad("truncated"));
    }
    let (body, digest) = all.split_at(all.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = c.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(n)?).map_err(|_| bad("name is not UTF-8"))?.to_string();
        let rank = c.u32()? as usize;
        let dims = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims[..] {
            [] => (1, 1),
            [n] => (1, n),
            [r, c] => (r, c),
            _ => return Err(bad(format!("tensor {name} has rank {rank}"))),
        };
        let bytes = c.take(rows.checked_mul(cols).and_then(|k| k.checked_mul(4)).ok_or_else(|| bad("size overflow"))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().unwrap())).unwrap())
            .collect();
        if store.find(&name).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        store.add(name, Tensor::new(rows, cols, data));
    }
    if c.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(store)
}

pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<(), AutodiffError> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ParamStore<T>, AutodiffError> {
    read_checkpoint(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        s.add("enc.w", Tensor::uniform(3, 7, 1.0, &mut rng));
        s.add("enc.b", Tensor::uniform(1, 7, 1.0, &mut rng));
        s.add("ünï", Tensor::row(vec![f32::MIN_POSITIVE, -0.0, 1e-40]));
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let mut buf = Vec::new();
        write_checkpoint(&s, &mut buf).unwrap();
        let back: ParamStore<f32> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.len(), s.len());
        for (a, b) in s.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corruption_is_detected() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[20] ^= 1;
        assert!(matches!(read_checkpoint::<f32, _>(&bad[..]), Err(AutodiffError::Checkpoint(m)) if m.contains("checksum")));
        assert!(read_checkpoint::<f32, _>(&buf[..buf.len() - 1]).is_err());
        assert!(read_checkpoint::<f32, _>(&b"SPCK"[..]).is_err());
    }
}
