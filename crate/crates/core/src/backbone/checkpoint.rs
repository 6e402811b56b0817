//! Binary parameter snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "PCLUCKPT"
//! version  u32      1
//! count    u32      number of parameters
//! count × {
//!   name_len u32, name (UTF-8),
//!   rank u32, extents u64 × rank,
//!   values f64 × product(extents)
//! }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PCLUCKPT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads every named tensor in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Copies checkpoint values into `store` after checking that names and
/// shapes match the configured architecture exactly.
pub fn restore(store: &mut ParamStore, entries: Vec<(String, Tensor)>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} parameters, architecture expects {}",
            entries.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, (name, _)) in ids.iter().zip(&entries) {
        if store.name(*id) != name {
            return Err(Error::Config(format!(
                "checkpoint parameter {name:?} where {:?} was expected",
                store.name(*id)
            )));
        }
    }
    for (id, (name, t)) in ids.into_iter().zip(entries) {
        store
            .set(id, t)
            .map_err(|e| Error::Config(format!("parameter {name:?}: {e}")))?;
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), store)
}

pub fn load_checkpoint(path: impl AsRef<Path>, store: &mut ParamStore) -> Result<()> {
    let entries = read_checkpoint(BufReader::new(File::open(path)?))?;
    restore(store, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new([2, 3], vec![1.0, -2.5, 3.25, 0.1, 1e-300, -0.0]).unwrap());
        s.add("b.bias", Tensor::scalar(std::f64::consts::PI));
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        let mut fresh = ParamStore::new();
        fresh.add("a", Tensor::zeros([2, 3]));
        fresh.add("b.bias", Tensor::scalar(0.0));
        restore(&mut fresh, read_checkpoint(&buf[..]).unwrap()).unwrap();
        for ((_, _, x), (_, _, y)) in s.iter().zip(fresh.iter()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn rejects_mismatched_architecture() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store()).unwrap();

        let mut renamed = ParamStore::new();
        renamed.add("x", Tensor::zeros([2, 3]));
        renamed.add("b.bias", Tensor::scalar(0.0));
        assert!(matches!(restore(&mut renamed, read_checkpoint(&buf[..]).unwrap()), Err(Error::Config(_))));

        let mut reshaped = ParamStore::new();
        reshaped.add("a", Tensor::zeros([3, 2]));
        reshaped.add("b.bias", Tensor::scalar(0.0));
        assert!(matches!(restore(&mut reshaped, read_checkpoint(&buf[..]).unwrap()), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }
}
