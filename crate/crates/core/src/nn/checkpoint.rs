//! Binary checkpoint format for a [`ParamSet`].
//!
//! All integers and reals are little-endian:
//!
//! ```text
//! magic        8 bytes   "EMIXCKPT"
//! version      u32       1
//! step_count   u64
//! n_entries    u32
//! per entry, in ParamSet order:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   ndim       u32
//!   dims       ndim × u64
//!   data       prod(dims) × f64, row-major
//! ```
//!
//! Gradients and optimizer state are not stored.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::param::ParamSet;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EMIXCKPT";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &ParamSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&params.step_count.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.ndim() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamSet> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let step_count = read_u64(&mut r)?;
    let n = read_u32(&mut r)?;
    let mut params = ParamSet::new();
    params.step_count = step_count;
    for _ in 0..n {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let dims = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let data = (0..count)
            .map(|_| read_array::<8, _>(&mut r).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let value = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        params.add(name, value)?;
    }
    Ok(params)
}

pub fn save(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_params(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    let file = std::fs::File::open(path)?;
    read_params(std::io::BufReader::new(file))
}

/// Loads values from a checkpoint into an existing set with the same layout.
pub fn load_into(path: impl AsRef<Path>, params: &mut ParamSet) -> Result<()> {
    let loaded = load(path)?;
    params.copy_values_from(&loaded)?;
    params.step_count = loaded.step_count;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_stable() {
        let mut ps = ParamSet::new();
        ps.add("b", ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, -2.0]).unwrap())
            .unwrap();
        ps.step_count = 7;
        let mut buf = Vec::new();
        write_params(&mut buf, &ps).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"EMIXCKPT");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&7u64.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(b"b");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        assert!(read_params(&b"NOTACKPT"[..]).is_err());
        assert!(read_params(&b"EMIXCK"[..]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..3), 1..4),
                     step in any::<u64>(), fill in -1e6f64..1e6) {
            let mut ps = ParamSet::new();
            for (i, s) in shapes.iter().enumerate() {
                let n: usize = s.iter().product();
                let data = (0..n).map(|k| fill * (k as f64 + 0.5)).collect();
                ps.add(format!("p{i}"), ArrayD::from_shape_vec(IxDyn(s), data).unwrap()).unwrap();
            }
            ps.step_count = step;
            let mut buf = Vec::new();
            write_params(&mut buf, &ps).unwrap();
            let back = read_params(&buf[..]).unwrap();
            prop_assert_eq!(back.step_count, step);
            for (a, b) in ps.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.value, &b.value);
            }
        }
    }
}
