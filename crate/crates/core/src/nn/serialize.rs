//! Flat binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      b"NPW1"
//! kind       u8
//! n_dims     u32,  then per entry: name_len u32, name bytes, value u64
//! n_params   u32,  then per entry: name_len u32, name bytes,
//!                  rank u32, dims u64 × rank, payload f64 × numel
//! ```
//!
//! Entries are written in the order given, which for models is parameter
//! declaration order, so identical models serialize to identical bytes.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NPW1";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamFile {
    pub kind: u8,
    pub dims: Vec<(String, u64)>,
    pub params: Vec<(String, Tensor)>,
}

impl ParamFile {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[self.kind])?;
        write_u32(w, self.dims.len())?;
        for (name, value) in &self.dims {
            write_name(w, name)?;
            w.write_all(&value.to_le_bytes())?;
        }
        write_u32(w, self.params.len())?;
        for (name, t) in &self.params {
            write_name(w, name)?;
            write_u32(w, t.rank())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let kind = read_array::<_, 1>(r)?[0];
        let n_dims = read_u32(r)?;
        let mut dims = Vec::with_capacity(n_dims.min(1024));
        for _ in 0..n_dims {
            let name = read_name(r)?;
            dims.push((name, u64::from_le_bytes(read_array(r)?)));
        }
        let n_params = read_u32(r)?;
        let mut params = Vec::with_capacity(n_params.min(1024));
        for _ in 0..n_params {
            let name = read_name(r)?;
            let rank = read_u32(r)?;
            if rank > 8 {
                return Err(Error::Format(format!("parameter {name}: rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| Ok(u64::from_le_bytes(read_array(r)?) as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel
                .filter(|&n| n <= 1 << 28)
                .ok_or_else(|| Error::Format(format!("parameter {name}: shape {shape:?}")))?;
            let data = (0..numel)
                .map(|_| Ok(f64::from_le_bytes(read_array(r)?)))
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("parameter {name}: {e}")))?;
            params.push((name, t));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last parameter".into()));
        }
        Ok(Self { kind, dims, params })
    }

    pub fn dim(&self, name: &str) -> Option<u64> {
        self.dims.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("count {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    write_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(u32::from_le_bytes(read_array(r)?) as usize)
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)?;
    if len > 4096 {
        return Err(Error::Format(format!("name length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Format("name is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamFile {
        ParamFile {
            kind: 2,
            dims: vec![("hidden".into(), 64), ("latent".into(), 3)],
            params: vec![
                ("a.weight".into(), Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0]).unwrap()),
                ("a.bias".into(), Tensor::vector(vec![0.25])),
            ],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"NPW1");
        assert_eq!(bytes[4], 2);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &6u32.to_le_bytes());
        assert_eq!(&bytes[13..19], b"hidden");
        assert_eq!(&bytes[19..27], &64u64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ParamFile::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(ParamFile::read_from(&mut &cut[..]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(ParamFile::read_from(&mut long.as_slice()), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip(kind in 0u8..4, values in proptest::collection::vec(-1e6f64..1e6, 1..40), rows in 1usize..4) {
            let cols = values.len();
            let data: Vec<f64> = (0..rows).flat_map(|_| values.iter().copied()).collect();
            let file = ParamFile {
                kind,
                dims: vec![("d".into(), cols as u64)],
                params: vec![("w".into(), Tensor::new(&[rows, cols], data).unwrap()), ("s".into(), Tensor::scalar(values[0]))],
            };
            let bytes = file.to_bytes();
            let back = ParamFile::read_from(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back, file);
        }
    }
}
