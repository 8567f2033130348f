//! Flat binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DADRLCKPT"  version: u32
//! repeated until EOF:
//!   name_len: u32, name: [u8; name_len] (UTF-8)
//!   rank: u32, dims: [u64; rank]
//!   values: [f64; product(dims)]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 9] = b"DADRLCKPT";
pub const VERSION: u32 = 1;

/// An ordered list of named tensors, stored in 64-bit precision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push((name.into(), t.to_f64()));
    }

    /// Adds every tensor of `store` as `prefix.name`.
    pub fn push_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.push(format!("{prefix}.{name}"), t);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every tensor of `store` from `prefix.name` entries.
    pub fn restore_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let key = format!("{prefix}.{}", store.name(id));
            let src = self
                .get(&key)
                .ok_or_else(|| NumError::Checkpoint(format!("missing tensor {key}")))?;
            let dst = store.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(NumError::Checkpoint(format!(
                    "tensor {key}: checkpoint shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = T::lit(s);
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for (name, t) in &self.entries {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u32).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)
            .map_err(|_| NumError::Checkpoint("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(NumError::Checkpoint("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NumError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut entries = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match r.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| NumError::Checkpoint("name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)
                    .map_err(|_| NumError::Checkpoint(format!("truncated values of {name}")))?;
                data.push(f64::from_le_bytes(b));
            }
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| NumError::Checkpoint("truncated integer".into()))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut ck = Checkpoint::new();
        ck.push("w", &Tensor::<f64>::from_f64(vec![1, 2], &[1.5, -2.0]).unwrap());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..9], b"DADRLCKPT");
        assert_eq!(&buf[9..13], &1u32.to_le_bytes());
        assert_eq!(&buf[13..17], &1u32.to_le_bytes()); // name length
        assert_eq!(buf[17], b'w');
        assert_eq!(&buf[18..22], &2u32.to_le_bytes()); // rank
        assert_eq!(&buf[22..30], &1u64.to_le_bytes());
        assert_eq!(&buf[30..38], &2u64.to_le_bytes());
        assert_eq!(&buf[38..46], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 54);
        assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), ck);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::read_from(&b"NOTACKPT\0\x01\0\0\0"[..]).is_err());
        let mut ck = Checkpoint::new();
        ck.push("a", &Tensor::<f64>::ones(vec![3]));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::zeros(vec![2, 2]));
        let mut ck = Checkpoint::new();
        ck.push("net.w", &Tensor::<f64>::ones(vec![4]));
        assert!(ck.restore_store("net", &mut store).is_err());
        let mut ok = Checkpoint::new();
        ok.push("net.w", &Tensor::<f64>::ones(vec![2, 2]));
        ok.restore_store("net", &mut store).unwrap();
        assert_eq!(store.tensors()[0].data(), &[1.0; 4]);
    }
}
