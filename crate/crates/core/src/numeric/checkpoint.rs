//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "HTHGNCKP"            8 bytes
//! version u32 = 1
//! count   u32
//! manifest, per matrix: name_len u32, name (UTF-8), rows u64, cols u64
//! data, per matrix in manifest order: byte_len u64, rows*cols f64 values
//! ```

use std::io::{Read, Write};

use super::Matrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HTHGNCKP";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, entries: &[(String, Matrix)]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, m) in entries {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(m.rows() as u64).to_le_bytes())?;
        out.write_all(&(m.cols() as u64).to_le_bytes())?;
    }
    for (_, m) in entries {
        out.write_all(&((m.len() * 8) as u64).to_le_bytes())?;
        for v in m.data() {
            out.write_all(&v.to_le_bytes())?;
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

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Matrix)>> {
    if &read_array::<8, _>(&mut input)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = read_u64(&mut input)? as usize;
        let cols = read_u64(&mut input)? as usize;
        manifest.push((name, rows, cols));
    }
    let mut out = Vec::with_capacity(count);
    for (name, rows, cols) in manifest {
        let bytes = read_u64(&mut input)? as usize;
        if bytes != rows * cols * 8 {
            return Err(Error::Checkpoint(format!(
                "`{name}`: {bytes} bytes for a {rows}x{cols} matrix"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_array(&mut input)?));
        }
        out.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(
            mats in proptest::collection::vec(
                (0usize..4, 0usize..4, any::<u64>()), 0..6)
        ) {
            let entries: Vec<(String, Matrix)> = mats
                .iter()
                .enumerate()
                .map(|(i, &(r, c, bits))| {
                    let data = (0..r * c)
                        .map(|j| f64::from_bits(bits.rotate_left(j as u32) & !(0x7ffu64 << 52) | (0x3ffu64 << 52)))
                        .collect();
                    (format!("p{i}/\u{2192}"), Matrix::from_vec(r, c, data).unwrap())
                })
                .collect();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &entries).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), entries.len());
            for ((n1, m1), (n2, m2)) in entries.iter().zip(&back) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(m1.shape(), m2.shape());
                let b1: Vec<u64> = m1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = m2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("w".into(), Matrix::scalar(1.0))]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
