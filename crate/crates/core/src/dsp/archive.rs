//! `TEVF` feature archive: magic, format version, record count, then per
//! utterance the id, rows, cols and row-major little-endian f32 values.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::FeatureMatrix;

const MAGIC: &[u8; 4] = b"TEVF";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("not a feature archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    Version(u32),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_archive<'a>(
    path: &Path,
    records: impl ExactSizeIterator<Item = (&'a str, &'a FeatureMatrix)>,
) -> Result<(), ArchiveError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (id, m) in records {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for &v in m.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, FeatureMatrix)>, ArchiveError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ArchiveError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = read_u32(&mut r)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| ArchiveError::Corrupt("utterance id is not UTF-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut bytes = vec![0u8; rows * cols * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((id, FeatureMatrix::new(rows, cols, data, "archive")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.tevf");
        let a = FeatureMatrix::new(2, 3, vec![0.5, -1.0, 2.25, 3.0, 1e-3, -7.5], "a");
        let b = FeatureMatrix::new(1, 3, vec![1.0, 2.0, 3.0], "b");
        write_archive(&p, [("u1", &a), ("u2", &b)].into_iter()).unwrap();
        let back = read_archive(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "u1");
        assert_eq!(back[1].1.as_slice(), b.as_slice());
        for (x, y) in back[0].1.as_slice().iter().zip(a.as_slice()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"TEVMxxxxxxxx").unwrap();
        assert!(matches!(read_archive(&p), Err(ArchiveError::BadMagic)));
    }
}
