//! Dense embedding tables keyed by string id, shared by image-prefix
//! conditioning and zero-shot classification.
//!
//! Binary format (little-endian): magic "NLXE", version u16, dtype u8
//! (0 = f32), dim u32, count u64, then count*dim f32 values row-major. A
//! companion index file lists one id per line; line i names row i.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::num::Scalar;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"NLXE";
pub const EMBEDDING_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic {0:?} (expected NLXE)")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("unsupported dtype {0}")]
    BadDtype(u8),
    #[error("row {row} ({id:?}) contains a non-finite value")]
    NonFinite { row: usize, id: String },
    #[error("index file has {ids} ids but table has {rows} rows")]
    IndexMismatch { ids: usize, rows: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("vector for {id:?} has dim {got}, table dim is {want}")]
    DimMismatch { id: String, got: usize, want: usize },
    #[error("empty table")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered id -> vector table with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<F> {
    dim: usize,
    ids: Vec<String>,
    data: Vec<F>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> EmbeddingTable<F> {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[F]) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                id,
                got: vector.len(),
                want: self.dim,
            });
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(EmbeddingError::NonFinite {
                row: self.ids.len(),
                id,
            });
        }
        if self.index.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[F]> {
        self.index.get(id).map(|&row| self.row(row))
    }

    pub fn row(&self, row: usize) -> &[F] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[F])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Write the binary table and its companion index file.
    pub fn save(
        &self,
        table_path: impl AsRef<Path>,
        index_path: impl AsRef<Path>,
    ) -> Result<(), EmbeddingError> {
        let mut w = BufWriter::new(std::fs::File::create(table_path)?);
        w.write_all(&EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&[DTYPE_F32])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&(v.to_f64_c() as f32).to_le_bytes())?;
        }
        w.flush()?;
        let mut idx = BufWriter::new(std::fs::File::create(index_path)?);
        for id in &self.ids {
            writeln!(idx, "{id}")?;
        }
        idx.flush()?;
        Ok(())
    }

    pub fn load(
        table_path: impl AsRef<Path>,
        index_path: impl AsRef<Path>,
    ) -> Result<Self, EmbeddingError> {
        let mut r = BufReader::new(std::fs::File::open(table_path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != EMBEDDING_MAGIC {
            return Err(EmbeddingError::BadMagic(magic));
        }
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let version = u16::from_le_bytes(u16buf);
        if version != EMBEDDING_VERSION {
            return Err(EmbeddingError::BadVersion(version));
        }
        let mut u8buf = [0u8; 1];
        r.read_exact(&mut u8buf)?;
        if u8buf[0] != DTYPE_F32 {
            return Err(EmbeddingError::BadDtype(u8buf[0]));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;

        let ids: Vec<String> = BufReader::new(std::fs::File::open(index_path)?)
            .lines()
            .collect::<Result<_, _>>()?;
        if ids.len() != count {
            return Err(EmbeddingError::IndexMismatch {
                ids: ids.len(),
                rows: count,
            });
        }
        let mut bytes = vec![0u8; count * dim * 4];
        r.read_exact(&mut bytes)?;
        let mut table = EmbeddingTable::new(dim);
        for (row, id) in ids.into_iter().enumerate() {
            let start = row * dim * 4;
            let vector: Vec<F> = bytes[start..start + dim * 4]
                .chunks_exact(4)
                .map(|c| F::from_f64_c(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
                .collect();
            table.push(id, &vector)?;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn push_get_and_validation() {
        let mut t = EmbeddingTable::<f32>::new(3);
        t.push("a", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.get("a"), Some(&[1.0f32, 2.0, 3.0][..]));
        assert!(matches!(
            t.push("b", &[1.0, 2.0]),
            Err(EmbeddingError::DimMismatch { .. })
        ));
        assert!(matches!(
            t.push("b", &[f32::NAN, 0.0, 0.0]),
            Err(EmbeddingError::NonFinite { .. })
        ));
        assert!(matches!(
            t.push("a", &[0.0, 0.0, 0.0]),
            Err(EmbeddingError::DuplicateId(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempdir().unwrap();
        let table_path = dir.path().join("t.nlxe");
        let index_path = dir.path().join("t.ids");
        let mut t = EmbeddingTable::<f32>::new(2);
        t.push("x", &[0.5, -1.5]).unwrap();
        t.push("y", &[3.25, 0.0]).unwrap();
        t.save(&table_path, &index_path).unwrap();

        let bytes = std::fs::read(&table_path).unwrap();
        assert_eq!(&bytes[..4], b"NLXE");
        assert_eq!(bytes[6], DTYPE_F32);

        let loaded = EmbeddingTable::<f32>::load(&table_path, &index_path).unwrap();
        assert_eq!(loaded, t);

        // loading into f64 widens losslessly
        let wide = EmbeddingTable::<f64>::load(&table_path, &index_path).unwrap();
        assert_eq!(wide.get("x").unwrap(), &[0.5f64, -1.5]);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let table_path = dir.path().join("bad.nlxe");
        let index_path = dir.path().join("bad.ids");
        std::fs::write(&table_path, b"NOPE").unwrap();
        std::fs::write(&index_path, "").unwrap();
        assert!(matches!(
            EmbeddingTable::<f32>::load(&table_path, &index_path),
            Err(EmbeddingError::BadMagic(_))
        ));
    }

    #[test]
    fn index_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let table_path = dir.path().join("t.nlxe");
        let index_path = dir.path().join("t.ids");
        let mut t = EmbeddingTable::<f32>::new(1);
        t.push("a", &[1.0]).unwrap();
        t.save(&table_path, &index_path).unwrap();
        std::fs::write(&index_path, "a\nb\n").unwrap();
        assert!(matches!(
            EmbeddingTable::<f32>::load(&table_path, &index_path),
            Err(EmbeddingError::IndexMismatch { ids: 2, rows: 1 })
        ));
    }
}
