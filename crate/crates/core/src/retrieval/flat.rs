use std::path::Path;

use super::kmeans::sq_dist;
use super::{check_ids, check_rows, top_k, Neighbor};
use crate::error::{format_err, invalid, Result};
use crate::io::binfmt::{ByteReader, ByteWriter};

pub(crate) const MAGIC: &[u8; 8] = b"ARIAFLT1";

/// Exhaustive search by squared Euclidean distance.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f32>,
}

impl FlatIndex {
    /// `vectors` holds one unit-norm row of `dim` values per id.
    pub fn build(ids: Vec<u64>, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        check_ids(&ids)?;
        check_rows(&vectors, dim, ids.len())?;
        Ok(Self { dim, ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim {
            return Err(invalid!("query has dimension {}, index {}", query.len(), self.dim));
        }
        if k > self.len() {
            return Err(invalid!("k={k} exceeds index size {}", self.len()));
        }
        let hits = self
            .ids
            .iter()
            .zip(self.vectors.chunks_exact(self.dim))
            .map(|(&id, v)| Neighbor {
                id,
                distance: sq_dist(query, v),
            })
            .collect();
        Ok(top_k(hits, k))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(MAGIC);
        w.usize(self.dim);
        w.usize(self.ids.len());
        for &id in &self.ids {
            w.u64(id);
        }
        w.f32s(&self.vectors);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, MAGIC)?;
        let dim = r.usize()?;
        let n = r.usize()?;
        let ids = r.u64s(n)?;
        let vectors = r.f32s(n.checked_mul(dim).ok_or_else(|| format_err!("size overflow"))?)?;
        r.finish()?;
        Self::build(ids, vectors, dim).map_err(|e| format_err!("{e}"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows() -> Vec<f32> {
        vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.6, 0.8]
    }

    #[test]
    fn self_query_ranks_first() {
        let idx = FlatIndex::build(vec![10, 11, 12, 13], unit_rows(), 2).unwrap();
        let hits = idx.search(&[0.6, 0.8], 2).unwrap();
        assert_eq!(hits[0].id, 13);
        assert_eq!(hits[0].distance, 0.0);
        let all = idx.search(&[0.0, -1.0], 4).unwrap();
        let mut ids: Vec<u64> = all.iter().map(|h| h.id).collect();
        ids.sort();
        assert_eq!(ids, vec![10, 11, 12, 13]);
        assert!(idx.search(&[1.0, 0.0], 5).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let idx = FlatIndex::build(vec![7, 3], vec![1.0, 0.0, -1.0, 0.0], 2).unwrap();
        let hits = idx.search(&[0.0, 1.0], 2).unwrap();
        assert_eq!(hits[0].id, 3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(FlatIndex::build(vec![1, 1], vec![1.0, 0.0, 0.0, 1.0], 2).is_err());
        assert!(FlatIndex::build(vec![1], vec![2.0, 0.0], 2).is_err());
    }

    #[test]
    fn round_trip() {
        let idx = FlatIndex::build(vec![10, 11, 12, 13], unit_rows(), 2).unwrap();
        let bytes = idx.to_bytes();
        let back = FlatIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        assert!(FlatIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
