use std::path::Path;

use serde::{Deserialize, Serialize};

use super::check_ids;
use crate::error::{format_err, invalid, Result};
use crate::io::binfmt::{ByteReader, ByteWriter};
use crate::model::BinaryHash;

pub(crate) const MAGIC: &[u8; 8] = b"ARIAHSH1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashHit {
    pub id: u64,
    pub distance: u32,
}

/// Packed sign hashes searched by popcount.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashIndex {
    bits: usize,
    ids: Vec<u64>,
    words: Vec<u64>,
}

impl HashIndex {
    fn words_per_hash(bits: usize) -> usize {
        bits.div_ceil(64)
    }

    pub fn build(ids: Vec<u64>, hashes: &[BinaryHash]) -> Result<Self> {
        check_ids(&ids)?;
        if ids.len() != hashes.len() {
            return Err(invalid!("{} ids for {} hashes", ids.len(), hashes.len()));
        }
        let bits = hashes.first().map_or(0, BinaryHash::len);
        if bits == 0 || hashes.iter().any(|h| h.len() != bits) {
            return Err(invalid!("hashes must share one nonzero length"));
        }
        let words = hashes.iter().flat_map(BinaryHash::words).collect();
        Ok(Self { bits, ids, words })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn search(&self, query: &BinaryHash, k: usize) -> Result<Vec<HashHit>> {
        if query.len() != self.bits {
            return Err(invalid!("query hash has {} bits, index {}", query.len(), self.bits));
        }
        if k > self.len() {
            return Err(invalid!("k={k} exceeds index size {}", self.len()));
        }
        let q = query.words();
        let w = Self::words_per_hash(self.bits);
        let mut hits: Vec<HashHit> = self
            .ids
            .iter()
            .zip(self.words.chunks_exact(w))
            .map(|(&id, h)| HashHit {
                id,
                distance: h.iter().zip(&q).map(|(a, b)| (a ^ b).count_ones()).sum(),
            })
            .collect();
        hits.sort_unstable_by_key(|h| (h.distance, h.id));
        hits.truncate(k);
        Ok(hits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(MAGIC);
        w.usize(self.bits);
        w.usize(self.ids.len());
        for &id in &self.ids {
            w.u64(id);
        }
        for &word in &self.words {
            w.u64(word);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, MAGIC)?;
        let bits = r.usize()?;
        let n = r.usize()?;
        if bits == 0 {
            return Err(format_err!("zero-length hashes"));
        }
        let ids = r.u64s(n)?;
        let per = Self::words_per_hash(bits);
        let words = r.u64s(n.checked_mul(per).ok_or_else(|| format_err!("size overflow"))?)?;
        r.finish()?;
        check_ids(&ids).map_err(|e| format_err!("{e}"))?;
        if bits % 64 != 0 {
            let mask = !((1u64 << (bits % 64)) - 1);
            if words.chunks_exact(per).any(|h| h[per - 1] & mask != 0) {
                return Err(format_err!("hash words carry bits beyond length {bits}"));
            }
        }
        Ok(Self { bits, ids, words })
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

    fn h(bits: &[u8]) -> BinaryHash {
        BinaryHash {
            bits: bits.iter().map(|&b| b == 1).collect(),
        }
    }

    #[test]
    fn self_and_complement() {
        let a = h(&[1, 0, 1, 1, 0]);
        let c = h(&[0, 1, 0, 0, 1]);
        let idx = HashIndex::build(vec![5, 6], &[a.clone(), c.clone()]).unwrap();
        let hits = idx.search(&a, 2).unwrap();
        assert_eq!(hits[0], HashHit { id: 5, distance: 0 });
        assert_eq!(hits[1], HashHit { id: 6, distance: 5 });
    }

    #[test]
    fn round_trip_and_padding_check() {
        let idx = HashIndex::build(vec![1, 2], &[h(&[1, 1, 0]), h(&[0, 0, 1])]).unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(HashIndex::from_bytes(&bytes).unwrap(), idx);
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] |= 0x80;
        assert!(HashIndex::from_bytes(&bad).is_err());
    }
}
