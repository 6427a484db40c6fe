//! Exact and approximate nearest-neighbour search over fingerprints, and
//! Hamming search over sign hashes.

mod flat;
mod hash;
mod ivfpq;
pub mod kmeans;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use flat::FlatIndex;
pub use hash::{HashHit, HashIndex};
pub use ivfpq::{IvfPqIndex, IvfPqParams};

use crate::error::{format_err, invalid, Result};

/// One search result; lower `distance` ranks first, ties go to the smaller id.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

/// Keeps the `k` best candidates in rank order.
pub(crate) fn top_k(mut hits: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    if hits.len() > k && k > 0 {
        hits.select_nth_unstable_by(k - 1, rank_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(rank_order);
    hits.truncate(k);
    hits
}

pub(crate) fn check_ids(ids: &[u64]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id) {
            return Err(invalid!("duplicate id {id}"));
        }
    }
    Ok(())
}

pub(crate) fn check_rows(vectors: &[f32], dim: usize, count: usize) -> Result<()> {
    if dim == 0 || vectors.len() != dim * count {
        return Err(invalid!("expected {count} vectors of dimension {dim}, got {} values", vectors.len()));
    }
    for (i, row) in vectors.chunks_exact(dim).enumerate() {
        let n: f64 = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-4 {
            return Err(invalid!("vector {i} has norm {n}, expected unit norm"));
        }
    }
    Ok(())
}

/// A vector index loaded from disk of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorIndex {
    Flat(FlatIndex),
    IvfPq(IvfPqIndex),
}

impl VectorIndex {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes.get(..8) {
            Some(m) if m == flat::MAGIC => Ok(Self::Flat(FlatIndex::from_bytes(bytes)?)),
            Some(m) if m == ivfpq::MAGIC => Ok(Self::IvfPq(IvfPqIndex::from_bytes(bytes)?)),
            _ => Err(format_err!("not a vector index file")),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Flat(i) => i.len(),
            Self::IvfPq(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Flat(i) => i.dim(),
            Self::IvfPq(i) => i.dim(),
        }
    }

    /// Top-`k` search; `nprobe` applies to the inverted-file index only and
    /// is clamped to its list count.
    pub fn search(&self, query: &[f32], k: usize, nprobe: usize) -> Result<Vec<Neighbor>> {
        match self {
            Self::Flat(i) => i.search(query, k.min(i.len())),
            Self::IvfPq(i) => i.search(query, k.min(i.len()), nprobe.clamp(1, i.nlist())),
        }
    }

    pub fn describe(&self) -> IndexDescription {
        match self {
            Self::Flat(i) => IndexDescription {
                kind: "flat".into(),
                size: i.len(),
                dim: i.dim(),
                nlist: None,
                m: None,
                nbits: None,
            },
            Self::IvfPq(i) => IndexDescription {
                kind: "ivfpq".into(),
                size: i.len(),
                dim: i.dim(),
                nlist: Some(i.nlist()),
                m: Some(i.params().m),
                nbits: Some(i.params().nbits),
            },
        }
    }
}

/// Index configuration recorded in evaluation reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexDescription {
    pub kind: String,
    pub size: usize,
    pub dim: usize,
    pub nlist: Option<usize>,
    pub m: Option<usize>,
    pub nbits: Option<u32>,
}
