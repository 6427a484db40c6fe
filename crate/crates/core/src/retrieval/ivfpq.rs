use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, nearest, sq_dist};
use super::{check_ids, check_rows, top_k, Neighbor};
use crate::error::{format_err, invalid, Result};
use crate::io::binfmt::{ByteReader, ByteWriter};

pub(crate) const MAGIC: &[u8; 8] = b"ARIAIVF1";

/// Build settings. `nbits = 0` stores vectors uncompressed ("exact" mode).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IvfPqParams {
    pub nlist: usize,
    pub m: usize,
    pub nbits: u32,
    pub seed: u64,
    pub train_iters: usize,
}

impl Default for IvfPqParams {
    fn default() -> Self {
        Self {
            nlist: 16,
            m: 4,
            nbits: 4,
            seed: 0,
            train_iters: 25,
        }
    }
}

impl IvfPqParams {
    pub fn exact(nlist: usize) -> Self {
        Self {
            nlist,
            nbits: 0,
            ..Self::default()
        }
    }

    pub fn is_exact(&self) -> bool {
        self.nbits == 0
    }

    fn ksub(&self) -> usize {
        1 << self.nbits
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.nlist == 0 {
            return Err(invalid!("nlist must be positive"));
        }
        if self.m == 0 || dim % self.m != 0 {
            return Err(invalid!("dimension {dim} is not divisible by m={}", self.m));
        }
        if self.nbits > 8 {
            return Err(invalid!("nbits must be at most 8, got {}", self.nbits));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
struct InvertedList {
    ids: Vec<u64>,
    /// `m` sub-codes per entry, or `dim` raw values per entry in exact mode.
    codes: Vec<u8>,
    vectors: Vec<f32>,
}

/// Inverted file over coarse centroids with product-quantized residuals,
/// ranked by asymmetric distance.
#[derive(Clone, Debug, PartialEq)]
pub struct IvfPqIndex {
    dim: usize,
    params: IvfPqParams,
    coarse: Vec<f32>,
    /// `m × 2^nbits × (dim/m)` codewords.
    codebooks: Vec<f32>,
    lists: Vec<InvertedList>,
}

impl IvfPqIndex {
    pub fn build(ids: Vec<u64>, vectors: Vec<f32>, dim: usize, params: IvfPqParams) -> Result<Self> {
        params.validate(dim)?;
        check_ids(&ids)?;
        check_rows(&vectors, dim, ids.len())?;
        let n = ids.len();
        let need = if params.is_exact() { params.nlist } else { params.nlist.max(params.ksub()) };
        if n < need {
            return Err(invalid!("index training needs at least {need} vectors, got {n}"));
        }
        let coarse = kmeans(&vectors, dim, params.nlist, params.train_iters, params.seed)?;
        let assign: Vec<usize> = vectors.chunks_exact(dim).map(|v| nearest(v, &coarse, dim).0).collect();
        let dsub = dim / params.m;
        let mut codebooks = Vec::new();
        let mut residuals = Vec::new();
        if !params.is_exact() {
            residuals = vectors
                .chunks_exact(dim)
                .zip(&assign)
                .flat_map(|(v, &c)| v.iter().zip(&coarse[c * dim..(c + 1) * dim]).map(|(a, b)| a - b).collect::<Vec<_>>())
                .collect();
            for j in 0..params.m {
                let sub: Vec<f32> = residuals
                    .chunks_exact(dim)
                    .flat_map(|r| r[j * dsub..(j + 1) * dsub].iter().copied())
                    .collect();
                let seed = params.seed.wrapping_add(1 + j as u64);
                codebooks.extend(kmeans(&sub, dsub, params.ksub(), params.train_iters, seed)?);
            }
        }
        let mut lists = vec![InvertedList::default(); params.nlist];
        let ksub = params.ksub();
        for (i, &c) in assign.iter().enumerate() {
            let list = &mut lists[c];
            list.ids.push(ids[i]);
            if params.is_exact() {
                list.vectors.extend_from_slice(&vectors[i * dim..(i + 1) * dim]);
            } else {
                let r = &residuals[i * dim..(i + 1) * dim];
                for j in 0..params.m {
                    let book = &codebooks[j * ksub * dsub..(j + 1) * ksub * dsub];
                    list.codes.push(nearest(&r[j * dsub..(j + 1) * dsub], book, dsub).0 as u8);
                }
            }
        }
        Ok(Self {
            dim,
            params,
            coarse,
            codebooks,
            lists,
        })
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(|l| l.ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nlist(&self) -> usize {
        self.params.nlist
    }

    pub fn params(&self) -> &IvfPqParams {
        &self.params
    }

    /// Ids stored in each inverted list.
    pub fn list_ids(&self) -> Vec<&[u64]> {
        self.lists.iter().map(|l| l.ids.as_slice()).collect()
    }

    /// Lists ordered by coarse distance to `query`, ties to the lower index.
    fn probe_order(&self, query: &[f32]) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .coarse
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(c, row)| (sq_dist(query, row), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, c)| c).collect()
    }

    pub fn search(&self, query: &[f32], k: usize, nprobe: usize) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim {
            return Err(invalid!("query has dimension {}, index {}", query.len(), self.dim));
        }
        if !(1..=self.params.nlist).contains(&nprobe) {
            return Err(invalid!("nprobe must be in [1, {}], got {nprobe}", self.params.nlist));
        }
        if k > self.len() {
            return Err(invalid!("k={k} exceeds index size {}", self.len()));
        }
        let (m, ksub) = (self.params.m, self.params.ksub());
        let dsub = self.dim / m;
        let mut hits = Vec::new();
        let mut table = vec![0.0f64; m * ksub];
        for &c in self.probe_order(query).iter().take(nprobe) {
            let list = &self.lists[c];
            if self.params.is_exact() {
                for (&id, v) in list.ids.iter().zip(list.vectors.chunks_exact(self.dim)) {
                    hits.push(Neighbor {
                        id,
                        distance: sq_dist(query, v),
                    });
                }
                continue;
            }
            let centre = &self.coarse[c * self.dim..(c + 1) * self.dim];
            let residual: Vec<f64> = query.iter().zip(centre).map(|(&q, &o)| q as f64 - o as f64).collect();
            for j in 0..m {
                let r = &residual[j * dsub..(j + 1) * dsub];
                for code in 0..ksub {
                    let w = &self.codebooks[(j * ksub + code) * dsub..(j * ksub + code + 1) * dsub];
                    table[j * ksub + code] = r.iter().zip(w).map(|(&a, &b)| (a - b as f64).powi(2)).sum();
                }
            }
            for (&id, codes) in list.ids.iter().zip(list.codes.chunks_exact(m)) {
                let distance = codes.iter().enumerate().map(|(j, &q)| table[j * ksub + q as usize]).sum();
                hits.push(Neighbor { id, distance });
            }
        }
        Ok(top_k(hits, k))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(MAGIC);
        let p = &self.params;
        w.usize(self.dim);
        w.usize(p.nlist);
        w.usize(p.m);
        w.u32(p.nbits);
        w.u64(p.seed);
        w.usize(p.train_iters);
        w.f32s(&self.coarse);
        w.f32s(&self.codebooks);
        for list in &self.lists {
            w.usize(list.ids.len());
            for &id in &list.ids {
                w.u64(id);
            }
            if p.is_exact() {
                w.f32s(&list.vectors);
            } else {
                w.bytes(&list.codes);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, MAGIC)?;
        let dim = r.usize()?;
        let params = IvfPqParams {
            nlist: r.usize()?,
            m: r.usize()?,
            nbits: r.u32()?,
            seed: r.u64()?,
            train_iters: r.usize()?,
        };
        if dim == 0 {
            return Err(format_err!("zero dimension"));
        }
        params.validate(dim).map_err(|e| format_err!("{e}"))?;
        let coarse_len = params.nlist.checked_mul(dim).ok_or_else(|| format_err!("size overflow"))?;
        let coarse = r.f32s(coarse_len)?;
        let book_len = if params.is_exact() { 0 } else { params.ksub() * dim };
        let codebooks = r.f32s(book_len)?;
        if !coarse.iter().chain(&codebooks).all(|v| v.is_finite()) {
            return Err(format_err!("non-finite centroid values"));
        }
        let mut lists = Vec::with_capacity(params.nlist.min(r.remaining()));
        let mut all_ids = Vec::new();
        for _ in 0..params.nlist {
            let count = r.usize()?;
            let ids = r.u64s(count)?;
            let mut list = InvertedList {
                ids,
                ..Default::default()
            };
            if params.is_exact() {
                list.vectors = r.f32s(count.checked_mul(dim).ok_or_else(|| format_err!("size overflow"))?)?;
                check_rows(&list.vectors, dim, count).map_err(|e| format_err!("{e}"))?;
            } else {
                let n = count.checked_mul(params.m).ok_or_else(|| format_err!("size overflow"))?;
                list.codes = r.bytes(n)?.to_vec();
                if list.codes.iter().any(|&c| c as usize >= params.ksub()) {
                    return Err(format_err!("code out of range for {} bits", params.nbits));
                }
            }
            all_ids.extend_from_slice(&list.ids);
            lists.push(list);
        }
        r.finish()?;
        check_ids(&all_ids).map_err(|e| format_err!("{e}"))?;
        Ok(Self {
            dim,
            params,
            coarse,
            codebooks,
            lists,
        })
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
    use crate::retrieval::FlatIndex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn random_unit(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.extend(v.iter().map(|x| (x / norm) as f32));
        }
        out
    }

    #[test]
    fn exact_mode_matches_flat() {
        let (n, dim) = (300, 16);
        let data = random_unit(n, dim, 1);
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
        let flat = FlatIndex::build(ids.clone(), data.clone(), dim).unwrap();
        let ivf = IvfPqIndex::build(ids, data, dim, IvfPqParams::exact(8)).unwrap();
        for q in random_unit(20, dim, 2).chunks(dim) {
            assert_eq!(ivf.search(q, 10, 8).unwrap(), flat.search(q, 10).unwrap());
        }
    }

    #[test]
    fn every_id_in_one_list() {
        let (n, dim) = (200, 8);
        let ids: Vec<u64> = (0..n as u64).collect();
        let idx = IvfPqIndex::build(ids, random_unit(n, dim, 3), dim, IvfPqParams::default()).unwrap();
        let mut seen: Vec<u64> = idx.list_ids().concat();
        seen.sort();
        assert_eq!(seen, (0..n as u64).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_bytes_and_round_trip() {
        let (n, dim) = (100, 8);
        let ids: Vec<u64> = (0..n as u64).collect();
        let data = random_unit(n, dim, 4);
        let a = IvfPqIndex::build(ids.clone(), data.clone(), dim, IvfPqParams::default()).unwrap();
        let b = IvfPqIndex::build(ids, data, dim, IvfPqParams::default()).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(bytes, b.to_bytes());
        let back = IvfPqIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn parameter_errors() {
        let data = random_unit(10, 8, 5);
        let ids: Vec<u64> = (0..10).collect();
        let p = IvfPqParams { m: 3, ..Default::default() };
        assert!(IvfPqIndex::build(ids.clone(), data.clone(), 8, p).is_err());
        assert!(IvfPqIndex::build(ids.clone(), data.clone(), 8, IvfPqParams::default()).is_err());
        let idx = IvfPqIndex::build(ids, data, 8, IvfPqParams::exact(2)).unwrap();
        assert!(idx.search(&[0.0; 8], 1, 3).is_err());
        assert!(idx.search(&[0.0; 8], 1, 0).is_err());
    }
}
