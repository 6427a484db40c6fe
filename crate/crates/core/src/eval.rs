//! Evaluation harness: retrieval over the three query sets with and without
//! attacks, and comparator classification/localization on labelled pairs.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    comparator_class_attack, heatmap_attack, realize_and_requery, untargeted_embedding_attack, AttackBudget,
    AttackRecord,
};
use crate::corpus::{derive_seed, CorpusImage, Query};
use crate::error::{invalid, Result};
use crate::metrics::{heatmap_iou, PairRecord, QueryRecord, IOU_THRESHOLD};
use crate::model::{ComparatorModel, Fingerprint, FingerprintModel, PairLabel};
use crate::parallel::try_map_indexed;
use crate::retrieval::{FlatIndex, Neighbor, VectorIndex};
use crate::tensor::Tensor;
use crate::transforms::{apply_editorial, apply_photometric};

/// Depth of the retrieved list used for ranks.
pub const SEARCH_DEPTH: usize = 100;

pub fn embed_all(model: &FingerprintModel, images: &[&Tensor<f32>], threads: usize) -> Result<Vec<Fingerprint>> {
    try_map_indexed(images.len(), threads, |i| model.embed_any(images[i]))
}

/// Flat index over the fingerprints of `images`.
pub fn build_flat_index(model: &FingerprintModel, images: &[CorpusImage], threads: usize) -> Result<FlatIndex> {
    let refs: Vec<&Tensor<f32>> = images.iter().map(|c| &c.pixels).collect();
    let fps = embed_all(model, &refs, threads)?;
    let ids = images.iter().map(|c| c.id).collect();
    let data = fps.into_iter().flat_map(|f| f.values).collect();
    FlatIndex::build(ids, data, model.config().embed_dim)
}

/// 1-based position of `gt` in `hits`.
pub fn rank_of(hits: &[Neighbor], gt: u64) -> Option<usize> {
    hits.iter().position(|h| h.id == gt).map(|p| p + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSettings {
    pub nprobe: usize,
    /// Quantize and compress adversarial images before querying.
    pub realize: bool,
    pub threads: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            nprobe: 4,
            realize: true,
            threads: 1,
        }
    }
}

/// Queries `index` with each query (attacked when `budget` is given, the
/// adversary maximizing distance from the original's fingerprint).
pub fn evaluate_queries(
    model: &FingerprintModel,
    index: &VectorIndex,
    queries: &[Query],
    originals: &HashMap<u64, &Tensor<f32>>,
    budget: Option<&AttackBudget>,
    settings: &RetrievalSettings,
) -> Result<(Vec<QueryRecord>, Vec<AttackRecord>)> {
    let depth = SEARCH_DEPTH.min(index.len());
    let out = try_map_indexed(queries.len(), settings.threads, |i| {
        let q = &queries[i];
        let (image, attack) = match budget {
            None => (q.image.clone(), None),
            Some(b) => {
                let orig = originals
                    .get(&q.gt_id)
                    .ok_or_else(|| invalid!("original {} of query {} not supplied", q.gt_id, q.query_id))?;
                let outcome = untargeted_embedding_attack(model, &q.image, orig, b)?;
                let adv = if settings.realize {
                    realize_and_requery(&outcome.delta, &q.image)?
                } else {
                    outcome.adversarial(&q.image)
                };
                let rec = AttackRecord::new(q.query_id, &outcome, &q.image, &adv)?;
                (adv, Some(rec))
            }
        };
        let fp = model.embed_any(&image)?;
        let hits = index.search(&fp.values, depth, settings.nprobe)?;
        Ok::<_, crate::Error>((
            QueryRecord {
                query_id: q.query_id,
                gt_id: q.gt_id,
                query_kind: q.kind,
                attacked: budget.is_some(),
                rank_of_gt: rank_of(&hits, q.gt_id),
            },
            attack,
        ))
    })?;
    let (records, attacks): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok((records, attacks.into_iter().flatten().collect()))
}

/// A labelled comparator pair at storage resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparatorPair {
    pub pair_id: u64,
    pub reference: Tensor<f32>,
    pub query: Tensor<f32>,
    pub label: PairLabel,
}

/// Builds one pair of class `class` from `corpus[src]`: photometric change
/// only (0), a spliced or inverted region plus photometric change (1), or a
/// different image under a photometric change (2).
pub fn make_pair(corpus: &[CorpusImage], src: usize, class: usize, rng: &mut impl Rng) -> Result<(Tensor<f32>, Tensor<f32>, PairLabel)> {
    if corpus.len() < 2 {
        return Err(invalid!("pairs need at least two corpus images"));
    }
    let other = |rng: &mut dyn rand::RngCore| {
        let mut d = rng.random_range(0..corpus.len() - 1);
        if d >= src {
            d += 1;
        }
        d
    };
    let x = &corpus[src].pixels;
    match class {
        0 => {
            let (q, _) = apply_photometric(x, rng)?;
            Ok((x.clone(), q, PairLabel::unedited(0)?))
        }
        1 => {
            let donor = &corpus[other(rng)];
            let (edited, rec) = apply_editorial(x, &donor.pixels, donor.id, rng)?;
            let (q, _) = apply_photometric(&edited, rng)?;
            Ok((x.clone(), q, PairLabel::new(1, rec.heatmap)?))
        }
        2 => {
            let (q, _) = apply_photometric(&corpus[other(rng)].pixels, rng)?;
            Ok((x.clone(), q, PairLabel::unedited(2)?))
        }
        _ => Err(invalid!("class {class} out of range")),
    }
}

/// `n` pairs cycling through the three classes.
pub fn make_comparator_pairs(corpus: &[CorpusImage], n: usize, seed: u64, threads: usize) -> Result<Vec<ComparatorPair>> {
    try_map_indexed(n, threads, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let src = rng.random_range(0..corpus.len());
        let (reference, query, label) = make_pair(corpus, src, i % 3, &mut rng)?;
        Ok(ComparatorPair {
            pair_id: i as u64,
            reference,
            query,
            label,
        })
    })
}

fn pair_iou(heatmap: &[f32], label: &PairLabel) -> Result<Option<f64>> {
    if label.class != 1 || !label.heatmap.iter().any(|&v| v >= IOU_THRESHOLD) {
        return Ok(None);
    }
    heatmap_iou(heatmap, &label.heatmap, IOU_THRESHOLD).map(Some)
}

/// Scores every pair. With a budget, class probabilities come from the
/// class attack and the IoU of edited pairs from the heatmap attack.
pub fn evaluate_comparator(
    model: &ComparatorModel,
    pairs: &[ComparatorPair],
    budget: Option<&AttackBudget>,
    realize: bool,
    threads: usize,
) -> Result<Vec<PairRecord>> {
    let size = model.config().input_size;
    try_map_indexed(pairs.len(), threads, |i| {
        let p = &pairs[i];
        let reference = crate::attacks::at_resolution(&p.reference, size)?;
        let finish = |adv: Tensor<f32>, delta: &Tensor<f32>| -> Result<Tensor<f32>> {
            if realize {
                realize_and_requery(delta, &p.query)
            } else {
                Ok(adv)
            }
        };
        let compare = |q: &Tensor<f32>| model.compare(&reference, &crate::attacks::at_resolution(q, size)?);
        let (probs, iou) = match budget {
            None => {
                let pred = compare(&p.query)?;
                (pred.class_probs, pair_iou(&pred.heatmap, &p.label)?)
            }
            Some(b) => {
                let out = comparator_class_attack(model, &p.reference, &p.query, p.label.class, b)?;
                let adv = finish(out.adversarial(&p.query), &out.delta)?;
                let probs = compare(&adv)?.class_probs;
                let iou = if p.label.class == 1 && pair_iou(&p.label.heatmap, &p.label)?.is_some() {
                    let h = heatmap_attack(model, &p.reference, &p.query, &p.label.heatmap, b, false)?;
                    let adv = finish(h.adversarial(&p.query), &h.delta)?;
                    pair_iou(&compare(&adv)?.heatmap, &p.label)?
                } else {
                    None
                };
                (probs, iou)
            }
        };
        Ok(PairRecord {
            pair_id: p.pair_id,
            class: p.label.class,
            attacked: budget.is_some(),
            class_probs: probs,
            iou,
        })
    })
}
