//! Retrieval and comparator evaluation metrics, and the evaluation report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Result};
use crate::model::NUM_CLASSES;
use crate::retrieval::IndexDescription;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    NonEditorial,
    Editorial,
    EditorialPlus,
}

impl QueryKind {
    pub const ALL: [QueryKind; 3] = [Self::NonEditorial, Self::Editorial, Self::EditorialPlus];

    pub fn name(self) -> &'static str {
        match self {
            Self::NonEditorial => "non_editorial",
            Self::Editorial => "editorial",
            Self::EditorialPlus => "editorial_plus",
        }
    }
}

/// Outcome of one retrieval query; `rank_of_gt` is 1-based, `None` when the
/// original was not among the retrieved results.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub gt_id: u64,
    pub query_kind: QueryKind,
    pub attacked: bool,
    pub rank_of_gt: Option<usize>,
}

fn nonempty(records: &[QueryRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(invalid!("metric over an empty record set"));
    }
    Ok(())
}

/// Fraction of queries whose original is ranked within the top `k`.
pub fn recall_at_k(records: &[QueryRecord], k: usize) -> Result<f64> {
    nonempty(records)?;
    let hits = records.iter().filter(|r| r.rank_of_gt.is_some_and(|x| x <= k)).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean reciprocal rank of the single relevant item.
pub fn mean_average_precision(records: &[QueryRecord]) -> Result<f64> {
    nonempty(records)?;
    let total: f64 = records
        .iter()
        .map(|r| r.rank_of_gt.map_or(0.0, |x| 1.0 / x as f64))
        .sum();
    Ok(total / records.len() as f64)
}

/// `(1 − mAP, 1 − R@1)`: rewards pushing the original away.
pub fn inverse_metrics(records: &[QueryRecord]) -> Result<(f64, f64)> {
    Ok((1.0 - mean_average_precision(records)?, 1.0 - recall_at_k(records, 1)?))
}

/// `a·b/(a + b)`, half the harmonic mean.
pub fn f_score(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) {
        return Err(invalid!("f_score needs non-negative inputs with positive sum, got {a}, {b}"));
    }
    Ok(a * b / (a + b))
}

/// Area under the precision-recall step curve: `Σ_k P(k)·Δrecall(k)` over
/// items sorted by descending score (ties keep input order).
pub fn average_precision_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid!("{} scores for {} labels", scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(invalid!("average precision needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            ap += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(ap / positives as f64)
}

/// One-vs-rest AP for each class present, and their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn class_average_precision(probs: &[[f32; NUM_CLASSES]], classes: &[usize]) -> Result<ClassAp> {
    if probs.len() != classes.len() || probs.is_empty() {
        return Err(invalid!("class AP needs matching nonempty scores and labels"));
    }
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        let labels: Vec<bool> = classes.iter().map(|&y| y == c).collect();
        if labels.iter().any(|&l| l) {
            let scores: Vec<f64> = probs.iter().map(|p| p[c] as f64).collect();
            per_class.push(Some(average_precision_binary(&scores, &labels)?));
        } else {
            per_class.push(None);
        }
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(ClassAp {
        mean: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

/// Intersection over union of the two grids binarized at `threshold`.
pub fn heatmap_iou(pred: &[f32], gt: &[f32], threshold: f32) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(invalid!("heatmaps have {} and {} cells", pred.len(), gt.len()));
    }
    if !gt.iter().any(|&v| v >= threshold) {
        return Err(invalid!("ground-truth heatmap has no cell above {threshold}"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p >= threshold, g >= threshold);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(inter as f64 / union as f64)
}

pub const IOU_THRESHOLD: f32 = 0.5;

/// One comparator evaluation pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: u64,
    pub class: usize,
    pub attacked: bool,
    pub class_probs: [f32; NUM_CLASSES],
    /// IoU against the edit heatmap for editorial pairs.
    pub iou: Option<f64>,
}

/// Aggregate retrieval quality for one (query set, attack) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCell {
    pub query_kind: QueryKind,
    pub attacked: bool,
    pub count: usize,
    pub recall_at_1: f64,
    pub recall_at_100: f64,
    pub map: f64,
    pub inverse_map: f64,
    pub inverse_recall_at_1: f64,
}

/// Aggregate comparator quality for clean or attacked pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparatorCell {
    pub attacked: bool,
    pub count: usize,
    pub ap: ClassAp,
    pub accuracy: f64,
    pub mean_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub config: serde_json::Value,
    pub index: Option<IndexDescription>,
    pub nprobe: Option<usize>,
    pub records: Vec<QueryRecord>,
    pub pairs: Vec<PairRecord>,
    pub retrieval: Vec<RetrievalCell>,
    pub comparator: Vec<ComparatorCell>,
}

fn retrieval_cells(records: &[QueryRecord]) -> Result<Vec<RetrievalCell>> {
    let mut groups: BTreeMap<(QueryKind, bool), Vec<QueryRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.query_kind, r.attacked)).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|((query_kind, attacked), rs)| {
            let (inverse_map, inverse_recall_at_1) = inverse_metrics(&rs)?;
            Ok(RetrievalCell {
                query_kind,
                attacked,
                count: rs.len(),
                recall_at_1: recall_at_k(&rs, 1)?,
                recall_at_100: recall_at_k(&rs, 100)?,
                map: mean_average_precision(&rs)?,
                inverse_map,
                inverse_recall_at_1,
            })
        })
        .collect()
}

fn comparator_cells(pairs: &[PairRecord]) -> Result<Vec<ComparatorCell>> {
    let mut cells = Vec::new();
    for attacked in [false, true] {
        let group: Vec<&PairRecord> = pairs.iter().filter(|p| p.attacked == attacked).collect();
        if group.is_empty() {
            continue;
        }
        let probs: Vec<[f32; NUM_CLASSES]> = group.iter().map(|p| p.class_probs).collect();
        let classes: Vec<usize> = group.iter().map(|p| p.class).collect();
        let correct = group
            .iter()
            .filter(|p| {
                let pred = crate::model::ComparatorPrediction {
                    class_probs: p.class_probs,
                    heatmap: Vec::new(),
                };
                pred.predicted_class() == p.class
            })
            .count();
        let ious: Vec<f64> = group.iter().filter_map(|p| p.iou).collect();
        cells.push(ComparatorCell {
            attacked,
            count: group.len(),
            ap: class_average_precision(&probs, &classes)?,
            accuracy: correct as f64 / group.len() as f64,
            mean_iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
        });
    }
    Ok(cells)
}

impl EvalReport {
    pub fn new(
        name: impl Into<String>,
        config: serde_json::Value,
        index: Option<IndexDescription>,
        nprobe: Option<usize>,
        records: Vec<QueryRecord>,
        pairs: Vec<PairRecord>,
    ) -> Result<Self> {
        if pairs.iter().any(|p| p.class >= NUM_CLASSES) {
            return Err(invalid!("pair class out of range"));
        }
        Ok(Self {
            name: name.into(),
            config,
            index,
            nprobe,
            retrieval: retrieval_cells(&records)?,
            comparator: comparator_cells(&pairs)?,
            records,
            pairs,
        })
    }

    /// Recomputes every aggregate from the per-query records.
    pub fn verify(&self) -> Result<()> {
        if self.pairs.iter().any(|p| p.class >= NUM_CLASSES) {
            return Err(format_err!("pair class out of range"));
        }
        if retrieval_cells(&self.records)? != self.retrieval {
            return Err(format_err!("retrieval aggregates do not match the query records"));
        }
        if comparator_cells(&self.pairs)? != self.comparator {
            return Err(format_err!("comparator aggregates do not match the pair records"));
        }
        Ok(())
    }

    pub fn cell(&self, kind: QueryKind, attacked: bool) -> Option<&RetrievalCell> {
        self.retrieval.iter().find(|c| c.query_kind == kind && c.attacked == attacked)
    }

    pub fn comparator_cell(&self, attacked: bool) -> Option<&ComparatorCell> {
        self.comparator.iter().find(|c| c.attacked == attacked)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a report and checks that its aggregates are consistent.
    pub fn from_json(s: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(s)?;
        report.verify()?;
        Ok(report)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Query set × {clean, attacked} × {R@1, R@100, mAP}; absent cells are blank.
pub fn write_retrieval_csv<W: std::io::Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "report",
        "query_set",
        "count",
        "r1_clean",
        "r100_clean",
        "map_clean",
        "count_adv",
        "r1_adv",
        "r100_adv",
        "map_adv",
    ])?;
    for r in reports {
        for kind in QueryKind::ALL {
            let clean = r.cell(kind, false);
            let adv = r.cell(kind, true);
            if clean.is_none() && adv.is_none() {
                continue;
            }
            w.write_record([
                r.name.clone(),
                kind.name().to_string(),
                clean.map_or(0, |c| c.count).to_string(),
                opt(clean.map(|c| c.recall_at_1)),
                opt(clean.map(|c| c.recall_at_100)),
                opt(clean.map(|c| c.map)),
                adv.map_or(0, |c| c.count).to_string(),
                opt(adv.map(|c| c.recall_at_1)),
                opt(adv.map(|c| c.recall_at_100)),
                opt(adv.map(|c| c.map)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// F-scores pairing non-editorial matching with editorial rejection.
pub fn write_fscore_csv<W: std::io::Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["report", "attacked", "map", "imap", "f_map", "r1", "ir1", "f_r1"])?;
    for r in reports {
        for attacked in [false, true] {
            let (Some(n), Some(e)) = (r.cell(QueryKind::NonEditorial, attacked), r.cell(QueryKind::Editorial, attacked))
            else {
                continue;
            };
            let f = |a: f64, b: f64| opt(f_score(a, b).ok());
            w.write_record([
                r.name.clone(),
                attacked.to_string(),
                opt(Some(n.map)),
                opt(Some(e.inverse_map)),
                f(n.map, e.inverse_map),
                opt(Some(n.recall_at_1)),
                opt(Some(e.inverse_recall_at_1)),
                f(n.recall_at_1, e.inverse_recall_at_1),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Comparator AP (overall and per class) and heatmap IoU.
pub fn write_comparator_csv<W: std::io::Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["report", "attacked", "count", "ap_all", "ap_0", "ap_1", "ap_2", "accuracy", "iou"])?;
    for r in reports {
        for c in &r.comparator {
            w.write_record([
                r.name.clone(),
                c.attacked.to_string(),
                c.count.to_string(),
                opt(Some(c.ap.mean)),
                opt(c.ap.per_class[0]),
                opt(c.ap.per_class[1]),
                opt(c.ap.per_class[2]),
                opt(Some(c.accuracy)),
                opt(c.mean_iou),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
