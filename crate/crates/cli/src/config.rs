//! Experiment configuration: a JSON file whose every field is optional,
//! with command-line overrides applied on top.

use std::path::Path;

use aria_core::attacks::{AttackBudget, Norm};
use aria_core::model::{ComparatorConfig, FingerprintConfig};
use aria_core::retrieval::IvfPqParams;
use aria_core::training::{ComparatorTrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub sources: usize,
    pub distractors: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            sources: 2000,
            distractors: 2000,
            size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryParams {
    /// Queries per query set.
    pub count: usize,
    /// Comparator evaluation pairs.
    pub pairs: usize,
    pub seed: u64,
    /// Quantize and compress adversarial images before use.
    pub realize: bool,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            count: 200,
            pairs: 300,
            seed: 1,
            realize: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Flat,
    Ivfpq,
    Hash,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexParams {
    pub kind: IndexKind,
    pub nlist: usize,
    pub m: usize,
    pub nbits: u32,
    pub nprobe: usize,
    pub seed: u64,
    pub train_iters: usize,
}

impl Default for IndexParams {
    fn default() -> Self {
        let p = IvfPqParams::default();
        Self {
            kind: IndexKind::Flat,
            nlist: p.nlist,
            m: p.m,
            nbits: p.nbits,
            nprobe: 4,
            seed: p.seed,
            train_iters: p.train_iters,
        }
    }
}

impl IndexParams {
    pub fn ivfpq(&self) -> IvfPqParams {
        IvfPqParams {
            nlist: self.nlist,
            m: self.m,
            nbits: self.nbits,
            seed: self.seed,
            train_iters: self.train_iters,
        }
    }
}

/// Recall measured during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeParams {
    pub queries: usize,
    pub budget: AttackBudget,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            queries: 100,
            budget: AttackBudget::linf(8.0 / 255.0, 20, 4.0 / 255.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionParams {
    pub targets: usize,
    pub iters: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for InversionParams {
    fn default() -> Self {
        Self {
            targets: 20,
            iters: 1000,
            beta: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusParams,
    pub queries: QueryParams,
    pub model: FingerprintConfig,
    pub comparator_model: ComparatorConfig,
    pub train: TrainConfig,
    pub comparator: ComparatorTrainConfig,
    /// Attack budgets used by `attack` (first entry) and `evaluate` (all).
    pub budgets: Vec<AttackBudget>,
    pub index: IndexParams,
    pub probe: ProbeParams,
    pub inversion: InversionParams,
    pub model_seed: u64,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusParams::default(),
            queries: QueryParams::default(),
            model: FingerprintConfig::default(),
            comparator_model: ComparatorConfig::default(),
            train: TrainConfig::default(),
            comparator: ComparatorTrainConfig::default(),
            budgets: vec![AttackBudget::standard()],
            index: IndexParams::default(),
            probe: ProbeParams::default(),
            inversion: InversionParams::default(),
            model_seed: 0,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("malformed config {}: {e}", path.display())))
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads;
        self.train.threads = threads;
        self.comparator.threads = threads;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: aria_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        check(self.model.validate())?;
        check(self.comparator_model.validate())?;
        check(self.train.validate())?;
        check(self.comparator.validate())?;
        check(self.probe.budget.validate())?;
        for b in &self.budgets {
            check(b.validate())?;
        }
        if self.threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if self.corpus.size < 8 {
            return Err(CliError::Config("corpus images must be at least 8 pixels wide".into()));
        }
        Ok(())
    }
}

/// Parses `NORM:EPS:ITERS[:STEP]`, e.g. `linf:8/255:50` or `l2:0.5:200`.
/// The default step is 4/255 for Linf and eps/2 for L2.
pub fn parse_budget(s: &str) -> Result<AttackBudget, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(format!("expected NORM:EPS:ITERS[:STEP], got {s:?}"));
    }
    let norm = match parts[0] {
        "linf" => Norm::Linf,
        "l2" => Norm::L2,
        other => return Err(format!("unknown norm {other:?} (expected linf or l2)")),
    };
    let eps = parse_number(parts[1])?;
    let iters: usize = parts[2].parse().map_err(|_| format!("bad iteration count {:?}", parts[2]))?;
    let step = match parts.get(3) {
        Some(p) => parse_number(p)?,
        None if norm == Norm::Linf => 4.0 / 255.0,
        None => eps / 2.0,
    };
    let budget = match norm {
        Norm::Linf => AttackBudget::linf(eps, iters, step),
        Norm::L2 => AttackBudget::l2(eps, iters, step),
    };
    budget.validate().map_err(|e| e.to_string())?;
    Ok(budget)
}

/// A decimal or a fraction such as `8/255`.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let bad = || format!("bad number {s:?}");
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            if b == 0.0 {
                return Err(bad());
            }
            a / b
        }
        None => s.parse().map_err(|_| bad())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// Short label used in file and report names.
pub fn budget_label(b: &AttackBudget) -> String {
    let norm = match b.norm {
        Norm::Linf => "linf",
        Norm::L2 => "l2",
    };
    format!("{norm}-{:.4}-{}", b.eps, b.iters)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_parse() {
        let b = parse_budget("linf:8/255:50").unwrap();
        assert_eq!(b, AttackBudget::standard());
        let b = parse_budget("l2:0.5:200").unwrap();
        assert_eq!(b.norm, Norm::L2);
        assert_eq!(b.step0, 0.25);
        assert!(parse_budget("linf:8/0:50").is_err());
        assert!(parse_budget("linf:-1:50").is_err());
        assert!(parse_budget("l1:1:5").is_err());
        assert!(parse_budget("linf:1").is_err());
        assert_eq!(budget_label(&AttackBudget::standard()), "linf-0.0314-50");
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"train": {"epochs": 3}, "corpus": {"sources": 10}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_pairs, 32);
        assert_eq!(c.corpus.sources, 10);
        assert_eq!(c.corpus.distractors, 2000);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"trian": {}}"#).is_err());
        let echo = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&echo).unwrap(), c);
    }
}
