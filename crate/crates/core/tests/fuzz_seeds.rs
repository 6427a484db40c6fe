//! The checked-in fuzz seeds must stay decodable as the formats evolve.

use std::fs;
use std::path::PathBuf;

use aria_core::attacks::AttackBudget;
use aria_core::io::decode_ppm;
use aria_core::metrics::EvalReport;
use aria_core::model::{ComparatorModel, FingerprintModel};
use aria_core::retrieval::{HashIndex, VectorIndex};
use aria_core::training::{ComparatorTrainConfig, TrainConfig};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn binary_seeds_decode() {
    for (path, bytes) in seeds("ppm_decode") {
        decode_ppm(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    for (path, bytes) in seeds("fingerprint_model") {
        let m = FingerprintModel::from_bytes(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(m.to_bytes(), bytes);
    }
    for (path, bytes) in seeds("comparator_model") {
        let m = ComparatorModel::from_bytes(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(m.to_bytes(), bytes);
    }
    for (path, bytes) in seeds("vector_index") {
        VectorIndex::from_bytes(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    for (path, bytes) in seeds("hash_index") {
        let h = HashIndex::from_bytes(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(h.to_bytes(), bytes);
    }
}

#[test]
fn json_seeds_parse() {
    for (path, bytes) in seeds("eval_report") {
        EvalReport::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    let mut counts = [0; 3];
    for (path, bytes) in seeds("train_config") {
        if let Ok(b) = serde_json::from_slice::<AttackBudget>(&bytes) {
            b.validate().unwrap();
            counts[0] += 1;
        } else if let Ok(c) = serde_json::from_slice::<TrainConfig>(&bytes) {
            c.validate().unwrap();
            counts[1] += 1;
        } else {
            let c: ComparatorTrainConfig =
                serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            c.validate().unwrap();
            counts[2] += 1;
        }
    }
    assert!(counts.iter().all(|&c| c >= 1), "{counts:?}");
}
