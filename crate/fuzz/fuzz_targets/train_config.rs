#![no_main]

use aria_core::attacks::AttackBudget;
use aria_core::training::{ComparatorTrainConfig, TrainConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = serde_json::from_slice::<TrainConfig>(data) {
        let _ = config.validate();
    }
    if let Ok(config) = serde_json::from_slice::<ComparatorTrainConfig>(data) {
        let _ = config.validate();
    }
    if let Ok(budget) = serde_json::from_slice::<AttackBudget>(data) {
        if budget.validate().is_ok() {
            for t in 0..budget.iters.min(1000) {
                assert!(budget.step_size(t).is_finite());
            }
        }
    }
});
