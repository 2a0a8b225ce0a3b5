//! Stratified k-fold assignment.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::taxonomy::ClfClass;

use super::IngestError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Item id to fold index in `[0, k)`.
    pub assignment: BTreeMap<String, usize>,
    /// Classes with fewer than `k` items, which cannot reach every fold.
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// `item_id,fold` lines sorted by id.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item_id,fold\n");
        for (id, f) in &self.assignment {
            out.push_str(&format!("{id},{f}\n"));
        }
        out
    }
}

fn class_rng(seed: u64, class: ClfClass) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(class.as_str().as_bytes());
    let mut s = [0u8; 32];
    s.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(s)
}

/// Shuffles each class with its own seeded generator, concatenates the
/// classes in class order, and deals position `i` to fold `i mod k`.
///
/// Per-class fold counts then differ by at most one, as do overall fold sizes.
pub fn make_folds(items: &[(String, ClfClass)], k: usize, seed: u64) -> Result<FoldAssignment, IngestError> {
    if k < 2 {
        return Err(IngestError::Folds(format!("k = {k}, need at least 2")));
    }
    if k > items.len() {
        return Err(IngestError::Folds(format!("k = {k} exceeds the {} items", items.len())));
    }
    let mut seen = HashSet::new();
    let mut by_class: BTreeMap<ClfClass, Vec<&str>> = BTreeMap::new();
    for (id, class) in items {
        if !seen.insert(id.as_str()) {
            return Err(IngestError::Folds(format!("duplicate item id {id}")));
        }
        by_class.entry(*class).or_default().push(id);
    }

    let mut warnings = Vec::new();
    let mut order: Vec<&str> = Vec::with_capacity(items.len());
    for (class, mut ids) in by_class {
        if ids.len() < k {
            let w = format!("class {class} has {} item(s) for {k} folds; stratification relaxed", ids.len());
            log::warn!("{w}");
            warnings.push(w);
        }
        ids.sort_unstable();
        ids.shuffle(&mut class_rng(seed, class));
        order.extend(ids);
    }
    let assignment = order.into_iter().enumerate().map(|(i, id)| (id.to_string(), i % k)).collect();
    Ok(FoldAssignment { k, assignment, warnings })
}
