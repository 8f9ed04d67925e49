//! Length-adaptive batch planning: long utterances travel in small batches,
//! short ones in large batches, under a single frame-element budget.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered set of batches of utterance IDs. Cost of a batch is
/// `size · max_frames`; every batch respects `budget` unless it is a
/// singleton (one over-long utterance still has to train).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<String>>,
    pub budget: usize,
}

impl BatchPlan {
    pub fn num_utterances(&self) -> usize {
        self.batches.iter().map(|b| b.len()).sum()
    }
}

/// Greedy packing by descending length: a batch admits the next (shorter)
/// utterance iff `(count+1) · max_len` stays within budget. Batch order is
/// then shuffled; contents keep their length order.
pub fn make_dynamic_batches(
    items: &[(String, usize)],
    budget: usize,
    shuffle_seed: u64,
) -> Result<BatchPlan> {
    if budget == 0 {
        return Err(Error::InvalidArgument("batch budget must be >= 1".into()));
    }
    if items.is_empty() {
        return Err(Error::InvalidArgument("no utterances to batch".into()));
    }
    for (id, len) in items {
        if *len == 0 {
            return Err(Error::InvalidArgument(format!(
                "utterance '{id}' has zero frames"
            )));
        }
    }
    let mut sorted: Vec<&(String, usize)> = items.iter().collect();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::InvalidArgument(format!(
                "duplicate utterance id '{}'",
                w[0].0
            )));
        }
    }

    let mut batches: Vec<Vec<String>> = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    let mut cur_max = 0usize;
    for (id, len) in sorted {
        // descending order: the first entry of a batch fixes its max length
        if cur.is_empty() {
            cur_max = *len;
            cur.push(id.clone());
        } else if (cur.len() + 1) * cur_max <= budget {
            cur.push(id.clone());
        } else {
            batches.push(std::mem::take(&mut cur));
            cur_max = *len;
            cur.push(id.clone());
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    batches.shuffle(&mut rng);
    Ok(BatchPlan { batches, budget })
}
