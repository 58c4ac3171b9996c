//! Masked training instances: dynamic token-level MLM, whole-word MLM, and
//! constrained masking of variable-name tokens.

use crate::seed;
use crate::tokenizer::{is_special, Encoding, MASK, NUM_SPECIAL};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

pub const SELECT_PROB: f64 = 0.15;
pub const MASK_SHARE: f64 = 0.8;
pub const RANDOM_SHARE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Mask,
    Random(u32),
    Keep,
}

/// Selected positions with their actions and original ids, sorted by
/// position.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub actions: Vec<(usize, Action)>,
    pub targets: Vec<(usize, u32)>,
    pub epoch_seed: u64,
    /// Set when there is nothing to predict; training skips the instance.
    pub skip: bool,
}

impl MaskingPlan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn push(&mut self, pos: usize, action: Action, original: u32) {
        self.actions.push((pos, action));
        self.targets.push((pos, original));
    }
}

impl fmt::Display for MaskingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "plan seed={} actions={} skip={}", self.epoch_seed, self.actions.len(), self.skip)?;
        for ((pos, action), (_, target)) in self.actions.iter().zip(&self.targets) {
            match action {
                Action::Mask => writeln!(f, "{pos}\tmask\t{target}")?,
                Action::Random(id) => writeln!(f, "{pos}\trandom:{id}\t{target}")?,
                Action::Keep => writeln!(f, "{pos}\tkeep\t{target}")?,
            }
        }
        Ok(())
    }
}

/// Token ranges of every variable occurrence in one instance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstrainedSet {
    pub spans: Vec<Range<usize>>,
}

impl ConstrainedSet {
    pub fn from_encoding(enc: &Encoding) -> Self {
        let mut spans: Vec<Range<usize>> = enc.slot_token_spans.iter().flatten().cloned().collect();
        spans.sort_by_key(|r| r.start);
        ConstrainedSet { spans }
    }

    /// Spans must be non-empty, in bounds and non-overlapping.
    pub fn is_valid_for(&self, len: usize) -> bool {
        self.spans.iter().all(|r| r.start < r.end && r.end <= len)
            && self.spans.windows(2).all(|w| w[0].end <= w[1].start)
    }

    pub fn token_count(&self) -> usize {
        self.spans.iter().map(|r| r.len()).sum()
    }
}

fn draw_action(rng: &mut ChaCha8Rng, vocab_size: usize) -> Action {
    let u: f64 = rng.random();
    if u < MASK_SHARE {
        Action::Mask
    } else if u < MASK_SHARE + RANDOM_SHARE {
        Action::Random(rng.random_range(NUM_SPECIAL as u32..vocab_size as u32))
    } else {
        Action::Keep
    }
}

/// Token-level dynamic masking: each non-special position is selected with
/// probability 0.15, then masked (80%), randomised (10%) or kept (10%).
pub fn plan_mlm(enc: &Encoding, vocab_size: usize, epoch_seed: u64) -> MaskingPlan {
    assert!(vocab_size > NUM_SPECIAL, "vocabulary has no ordinary tokens");
    let mut rng = seed::rng(epoch_seed, &[seed::stream::MASKING]);
    let mut plan = MaskingPlan {
        epoch_seed,
        ..MaskingPlan::default()
    };
    for (pos, &id) in enc.ids.iter().enumerate() {
        if is_special(id) {
            continue;
        }
        if rng.random::<f64>() < SELECT_PROB {
            let action = draw_action(&mut rng, vocab_size);
            plan.push(pos, action, id);
        }
    }
    plan.skip = plan.is_empty();
    plan
}

/// Token ranges of the words in `enc`, special tokens excluded.
pub fn words(enc: &Encoding) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = Vec::new();
    for (pos, &id) in enc.ids.iter().enumerate() {
        if is_special(id) {
            continue;
        }
        match out.last_mut() {
            Some(w) if !enc.word_starts[pos] && w.end == pos => w.end = pos + 1,
            _ => out.push(pos..pos + 1),
        }
    }
    out
}

/// Whole-word masking: each word is selected with probability 0.15 and one
/// action is applied to all of its tokens.
pub fn plan_mlm_whole_word(enc: &Encoding, vocab_size: usize, epoch_seed: u64) -> MaskingPlan {
    assert!(vocab_size > NUM_SPECIAL, "vocabulary has no ordinary tokens");
    let mut rng = seed::rng(epoch_seed, &[seed::stream::MASKING]);
    let mut plan = MaskingPlan {
        epoch_seed,
        ..MaskingPlan::default()
    };
    for word in words(enc) {
        if rng.random::<f64>() >= SELECT_PROB {
            continue;
        }
        match draw_action(&mut rng, vocab_size) {
            Action::Random(_) => {
                for pos in word {
                    let id = rng.random_range(NUM_SPECIAL as u32..vocab_size as u32);
                    plan.push(pos, Action::Random(id), enc.ids[pos]);
                }
            }
            action => {
                for pos in word {
                    plan.push(pos, action, enc.ids[pos]);
                }
            }
        }
    }
    plan.skip = plan.is_empty();
    plan
}

/// Mask every token inside every variable occurrence and nothing else.
pub fn plan_cmlm(enc: &Encoding, constrained: &ConstrainedSet) -> MaskingPlan {
    debug_assert!(constrained.is_valid_for(enc.len()));
    let mut plan = MaskingPlan::default();
    for span in &constrained.spans {
        for pos in span.clone() {
            plan.push(pos, Action::Mask, enc.ids[pos]);
        }
    }
    plan.skip = plan.is_empty();
    plan
}

/// Model input and loss targets for `plan`.
pub fn apply_plan(ids: &[u32], plan: &MaskingPlan) -> (Vec<u32>, Vec<(usize, u32)>) {
    let mut input = ids.to_vec();
    for &(pos, action) in &plan.actions {
        match action {
            Action::Mask => input[pos] = MASK,
            Action::Random(id) => input[pos] = id,
            Action::Keep => {}
        }
    }
    (input, plan.targets.clone())
}
