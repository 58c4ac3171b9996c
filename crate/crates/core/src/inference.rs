//! Name prediction for variable slots.
//!
//! For a slot and a token count `n`, every occurrence of the slot is replaced
//! by `n` mask tokens and one forward pass scores all of them. Each
//! occurrence yields a candidate (per-position argmax, specials excluded) and
//! the occurrence with the highest mean token probability speaks for the
//! variable. In heuristic mode `n` runs over `1..=max_allowed` and the best
//! mean probability wins, ties going to the smaller count; oracle mode uses
//! the true count. Other slots are shown according to [`PendingLayout`],
//! accepted names as their own tokens.

use crate::corpus::{CanonicalFunction, Span};
use crate::eval::VariablePrediction;
use crate::model::{Model, ModelError};
use crate::numeric::{softmax_row, Real};
use crate::tokenizer::{BpeVocab, BOS, EOS, MASK, NUM_SPECIAL};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use thiserror::Error;

pub const DEFAULT_MAX_ALLOWED: usize = 7;
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("accepted name for unknown slot {0}")]
    UnknownSlot(String),
    #[error("slot {0} is declared twice")]
    DuplicateSlot(String),
    #[error("slot {slot}: {reason}")]
    BadSlot { slot: String, reason: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("max_allowed must be at least 1")]
    InvalidMaxAllowed,
    #[error("oracle mode needs a token count for slot {0}")]
    MissingCount(String),
    #[error("input of {len} tokens exceeds max_seq {max}; truncate the function context")]
    TooLong { len: usize, max: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Heuristic,
    Oracle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Heuristic => "heuristic",
            Mode::Oracle => "oracle",
        }
    }
}

/// How a slot that is neither being predicted nor accepted appears in the
/// model input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingLayout {
    /// Masks in the number the mode knows: the declared count in oracle
    /// mode, one in heuristic mode.
    #[default]
    Mask,
    /// The decompiler placeholder text.
    Placeholder,
    /// Masks in the number a first heuristic pass chose for that slot.
    EstimatedCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionCandidate {
    pub name: String,
    pub count: usize,
    pub token_ids: Vec<u32>,
    pub token_probs: Vec<f64>,
    pub mean_prob: f64,
    /// Index of the occurrence the tokens were read from.
    pub occurrence: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDecl {
    pub placeholder: String,
    /// Byte spans of the occurrences in the request text.
    pub spans: Vec<Span>,
    /// True token count, used in oracle mode.
    #[serde(default)]
    pub count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub text: String,
    pub slots: Vec<SlotDecl>,
    /// Placeholder -> name fixed by the user.
    #[serde(default)]
    pub accepted: BTreeMap<String, String>,
    pub k: usize,
    #[serde(default)]
    pub mode: Mode,
    pub max_allowed: usize,
    #[serde(default)]
    pub layout: PendingLayout,
}

impl InferenceRequest {
    pub fn new(text: impl Into<String>, slots: Vec<SlotDecl>) -> Self {
        InferenceRequest {
            text: text.into(),
            slots,
            accepted: BTreeMap::new(),
            k: DEFAULT_K,
            mode: Mode::Heuristic,
            max_allowed: DEFAULT_MAX_ALLOWED,
            layout: PendingLayout::Mask,
        }
    }

    /// Request over a canonical function: spans are the gold-name
    /// occurrences, counts the gold token counts.
    pub fn from_canonical(vocab: &BpeVocab, f: &CanonicalFunction) -> Self {
        let slots = f
            .slots
            .iter()
            .map(|s| SlotDecl {
                placeholder: s.decompiler_name.clone(),
                spans: s.spans.clone(),
                count: Some(vocab.name_token_count(&s.gold_name)),
            })
            .collect();
        Self::new(f.text.clone(), slots)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSuggestions {
    pub placeholder: String,
    /// Best first, deduplicated by name, at most `k`.
    pub candidates: Vec<PredictionCandidate>,
}

enum Piece {
    Tokens(std::ops::Range<usize>),
    Slot(usize),
}

/// A validated request, tokenized once.
pub struct Prepared<'v> {
    vocab: &'v BpeVocab,
    base: Vec<u32>,
    pieces: Vec<Piece>,
    placeholders: Vec<Vec<u32>>,
    accepted: Vec<Option<Vec<u32>>>,
    /// Masks shown for a pending slot that is not the target.
    pending_counts: Vec<usize>,
    request: InferenceRequest,
}

impl<'v> Prepared<'v> {
    pub fn new(vocab: &'v BpeVocab, request: &InferenceRequest) -> Result<Self, InferenceError> {
        if request.k == 0 {
            return Err(InferenceError::InvalidK);
        }
        if request.max_allowed == 0 {
            return Err(InferenceError::InvalidMaxAllowed);
        }
        let mut seen = HashSet::new();
        for s in &request.slots {
            if !seen.insert(s.placeholder.as_str()) {
                return Err(InferenceError::DuplicateSlot(s.placeholder.clone()));
            }
        }
        if let Some(k) = request.accepted.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(InferenceError::UnknownSlot(k.clone()));
        }
        let bad = |slot: &SlotDecl, reason: &str| InferenceError::BadSlot {
            slot: slot.placeholder.clone(),
            reason: reason.to_string(),
        };
        let mut occ: Vec<(Span, usize)> = Vec::new();
        for (i, s) in request.slots.iter().enumerate() {
            if s.spans.is_empty() {
                return Err(bad(s, "no occurrences"));
            }
            if s.placeholder.trim().is_empty() {
                return Err(bad(s, "empty placeholder"));
            }
            for sp in &s.spans {
                if sp.start >= sp.end
                    || sp.end > request.text.len()
                    || !request.text.is_char_boundary(sp.start)
                    || !request.text.is_char_boundary(sp.end)
                {
                    return Err(bad(s, &format!("span {}..{} invalid for the text", sp.start, sp.end)));
                }
                occ.push((*sp, i));
            }
            if let Some(name) = request.accepted.get(&s.placeholder) {
                if name.trim().is_empty() || name.chars().any(char::is_whitespace) {
                    return Err(bad(s, "accepted name must be a non-empty identifier"));
                }
            }
            if request.mode == Mode::Oracle && !request.accepted.contains_key(&s.placeholder) {
                match s.count {
                    Some(c) if c >= 1 => {}
                    _ => return Err(InferenceError::MissingCount(s.placeholder.clone())),
                }
            }
        }
        occ.sort_by_key(|o| o.0.start);
        if let Some(w) = occ.windows(2).find(|w| w[0].0.end > w[1].0.start) {
            return Err(bad(&request.slots[w[1].1], "overlapping spans"));
        }

        let spans: Vec<Vec<Span>> = request.slots.iter().map(|s| s.spans.clone()).collect();
        let enc = vocab.encode_with_slots(request.text.as_bytes(), &spans);
        let mut starts: Vec<(usize, usize, usize)> = Vec::new();
        for (i, ranges) in enc.slot_token_spans.iter().enumerate() {
            for r in ranges {
                starts.push((r.start, r.end, i));
            }
        }
        starts.sort_unstable();
        let mut pieces = Vec::new();
        let mut pos = 0;
        for (a, b, slot) in starts {
            if a > pos {
                pieces.push(Piece::Tokens(pos..a));
            }
            pieces.push(Piece::Slot(slot));
            pos = b;
        }
        if pos < enc.ids.len() {
            pieces.push(Piece::Tokens(pos..enc.ids.len()));
        }
        Ok(Prepared {
            vocab,
            base: enc.ids,
            pieces,
            placeholders: request.slots.iter().map(|s| vocab.encode(&s.placeholder).ids).collect(),
            accepted: request
                .slots
                .iter()
                .map(|s| request.accepted.get(&s.placeholder).map(|n| vocab.encode(n).ids))
                .collect(),
            pending_counts: request
                .slots
                .iter()
                .map(|s| match request.mode {
                    Mode::Oracle => s.count.unwrap_or(1),
                    Mode::Heuristic => 1,
                })
                .collect(),
            request: request.clone(),
        })
    }

    pub fn request(&self) -> &InferenceRequest {
        &self.request
    }

    /// Slots without an accepted name, in declaration order.
    pub fn pending(&self) -> Vec<usize> {
        (0..self.request.slots.len()).filter(|&i| self.accepted[i].is_none()).collect()
    }

    /// Framed model input with `count` masks at every occurrence of
    /// `target`, and the mask positions per occurrence.
    pub fn layout(&self, target: usize, count: usize) -> (Vec<u32>, Vec<Vec<usize>>) {
        let mut ids = vec![BOS];
        let mut positions = Vec::new();
        for piece in &self.pieces {
            match *piece {
                Piece::Tokens(ref r) => ids.extend_from_slice(&self.base[r.clone()]),
                Piece::Slot(s) if s == target => {
                    positions.push((ids.len()..ids.len() + count).collect());
                    ids.extend(std::iter::repeat_n(MASK, count));
                }
                Piece::Slot(s) => match (&self.accepted[s], self.request.layout) {
                    (Some(t), _) => ids.extend_from_slice(t),
                    (None, PendingLayout::Placeholder) => ids.extend_from_slice(&self.placeholders[s]),
                    (None, _) => ids.extend(std::iter::repeat_n(MASK, self.pending_counts[s])),
                },
            }
        }
        ids.push(EOS);
        (ids, positions)
    }

    /// Override how many masks each non-target pending slot shows.
    pub fn set_pending_counts(&mut self, counts: Vec<usize>) {
        assert_eq!(counts.len(), self.request.slots.len());
        assert!(counts.iter().all(|&c| c >= 1));
        self.pending_counts = counts;
    }

    /// For [`PendingLayout::EstimatedCount`]: run the count heuristic on
    /// every pending slot (others at one mask) and keep the chosen counts.
    /// The estimate ignores the request mode.
    pub fn estimate_counts<T: Real>(&mut self, model: &Model<T>) -> Result<(), InferenceError> {
        if self.request.layout != PendingLayout::EstimatedCount {
            return Ok(());
        }
        let mode = std::mem::replace(&mut self.request.mode, Mode::Heuristic);
        self.pending_counts = vec![1; self.request.slots.len()];
        let mut counts = vec![1; self.request.slots.len()];
        for s in self.pending() {
            match best_variable(model, self, s) {
                Ok(c) => counts[s] = c.count,
                Err(e) => {
                    self.request.mode = mode;
                    return Err(e);
                }
            }
        }
        self.request.mode = mode;
        self.pending_counts = counts;
        Ok(())
    }

    fn counts(&self, slot: usize) -> Vec<usize> {
        match self.request.mode {
            Mode::Oracle => vec![self.request.slots[slot].count.expect("validated")],
            Mode::Heuristic => (1..=self.request.max_allowed).collect(),
        }
    }
}

/// Probability rows at the given positions, each normalised over the full
/// vocabulary.
fn position_probs<T: Real>(model: &Model<T>, ids: &[u32], rows: &[usize]) -> Result<Vec<Vec<f64>>, InferenceError> {
    if ids.len() > model.config().max_seq {
        return Err(InferenceError::TooLong {
            len: ids.len(),
            max: model.config().max_seq,
        });
    }
    let logits = model.logits(ids, None, Some(rows))?;
    Ok((0..rows.len())
        .map(|r| {
            let mut p: Vec<f64> = logits.row(r).iter().map(|x| x.to_f64()).collect();
            softmax_row(&mut p);
            p
        })
        .collect())
}

fn argmax_ordinary(p: &[f64]) -> usize {
    let mut best = NUM_SPECIAL;
    for (i, &x) in p.iter().enumerate().skip(NUM_SPECIAL) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn candidate(vocab: &BpeVocab, token_ids: Vec<u32>, token_probs: Vec<f64>, occurrence: usize) -> PredictionCandidate {
    let name = vocab.decode(&token_ids).unwrap_or_default().trim().to_string();
    PredictionCandidate {
        name,
        count: token_ids.len(),
        mean_prob: mean(&token_probs),
        token_ids,
        token_probs,
        occurrence,
    }
}

/// Argmax decoding of the mask positions of one occurrence.
pub fn decode_positions(vocab: &BpeVocab, probs: &[Vec<f64>], occurrence: usize) -> PredictionCandidate {
    let ids: Vec<u32> = probs.iter().map(|p| argmax_ordinary(p) as u32).collect();
    let token_probs = probs.iter().zip(&ids).map(|(p, &i)| p[i as usize]).collect();
    candidate(vocab, ids, token_probs, occurrence)
}

/// One forward pass over `ids` whose `mask_positions` hold the masks of a
/// single occurrence.
pub fn predict_fixed_count<T: Real>(
    model: &Model<T>,
    vocab: &BpeVocab,
    ids: &[u32],
    mask_positions: &[usize],
) -> Result<PredictionCandidate, InferenceError> {
    if mask_positions.is_empty() {
        return Err(InferenceError::BadSlot {
            slot: String::new(),
            reason: "no mask positions".into(),
        });
    }
    let probs = position_probs(model, ids, mask_positions)?;
    Ok(decode_positions(vocab, &probs, 0))
}

/// Candidates of every occurrence of `slot` at `count` masks, and their
/// probability rows.
fn score_count<T: Real>(
    model: &Model<T>,
    prep: &Prepared,
    slot: usize,
    count: usize,
) -> Result<Vec<Vec<Vec<f64>>>, InferenceError> {
    let (ids, positions) = prep.layout(slot, count);
    let rows: Vec<usize> = positions.iter().flatten().copied().collect();
    let mut probs = position_probs(model, &ids, &rows)?.into_iter();
    Ok(positions
        .iter()
        .map(|occ| probs.by_ref().take(occ.len()).collect())
        .collect())
}

fn best_occurrence(vocab: &BpeVocab, per_occ: &[Vec<Vec<f64>>]) -> PredictionCandidate {
    let mut best: Option<PredictionCandidate> = None;
    for (o, probs) in per_occ.iter().enumerate() {
        let c = decode_positions(vocab, probs, o);
        if best.as_ref().is_none_or(|b| c.mean_prob > b.mean_prob) {
            best = Some(c);
        }
    }
    best.expect("slot has occurrences")
}

#[derive(PartialEq)]
struct Combo {
    sum: f64,
    idx: Vec<usize>,
}

impl Eq for Combo {}

impl Ord for Combo {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sum
            .total_cmp(&other.sum)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Combo {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` highest-scoring token sequences for one occurrence, combining
/// each position's `k` most probable ordinary tokens.
fn k_best(vocab: &BpeVocab, probs: &[Vec<f64>], k: usize, occurrence: usize) -> Vec<PredictionCandidate> {
    let lists: Vec<Vec<(u32, f64)>> = probs
        .iter()
        .map(|p| {
            let mut idx: Vec<usize> = (NUM_SPECIAL..p.len()).collect();
            idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx.into_iter().map(|i| (i as u32, p[i])).collect()
        })
        .collect();
    if lists.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let score = |idx: &[usize]| idx.iter().zip(&lists).map(|(&i, l)| l[i].1).sum::<f64>();
    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    let start = vec![0; lists.len()];
    seen.insert(start.clone());
    heap.push(Combo {
        sum: score(&start),
        idx: start,
    });
    let mut out = Vec::with_capacity(k);
    while let Some(Combo { idx, .. }) = heap.pop() {
        let ids: Vec<u32> = idx.iter().zip(&lists).map(|(&i, l)| l[i].0).collect();
        let token_probs: Vec<f64> = idx.iter().zip(&lists).map(|(&i, l)| l[i].1).collect();
        out.push(candidate(vocab, ids, token_probs, occurrence));
        if out.len() == k {
            break;
        }
        for p in 0..idx.len() {
            if idx[p] + 1 < lists[p].len() {
                let mut next = idx.clone();
                next[p] += 1;
                if seen.insert(next.clone()) {
                    heap.push(Combo {
                        sum: score(&next),
                        idx: next,
                    });
                }
            }
        }
    }
    out
}

/// Best candidate and the ranked suggestion list of one slot, sharing one
/// forward pass per count.
pub fn rank_slot<T: Real>(
    model: &Model<T>,
    prep: &Prepared,
    slot: usize,
) -> Result<(PredictionCandidate, Vec<PredictionCandidate>), InferenceError> {
    let k = prep.request.k;
    let mut best: Option<PredictionCandidate> = None;
    let mut pool: Vec<PredictionCandidate> = Vec::new();
    let mut last_err = None;
    for count in prep.counts(slot) {
        let per_occ = match score_count(model, prep, slot, count) {
            Ok(p) => p,
            Err(e @ InferenceError::TooLong { .. }) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let c = best_occurrence(prep.vocab, &per_occ);
        if best.as_ref().is_none_or(|b| c.mean_prob > b.mean_prob) {
            best = Some(c);
        }
        for (o, probs) in per_occ.iter().enumerate() {
            pool.extend(k_best(prep.vocab, probs, k, o));
        }
    }
    let Some(best) = best else {
        return Err(last_err.expect("at least one count tried"));
    };
    pool.sort_by(|a, b| b.mean_prob.total_cmp(&a.mean_prob));
    let mut names = HashSet::new();
    pool.retain(|c| names.insert(c.name.clone()));
    pool.truncate(k);
    Ok((best, pool))
}

/// Count-heuristic prediction for one slot of `prep`.
pub fn best_variable<T: Real>(model: &Model<T>, prep: &Prepared, slot: usize) -> Result<PredictionCandidate, InferenceError> {
    let mut best: Option<PredictionCandidate> = None;
    let mut last_err = None;
    for count in prep.counts(slot) {
        match score_count(model, prep, slot, count) {
            Ok(per_occ) => {
                let c = best_occurrence(prep.vocab, &per_occ);
                if best.as_ref().is_none_or(|b| c.mean_prob > b.mean_prob) {
                    best = Some(c);
                }
            }
            Err(e @ InferenceError::TooLong { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one count tried"))
}

/// Ranked suggestions for one slot.
pub fn top_k_suggestions<T: Real>(
    model: &Model<T>,
    prep: &Prepared,
    slot: usize,
) -> Result<Vec<PredictionCandidate>, InferenceError> {
    Ok(rank_slot(model, prep, slot)?.1)
}

/// Suggestions for every slot without an accepted name, in declaration
/// order.
pub fn refine_with_accepted<T: Real>(
    model: &Model<T>,
    vocab: &BpeVocab,
    request: &InferenceRequest,
) -> Result<Vec<SlotSuggestions>, InferenceError> {
    let mut prep = Prepared::new(vocab, request)?;
    prep.estimate_counts(model)?;
    prep.pending()
        .into_iter()
        .map(|s| {
            Ok(SlotSuggestions {
                placeholder: request.slots[s].placeholder.clone(),
                candidates: top_k_suggestions(model, &prep, s)?,
            })
        })
        .collect()
}

/// Predictions for every slot of a canonical function, gold names hidden.
pub fn predict_function<T: Real>(
    model: &Model<T>,
    vocab: &BpeVocab,
    f: &CanonicalFunction,
    mode: Mode,
    max_allowed: usize,
    layout: PendingLayout,
) -> Result<Vec<VariablePrediction>, InferenceError> {
    let mut request = InferenceRequest::from_canonical(vocab, f);
    request.mode = mode;
    request.max_allowed = max_allowed;
    request.layout = layout;
    request.k = DEFAULT_K;
    let mut prep = Prepared::new(vocab, &request)?;
    prep.estimate_counts(model)?;
    predict_prepared(model, vocab, f, &prep)
}

/// Predictions for every slot of `f` through an already prepared request.
pub fn predict_prepared<T: Real>(
    model: &Model<T>,
    vocab: &BpeVocab,
    f: &CanonicalFunction,
    prep: &Prepared,
) -> Result<Vec<VariablePrediction>, InferenceError> {
    f.slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (best, ranked) = rank_slot(model, prep, i)?;
            Ok(VariablePrediction {
                function_id: f.function_id.clone(),
                slot: s.decompiler_name.clone(),
                gold: s.gold_name.clone(),
                gold_tokens: vocab.encode(&s.gold_name).ids,
                predicted: best.name,
                predicted_tokens: best.token_ids,
                mean_prob: best.mean_prob,
                ranked: ranked.into_iter().map(|c| c.name).collect(),
                split: f.split,
                body_in_train: f.body_in_train,
            })
        })
        .collect()
}

/// [`predict_function`] over a list of functions.
pub fn predict_dataset<T: Real>(
    model: &Model<T>,
    vocab: &BpeVocab,
    functions: &[CanonicalFunction],
    mode: Mode,
    max_allowed: usize,
    layout: PendingLayout,
) -> Result<Vec<VariablePrediction>, InferenceError> {
    let mut out = Vec::new();
    for f in functions {
        out.extend(predict_function(model, vocab, f, mode, max_allowed, layout)?);
    }
    Ok(out)
}
