//! Byte-level BPE vocabulary.
//!
//! Ids `0..5` are the special tokens, `5..261` the 256 byte values, and every
//! id after that is produced by a learned merge, in merge order (two merges
//! that spell the same bytes share a token). Text is
//! pre-tokenized into maximal runs of ASCII whitespace and of non-whitespace;
//! merges never cross a pre-token boundary. When slot spans are supplied the
//! pre-tokens are additionally cut at every span edge, so a variable name is
//! always tokenized on its own.

mod files;
mod train;

pub use files::{load_vocab, save_vocab, TOKENS_FILE, MERGES_FILE};
pub use train::{train_bpe, BpeTrainer};

use crate::corpus::Span;
use crate::fingerprint::FieldHasher;
use std::collections::HashMap;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary size {requested} is below the base alphabet of {minimum} tokens")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("vocabulary size {requested} needs {needed} merges but only {max_merges} are allowed")]
    TooManyMergesNeeded {
        requested: usize,
        needed: usize,
        max_merges: usize,
    },
    #[error("corpus too small: only {achievable} tokens are reachable, {requested} requested")]
    CorpusTooSmall { requested: usize, achievable: usize },
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Literal renderings of the special tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"];
pub const BOS: u32 = 0;
pub const PAD: u32 = 1;
pub const EOS: u32 = 2;
/// Reserved; byte-level coverage means it is never produced.
pub const UNK: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();
/// First id of the byte alphabet.
pub const BYTE_BASE: u32 = NUM_SPECIAL as u32;
/// Number of ids that exist before any merge.
pub const BASE_VOCAB: usize = NUM_SPECIAL + 256;

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIAL
}

#[derive(Clone, Debug)]
pub struct BpeVocab {
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    /// Pair -> (priority, produced token).
    ranks: HashMap<(u32, u32), (u32, u32)>,
    max_merges: usize,
    corpus_hash: String,
}

/// Token ids of a text together with the bookkeeping masking needs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    /// Byte range of each token in the source text.
    pub offsets: Vec<(usize, usize)>,
    /// True for the first token of each pre-token (whitespace-delimited word
    /// or whitespace run).
    pub word_starts: Vec<bool>,
    /// Per slot, the token-index range of each occurrence.
    pub slot_token_spans: Vec<Vec<Range<usize>>>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Wrap with BOS/EOS, shifting slot spans by one.
    pub fn framed(&self) -> Encoding {
        let end = self.offsets.last().map_or(0, |o| o.1);
        let mut ids = Vec::with_capacity(self.ids.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(&self.ids);
        ids.push(EOS);
        let mut offsets = Vec::with_capacity(ids.len());
        offsets.push((0, 0));
        offsets.extend_from_slice(&self.offsets);
        offsets.push((end, end));
        let mut word_starts = Vec::with_capacity(ids.len());
        word_starts.push(true);
        word_starts.extend_from_slice(&self.word_starts);
        word_starts.push(true);
        let slot_token_spans = self
            .slot_token_spans
            .iter()
            .map(|spans| spans.iter().map(|r| r.start + 1..r.end + 1).collect())
            .collect();
        Encoding {
            ids,
            offsets,
            word_starts,
            slot_token_spans,
        }
    }

    /// Cut a framed encoding to `max_len` tokens, keeping the final EOS.
    /// Slot occurrences that no longer fit are dropped.
    pub fn truncate_framed(&mut self, max_len: usize) {
        if self.ids.len() <= max_len || max_len < 2 {
            return;
        }
        let keep = max_len - 1;
        let end = self.offsets[keep - 1].1;
        self.ids.truncate(keep);
        self.ids.push(EOS);
        self.offsets.truncate(keep);
        self.offsets.push((end, end));
        self.word_starts.truncate(keep);
        self.word_starts.push(true);
        for spans in &mut self.slot_token_spans {
            spans.retain(|r| r.end <= keep);
        }
    }
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0b' | b'\x0c')
}

/// Maximal runs of whitespace / non-whitespace bytes.
pub(crate) fn pretokenize(bytes: &[u8]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=bytes.len() {
        if i == bytes.len() || is_ws(bytes[i]) != is_ws(bytes[start]) {
            if start < i {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

impl BpeVocab {
    pub(crate) fn from_parts(
        merges: Vec<(u32, u32)>,
        max_merges: usize,
        corpus_hash: String,
    ) -> Result<Self, TokenizerError> {
        let mut tokens: Vec<Vec<u8>> = SPECIAL_TOKENS.iter().map(|s| s.as_bytes().to_vec()).collect();
        tokens.extend((0..=255u8).map(|b| vec![b]));
        let mut by_bytes: HashMap<Vec<u8>, u32> = tokens
            .iter()
            .enumerate()
            .skip(NUM_SPECIAL)
            .map(|(id, t)| (t.clone(), id as u32))
            .collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let next = tokens.len() as u32;
            if a >= next || b >= next || is_special(a) || is_special(b) {
                return Err(TokenizerError::Format(format!(
                    "merge {rank} refers to an unknown or special token"
                )));
            }
            let mut t = tokens[a as usize].clone();
            t.extend_from_slice(&tokens[b as usize]);
            // Two merge paths can spell the same bytes; they share one token.
            let produced = *by_bytes.entry(t.clone()).or_insert_with(|| {
                tokens.push(t);
                next
            });
            if ranks.insert((a, b), (rank as u32, produced)).is_some() {
                return Err(TokenizerError::Format(format!("merge {rank} is repeated")));
            }
        }
        Ok(BpeVocab {
            tokens,
            merges,
            ranks,
            max_merges,
            corpus_hash,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(|t| t.as_slice())
    }

    pub fn tokens(&self) -> &[Vec<u8>] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn max_merges(&self) -> usize {
        self.max_merges
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    /// Fingerprint of the token list and merge order. Checkpoints record it.
    pub fn hash(&self) -> String {
        let mut h = FieldHasher::new();
        h.field(b"bpe-vocab-v1");
        for t in &self.tokens {
            h.field(t);
        }
        for (a, b) in &self.merges {
            h.field(&a.to_le_bytes()).field(&b.to_le_bytes());
        }
        h.finish()
    }

    /// Apply merges in rank order to one pre-token.
    fn encode_piece(&self, piece: &[u8], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = piece.iter().map(|&b| BYTE_BASE + b as u32).collect();
        while ids.len() > 1 {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some(((_, merged), pair)) = best else { break };
            let mut next = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(ids[i]);
                    i += 1;
                }
            }
            ids = next;
        }
        out.extend(ids);
    }

    pub fn encode(&self, text: &str) -> Encoding {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Encoding {
        self.encode_with_slots(bytes, &[])
    }

    /// Encode with token boundaries forced at every slot span edge; the
    /// resulting encoding carries the token range of each occurrence.
    /// Spans must be sorted, non-overlapping and within `bytes`.
    pub fn encode_with_slots(&self, bytes: &[u8], slots: &[Vec<Span>]) -> Encoding {
        let mut cuts: Vec<usize> = slots
            .iter()
            .flatten()
            .flat_map(|s| [s.start, s.end])
            .collect();
        cuts.sort_unstable();
        cuts.dedup();

        let mut enc = Encoding::default();
        let mut cut_iter = cuts.iter().peekable();
        for word in pretokenize(bytes) {
            let mut first = true;
            let mut start = word.start;
            while cut_iter.peek().is_some_and(|&&c| c <= word.start) {
                cut_iter.next();
            }
            loop {
                let end = match cut_iter.peek() {
                    Some(&&c) if c < word.end => {
                        cut_iter.next();
                        c
                    }
                    _ => word.end,
                };
                if end > start {
                    let before = enc.ids.len();
                    self.encode_piece(&bytes[start..end], &mut enc.ids);
                    let mut pos = start;
                    for &id in &enc.ids[before..] {
                        let len = self.tokens[id as usize].len();
                        enc.offsets.push((pos, pos + len));
                        enc.word_starts.push(first);
                        first = false;
                        pos += len;
                    }
                }
                start = end;
                if end >= word.end {
                    break;
                }
            }
        }

        enc.slot_token_spans = slots
            .iter()
            .map(|spans| {
                spans
                    .iter()
                    .map(|s| {
                        let lo = enc.offsets.partition_point(|o| o.0 < s.start);
                        let hi = enc.offsets.partition_point(|o| o.0 < s.end);
                        lo..hi
                    })
                    .collect()
            })
            .collect();
        enc
    }

    /// Concatenated bytes of the given tokens.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            let t = self.tokens.get(id as usize).ok_or(TokenizerError::IdOutOfRange {
                id,
                size: self.tokens.len(),
            })?;
            out.extend_from_slice(t);
        }
        Ok(out)
    }

    /// Decode to text; invalid UTF-8 (possible for arbitrary id sequences) is
    /// replaced lossily.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// Number of tokens `name` occupies when encoded on its own.
    pub fn name_token_count(&self, name: &str) -> usize {
        self.encode(name).len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> BpeVocab {
        train_bpe(&"count count counter tokenIndex = count;\n".repeat(3), 261 + 8, 100).unwrap()
    }

    #[test]
    fn pretokenize_alternates_runs() {
        let r = pretokenize(b"ab  c\n");
        assert_eq!(r, vec![0..2, 2..4, 4..5, 5..6]);
        assert!(pretokenize(b"").is_empty());
    }

    #[test]
    fn empty_text_encodes_to_nothing() {
        let v = vocab();
        assert!(v.encode("").is_empty());
        assert_eq!(v.decode(&[]).unwrap(), "");
    }

    #[test]
    fn known_word_is_one_token() {
        let v = vocab();
        let e = v.encode("count");
        assert_eq!(e.ids.len(), 1);
        assert_eq!(e.word_starts, vec![true]);
    }

    #[test]
    fn unseen_identifier_round_trips() {
        let v = vocab();
        let e = v.encode("tokenCount");
        assert!(e.ids.len() > 1);
        assert_eq!(v.decode(&e.ids).unwrap(), "tokenCount");
    }

    #[test]
    fn mask_decodes_to_sentinel() {
        let v = vocab();
        assert_eq!(v.decode(&[MASK]).unwrap(), "<mask>");
        assert!(matches!(
            v.decode(&[v.size() as u32]),
            Err(TokenizerError::IdOutOfRange { .. })
        ));
    }

    #[test]
    fn slot_edges_force_boundaries() {
        let v = train_bpe("count; count; count; count;", 261 + 5, 100).unwrap();
        // Without slots "count;" is a single learned token.
        assert_eq!(v.encode("count;").ids.len(), 1);
        let e = v.encode_with_slots(b"x count;", &[vec![Span::new(2, 7)]]);
        let r = &e.slot_token_spans[0][0];
        assert_eq!(v.decode(&e.ids[r.clone()]).unwrap(), "count");
        assert_eq!(v.decode(&e.ids).unwrap(), "x count;");
        // The slot starts a word; the trailing ';' does not.
        assert!(e.word_starts[r.start]);
        assert!(!e.word_starts[r.end]);
    }

    #[test]
    fn framing_and_truncation_keep_eos() {
        let v = vocab();
        let mut e = v
            .encode_with_slots(b"count = count", &[vec![Span::new(0, 5), Span::new(8, 13)]])
            .framed();
        assert_eq!(e.ids[0], BOS);
        assert_eq!(*e.ids.last().unwrap(), EOS);
        assert_eq!(e.slot_token_spans[0][0], 1..2);
        e.truncate_framed(4);
        assert_eq!(e.ids.len(), 4);
        assert_eq!(*e.ids.last().unwrap(), EOS);
        assert_eq!(e.slot_token_spans[0].len(), 1);
    }
}
