use super::{pretokenize, BpeVocab, TokenizerError, BASE_VOCAB, BYTE_BASE};
use crate::fingerprint::sha256_hex;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

type Pair = (u32, u32);

/// BPE vocabulary trainer.
#[derive(Clone, Debug)]
pub struct BpeTrainer {
    pub vocab_size: usize,
    pub max_merges: usize,
    /// Pairs seen fewer times than this are never merged.
    pub min_pair_count: u64,
}

impl BpeTrainer {
    pub fn new(vocab_size: usize, max_merges: usize) -> Self {
        BpeTrainer {
            vocab_size,
            max_merges,
            min_pair_count: 2,
        }
    }

    pub fn train(&self, corpus: &str) -> Result<BpeVocab, TokenizerError> {
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        if self.vocab_size < BASE_VOCAB {
            return Err(TokenizerError::VocabTooSmall {
                requested: self.vocab_size,
                minimum: BASE_VOCAB,
            });
        }
        let needed = self.vocab_size - BASE_VOCAB;
        if needed > self.max_merges {
            return Err(TokenizerError::TooManyMergesNeeded {
                requested: self.vocab_size,
                needed,
                max_merges: self.max_merges,
            });
        }
        let (merges, added) =
            learn_merges(corpus.as_bytes(), needed, self.max_merges, self.min_pair_count);
        if added < needed {
            return Err(TokenizerError::CorpusTooSmall {
                requested: self.vocab_size,
                achievable: BASE_VOCAB + added,
            });
        }
        BpeVocab::from_parts(merges, self.max_merges, sha256_hex(corpus.as_bytes()))
    }
}

/// Train a vocabulary of exactly `vocab_size` tokens.
pub fn train_bpe(corpus: &str, vocab_size: usize, max_merges: usize) -> Result<BpeVocab, TokenizerError> {
    BpeTrainer::new(vocab_size, max_merges).train(corpus)
}

/// Heap entry: highest count first, then lexicographically smallest pair
/// (compared on token bytes).
struct Candidate {
    count: i64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: Pair,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (&other.left, &other.right).cmp(&(&self.left, &self.right)))
    }
}

struct Word {
    symbols: Vec<u32>,
    freq: i64,
}

/// Returns the merge list and the number of distinct tokens it added.
fn learn_merges(corpus: &[u8], needed: usize, max_merges: usize, min_count: u64) -> (Vec<Pair>, usize) {
    let mut word_freq: HashMap<&[u8], i64> = HashMap::new();
    for r in pretokenize(corpus) {
        *word_freq.entry(&corpus[r]).or_default() += 1;
    }
    let mut entries: Vec<(&[u8], i64)> = word_freq.into_iter().collect();
    entries.sort_unstable();
    let mut words: Vec<Word> = entries
        .into_iter()
        .map(|(bytes, freq)| Word {
            symbols: bytes.iter().map(|&b| BYTE_BASE + b as u32).collect(),
            freq,
        })
        .collect();

    let mut token_bytes: Vec<Vec<u8>> = vec![Vec::new(); BYTE_BASE as usize];
    token_bytes.extend((0..=255u8).map(|b| vec![b]));

    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut locations: HashMap<Pair, Vec<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.symbols.windows(2) {
            let pair = (p[0], p[1]);
            *counts.entry(pair).or_default() += w.freq;
            locations.entry(pair).or_default().push(wi);
        }
    }

    let candidate = |pair: Pair, count: i64, tb: &[Vec<u8>]| Candidate {
        count,
        left: tb[pair.0 as usize].clone(),
        right: tb[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = counts
        .iter()
        .map(|(&p, &c)| candidate(p, c, &token_bytes))
        .collect();

    let mut by_bytes: HashMap<Vec<u8>, u32> = token_bytes
        .iter()
        .enumerate()
        .skip(BYTE_BASE as usize)
        .map(|(id, t)| (t.clone(), id as u32))
        .collect();
    let mut merges = Vec::with_capacity(needed);
    let mut added = 0;
    while added < needed && merges.len() < max_merges {
        let Some(top) = heap.pop() else { break };
        if counts.get(&top.pair).copied().unwrap_or(0) != top.count {
            continue;
        }
        if top.count < min_count as i64 {
            break;
        }
        let pair = top.pair;
        let mut merged = top.left;
        merged.extend_from_slice(&top.right);
        let new_id = match by_bytes.get(&merged) {
            Some(&id) => id,
            None => {
                let id = token_bytes.len() as u32;
                by_bytes.insert(merged.clone(), id);
                token_bytes.push(merged);
                added += 1;
                id
            }
        };
        merges.push(pair);

        let mut touched: Vec<usize> = locations.remove(&pair).unwrap_or_default();
        touched.sort_unstable();
        touched.dedup();
        let mut changed: Vec<Pair> = Vec::new();
        for wi in touched {
            let w = &mut words[wi];
            if !w.symbols.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            for p in w.symbols.windows(2) {
                let q = (p[0], p[1]);
                *counts.get_mut(&q).expect("counted") -= w.freq;
                changed.push(q);
            }
            let mut next = Vec::with_capacity(w.symbols.len());
            let mut i = 0;
            while i < w.symbols.len() {
                if i + 1 < w.symbols.len() && (w.symbols[i], w.symbols[i + 1]) == pair {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(w.symbols[i]);
                    i += 1;
                }
            }
            w.symbols = next;
            for p in w.symbols.windows(2) {
                let q = (p[0], p[1]);
                *counts.entry(q).or_default() += w.freq;
                changed.push(q);
                if p[0] == new_id || p[1] == new_id {
                    locations.entry(q).or_default().push(wi);
                }
            }
        }
        counts.remove(&pair);
        changed.sort_unstable();
        changed.dedup();
        for q in changed {
            if q == pair {
                continue;
            }
            match counts.get(&q).copied() {
                Some(c) if c > 0 => heap.push(candidate(q, c, &token_bytes)),
                Some(_) => {
                    counts.remove(&q);
                }
                None => {}
            }
        }
    }
    (merges, added)
}
