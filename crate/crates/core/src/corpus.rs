//! Decompiled-function datasets.
//!
//! Input is line-delimited JSON, one function per line:
//!
//! ```text
//! {"id": "...", "code": "...", "vars": [{"dec_name": "v1", "gold_name": "count",
//!   "spans": [[4, 6], [8, 10]]}], "split": "train", "body_in_train": true}
//! ```
//!
//! Spans are byte offsets into `code`. `split` and `body_in_train` are
//! optional; a missing split is assigned from a hash of the function id.

use crate::fingerprint::sha256_hex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("function {function}: variable `{slot}` has an empty gold name")]
    EmptyGoldName { function: String, slot: String },
    #[error("function {function}: variable `{slot}` has no occurrences")]
    NoOccurrences { function: String, slot: String },
    #[error("function {function}: span [{start}, {end}) of `{slot}` is out of bounds or not on a character boundary")]
    BadSpan {
        function: String,
        slot: String,
        start: usize,
        end: usize,
    },
    #[error("function {function}: spans overlap or are unsorted near offset {offset}")]
    OverlappingSpans { function: String, offset: usize },
    #[error("function {function}: placeholder `{slot}` declared twice")]
    DuplicatePlaceholder { function: String, slot: String },
    #[error("function {function}: occurrence of `{slot}` at offset {offset} is not declared by a span")]
    UndeclaredOccurrence {
        function: String,
        slot: String,
        offset: usize,
    },
    #[error("function {function}: span of `{slot}` at offset {offset} reads `{found}`")]
    SpanDrift {
        function: String,
        slot: String,
        offset: usize,
        found: String,
    },
    #[error("duplicate function id `{0}`")]
    DuplicateId(String),
}

/// Half-open byte range `[start, end)`. Serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(alias = "valid", alias = "dev")]
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    /// 80/10/10 assignment from the id hash, for records without a split.
    pub fn from_id_hash(id: &str) -> Split {
        let digest = sha256_hex(id.as_bytes());
        let bucket = u64::from_str_radix(&digest[..8], 16).unwrap_or(0) % 10;
        match bucket {
            0..=7 => Split::Train,
            8 => Split::Validation,
            _ => Split::Test,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSlot {
    #[serde(rename = "dec_name")]
    pub decompiler_name: String,
    pub gold_name: String,
    #[serde(rename = "spans")]
    pub occurrences: Vec<Span>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompiledFunction {
    #[serde(rename = "id")]
    pub function_id: String,
    #[serde(rename = "code")]
    pub raw_code: String,
    #[serde(rename = "vars", default)]
    pub variables: Vec<VariableSlot>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_in_train: Option<bool>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    code: String,
    #[serde(default)]
    vars: Vec<VariableSlot>,
    #[serde(default)]
    split: Option<Split>,
    #[serde(default)]
    body_in_train: Option<bool>,
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Identifier-bounded occurrences of `name` in `text`.
pub fn identifier_occurrences(text: &str, name: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    if name.is_empty() {
        return found;
    }
    let mut from = 0;
    while let Some(rel) = text[from..].find(name) {
        let start = from + rel;
        let end = start + name.len();
        let before_ok = start == 0 || !is_ident_byte(bytes[start - 1]);
        let after_ok = end == bytes.len() || !is_ident_byte(bytes[end]);
        if before_ok && after_ok {
            found.push(start);
        }
        from = start + 1;
        while !text.is_char_boundary(from) {
            from += 1;
        }
    }
    found
}

impl DecompiledFunction {
    /// Check the structural invariants of the record. Span contents are
    /// checked by [`canonicalize`] (span drift).
    pub fn validate(&self) -> Result<(), CorpusError> {
        let function = || self.function_id.clone();
        let code = &self.raw_code;
        let mut seen = HashSet::new();
        let mut all: Vec<Span> = Vec::new();
        for slot in &self.variables {
            let name = || slot.decompiler_name.clone();
            if !seen.insert(slot.decompiler_name.as_str()) {
                return Err(CorpusError::DuplicatePlaceholder {
                    function: function(),
                    slot: name(),
                });
            }
            if slot.gold_name.is_empty() {
                return Err(CorpusError::EmptyGoldName {
                    function: function(),
                    slot: name(),
                });
            }
            if slot.occurrences.is_empty() {
                return Err(CorpusError::NoOccurrences {
                    function: function(),
                    slot: name(),
                });
            }
            for s in &slot.occurrences {
                if s.start >= s.end
                    || s.end > code.len()
                    || !code.is_char_boundary(s.start)
                    || !code.is_char_boundary(s.end)
                {
                    return Err(CorpusError::BadSpan {
                        function: function(),
                        slot: name(),
                        start: s.start,
                        end: s.end,
                    });
                }
            }
            if slot.occurrences.windows(2).any(|w| w[0].end > w[1].start) {
                return Err(CorpusError::OverlappingSpans {
                    function: function(),
                    offset: slot.occurrences[0].start,
                });
            }
            all.extend(slot.occurrences.iter().copied());
        }
        all.sort();
        if let Some(w) = all.windows(2).find(|w| w[0].end > w[1].start) {
            return Err(CorpusError::OverlappingSpans {
                function: function(),
                offset: w[1].start,
            });
        }
        for slot in &self.variables {
            let declared: HashSet<usize> = slot.occurrences.iter().map(|s| s.start).collect();
            for offset in identifier_occurrences(code, &slot.decompiler_name) {
                if !declared.contains(&offset) {
                    return Err(CorpusError::UndeclaredOccurrence {
                        function: function(),
                        slot: slot.decompiler_name.clone(),
                        offset,
                    });
                }
            }
        }
        Ok(())
    }

    /// Total number of slot occurrences.
    pub fn occurrence_count(&self) -> usize {
        self.variables.iter().map(|v| v.occurrences.len()).sum()
    }

    /// Hash of the whitespace-normalized body with every slot occurrence
    /// replaced by a positional placeholder.
    pub fn body_hash(&self) -> String {
        let spans: Vec<Vec<Span>> = self
            .variables
            .iter()
            .map(|v| v.occurrences.clone())
            .collect();
        anonymized_body_hash(&self.raw_code, &spans)
    }
}

/// A per-line problem found while parsing a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct ParsedDataset {
    pub functions: Vec<DecompiledFunction>,
    pub errors: Vec<LineError>,
}

impl ParsedDataset {
    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for f in &self.functions {
            *counts.entry(f.split).or_default() += 1;
        }
        counts
    }
}

/// Parse a line-delimited record stream. Malformed or invalid lines are
/// collected into `errors` (1-based line numbers) and skipped; blank lines
/// are ignored.
pub fn parse_dataset<R: BufRead>(reader: R) -> std::io::Result<ParsedDataset> {
    let mut out = ParsedDataset::default();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(f) => {
                if !ids.insert(f.function_id.clone()) {
                    out.errors.push(LineError {
                        line: lineno,
                        message: CorpusError::DuplicateId(f.function_id).to_string(),
                    });
                } else {
                    out.functions.push(f);
                }
            }
            Err(e) => out.errors.push(LineError {
                line: lineno,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Parse and validate a single record.
pub fn parse_record(line: &str) -> Result<DecompiledFunction, CorpusError> {
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let split = raw.split.unwrap_or_else(|| Split::from_id_hash(&raw.id));
    let mut variables = raw.vars;
    for v in &mut variables {
        v.occurrences.sort();
    }
    let f = DecompiledFunction {
        function_id: raw.id,
        raw_code: raw.code,
        variables,
        split,
        body_in_train: raw.body_in_train,
    };
    f.validate()?;
    Ok(f)
}

/// Serialize functions back to the line-delimited record format.
pub fn write_dataset<W: std::io::Write>(
    mut w: W,
    functions: &[DecompiledFunction],
) -> std::io::Result<()> {
    for f in functions {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSlot {
    pub decompiler_name: String,
    pub gold_name: String,
    /// Occurrence spans in the canonical text, sorted.
    pub spans: Vec<Span>,
}

/// A function with every decompiler placeholder replaced by its gold name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalFunction {
    pub function_id: String,
    pub text: String,
    pub slots: Vec<CanonicalSlot>,
    pub split: Split,
    pub body_in_train: Option<bool>,
}

impl CanonicalFunction {
    pub fn slot_spans(&self) -> Vec<Vec<Span>> {
        self.slots.iter().map(|s| s.spans.clone()).collect()
    }

    /// Substitute decompiler names back into the canonical text.
    pub fn decanonicalize(&self) -> String {
        let mut occ: Vec<(Span, &str)> = self
            .slots
            .iter()
            .flat_map(|s| s.spans.iter().map(move |sp| (*sp, s.decompiler_name.as_str())))
            .collect();
        occ.sort_by_key(|(sp, _)| sp.start);
        let mut out = String::with_capacity(self.text.len());
        let mut pos = 0;
        for (sp, name) in occ {
            out.push_str(&self.text[pos..sp.start]);
            out.push_str(name);
            pos = sp.end;
        }
        out.push_str(&self.text[pos..]);
        out
    }

    pub fn body_hash(&self) -> String {
        anonymized_body_hash(&self.text, &self.slot_spans())
    }

    pub fn occurrence_count(&self) -> usize {
        self.slots.iter().map(|s| s.spans.len()).sum()
    }
}

/// Replace every decompiler placeholder occurrence with its gold name.
pub fn canonicalize(f: &DecompiledFunction) -> Result<CanonicalFunction, CorpusError> {
    let mut occ: Vec<(Span, usize)> = f
        .variables
        .iter()
        .enumerate()
        .flat_map(|(i, v)| v.occurrences.iter().map(move |s| (*s, i)))
        .collect();
    occ.sort_by_key(|(s, _)| s.start);

    let mut text = String::with_capacity(f.raw_code.len());
    let mut spans: Vec<Vec<Span>> = vec![Vec::new(); f.variables.len()];
    let mut pos = 0;
    for (span, slot) in occ {
        let var = &f.variables[slot];
        let found = f.raw_code.get(span.start..span.end).unwrap_or("");
        if found != var.decompiler_name {
            return Err(CorpusError::SpanDrift {
                function: f.function_id.clone(),
                slot: var.decompiler_name.clone(),
                offset: span.start,
                found: found.to_string(),
            });
        }
        text.push_str(&f.raw_code[pos..span.start]);
        let start = text.len();
        text.push_str(&var.gold_name);
        spans[slot].push(Span::new(start, text.len()));
        pos = span.end;
    }
    text.push_str(&f.raw_code[pos..]);

    Ok(CanonicalFunction {
        function_id: f.function_id.clone(),
        text,
        slots: f
            .variables
            .iter()
            .zip(spans)
            .map(|(v, spans)| CanonicalSlot {
                decompiler_name: v.decompiler_name.clone(),
                gold_name: v.gold_name.clone(),
                spans,
            })
            .collect(),
        split: f.split,
        body_in_train: f.body_in_train,
    })
}

/// Body with slot occurrences replaced by `VAR0`, `VAR1`, ... in order of
/// first occurrence, whitespace collapsed to single spaces.
pub fn anonymized_body(text: &str, slot_spans: &[Vec<Span>]) -> String {
    let mut occ: Vec<(Span, usize)> = slot_spans
        .iter()
        .enumerate()
        .flat_map(|(i, spans)| spans.iter().map(move |s| (*s, i)))
        .collect();
    occ.sort_by_key(|(s, _)| s.start);
    let mut order: HashMap<usize, usize> = HashMap::new();
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for (span, slot) in occ {
        out.push_str(&text[pos..span.start]);
        let next = order.len();
        let k = *order.entry(slot).or_insert(next);
        out.push_str(&format!(" VAR{k} "));
        pos = span.end;
    }
    out.push_str(&text[pos..]);
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn anonymized_body_hash(text: &str, slot_spans: &[Vec<Span>]) -> String {
    sha256_hex(anonymized_body(text, slot_spans).as_bytes())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TagSummary {
    /// Functions whose tag came from the dataset.
    pub preexisting: usize,
    /// Functions tagged by body-hash recomputation.
    pub recomputed: usize,
    pub tagged_true: usize,
}

/// Set `body_in_train` on evaluation functions that lack it: true iff the
/// anonymized body also occurs in the training set. Tags already present in
/// the dataset are kept.
pub fn tag_body_in_train(train: &[CanonicalFunction], eval: &mut [DecompiledFunction]) -> TagSummary {
    let hashes: HashSet<String> = train.iter().map(|f| f.body_hash()).collect();
    let mut summary = TagSummary::default();
    for f in eval.iter_mut() {
        match f.body_in_train {
            Some(_) => summary.preexisting += 1,
            None => {
                f.body_in_train = Some(hashes.contains(&f.body_hash()));
                summary.recomputed += 1;
            }
        }
        if f.body_in_train == Some(true) {
            summary.tagged_true += 1;
        }
    }
    summary
}

/// Canonicalize a parsed dataset and tag evaluation functions. Training
/// functions are always `body_in_train = true`.
pub fn prepare(
    mut functions: Vec<DecompiledFunction>,
) -> Result<(Vec<CanonicalFunction>, TagSummary), CorpusError> {
    let train: Vec<CanonicalFunction> = functions
        .iter()
        .filter(|f| f.split == Split::Train)
        .map(canonicalize)
        .collect::<Result<_, _>>()?;
    let mut eval: Vec<DecompiledFunction> = Vec::new();
    let mut order = Vec::with_capacity(functions.len());
    for f in functions.drain(..) {
        if f.split == Split::Train {
            order.push(None);
        } else {
            order.push(Some(eval.len()));
            eval.push(f);
        }
    }
    let summary = tag_body_in_train(&train, &mut eval);
    let eval: Vec<CanonicalFunction> = eval.iter().map(canonicalize).collect::<Result<_, _>>()?;
    let mut train_iter = train.into_iter();
    let mut eval_slots: Vec<Option<CanonicalFunction>> = eval.into_iter().map(Some).collect();
    let out = order
        .into_iter()
        .map(|slot| match slot {
            None => {
                let mut f = train_iter.next().expect("train count matches");
                f.body_in_train = Some(true);
                f
            }
            Some(i) => eval_slots[i].take().expect("each eval function used once"),
        })
        .collect();
    Ok((out, summary))
}

/// One entry of the sidecar index written next to the concatenated corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusIndexEntry {
    pub id: String,
    pub split: Split,
    /// Byte range of the function in the corpus text.
    pub start: usize,
    pub end: usize,
    pub body_in_train: Option<bool>,
    /// Slot spans relative to `start`.
    pub slots: Vec<CanonicalSlot>,
}

/// Concatenate canonical functions separated by a single newline.
pub fn build_corpus_text(functions: &[CanonicalFunction]) -> (String, Vec<CorpusIndexEntry>) {
    let mut text = String::new();
    let mut index = Vec::with_capacity(functions.len());
    for (i, f) in functions.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        let start = text.len();
        text.push_str(&f.text);
        index.push(CorpusIndexEntry {
            id: f.function_id.clone(),
            split: f.split,
            start,
            end: text.len(),
            body_in_train: f.body_in_train,
            slots: f.slots.clone(),
        });
    }
    (text, index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn func(code: &str, vars: &[(&str, &str)]) -> DecompiledFunction {
        let variables = vars
            .iter()
            .map(|(dec, gold)| VariableSlot {
                decompiler_name: dec.to_string(),
                gold_name: gold.to_string(),
                occurrences: identifier_occurrences(code, dec)
                    .into_iter()
                    .map(|s| Span::new(s, s + dec.len()))
                    .collect(),
            })
            .collect();
        DecompiledFunction {
            function_id: "f".into(),
            raw_code: code.into(),
            variables,
            split: Split::Train,
            body_in_train: None,
        }
    }

    #[test]
    fn parses_minimal_record() {
        let line = r#"{"id":"a","code":"int v1; v1 = 0;","vars":[{"dec_name":"v1","gold_name":"count","spans":[[4,6],[8,10]]}],"split":"train"}"#;
        let ds = parse_dataset(line.as_bytes()).unwrap();
        assert!(ds.errors.is_empty(), "{:?}", ds.errors);
        assert_eq!(ds.functions.len(), 1);
        assert_eq!(ds.functions[0].variables.len(), 1);
        assert_eq!(ds.functions[0].variables[0].occurrences.len(), 2);
        assert_eq!(ds.split_counts()[&Split::Train], 1);
    }

    #[test]
    fn malformed_lines_are_reported_with_line_numbers() {
        let input = concat!(
            r#"{"id":"a","code":"x","vars":[],"split":"test"}"#,
            "\n",
            "not json\n",
            "\n",
            r#"{"id":"a","code":"y","vars":[],"split":"test"}"#,
            "\n",
            r#"{"id":"b","code":"int v1;","vars":[{"dec_name":"v1","gold_name":"n","spans":[[0,2]]}]}"#,
            "\n",
        );
        let ds = parse_dataset(input.as_bytes()).unwrap();
        assert_eq!(ds.functions.len(), 1);
        let lines: Vec<usize> = ds.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 4, 5]);
        assert!(ds.errors[1].message.contains("duplicate"));
    }

    #[test]
    fn missing_split_is_assigned() {
        let line = r#"{"id":"zz","code":"x","vars":[]}"#;
        let f = parse_record(line).unwrap();
        assert_eq!(f.split, Split::from_id_hash("zz"));
    }

    #[test]
    fn undeclared_placeholder_is_rejected() {
        let line = r#"{"id":"a","code":"int v1; v1 = 0;","vars":[{"dec_name":"v1","gold_name":"count","spans":[[4,6]]}],"split":"train"}"#;
        assert!(matches!(
            parse_record(line),
            Err(CorpusError::UndeclaredOccurrence { offset: 8, .. })
        ));
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let line = r#"{"id":"a","code":"abcdef","vars":[{"dec_name":"abc","gold_name":"x","spans":[[0,3]]},{"dec_name":"cd","gold_name":"y","spans":[[2,4]]}],"split":"train"}"#;
        assert!(matches!(
            parse_record(line),
            Err(CorpusError::OverlappingSpans { .. })
        ));
    }

    #[test]
    fn canonicalize_substitutes_every_occurrence() {
        let f = func("int v1; v1 = 0;", &[("v1", "count")]);
        let c = canonicalize(&f).unwrap();
        assert_eq!(c.text, "int count; count = 0;");
        assert_eq!(c.slots[0].spans, vec![Span::new(4, 9), Span::new(11, 16)]);
        for s in &c.slots[0].spans {
            assert_eq!(&c.text[s.start..s.end], "count");
        }
        assert_eq!(c.decanonicalize(), f.raw_code);
    }

    #[test]
    fn canonicalize_without_variables_is_identity() {
        let f = func("return 0;", &[]);
        let c = canonicalize(&f).unwrap();
        assert_eq!(c.text, "return 0;");
        assert!(c.slots.is_empty());
    }

    #[test]
    fn canonicalize_shifts_later_spans() {
        let f = func("v1 < v2", &[("v1", "i"), ("v2", "n")]);
        let c = canonicalize(&f).unwrap();
        assert_eq!(c.text, "i < n");
        // Oracle: rescan the output for each gold name.
        for slot in &c.slots {
            let expect: Vec<Span> = identifier_occurrences(&c.text, &slot.gold_name)
                .into_iter()
                .map(|s| Span::new(s, s + slot.gold_name.len()))
                .collect();
            assert_eq!(slot.spans, expect);
        }
    }

    #[test]
    fn span_drift_names_slot_and_offset() {
        let mut f = func("int v1; v1 = 0;", &[("v1", "count")]);
        f.raw_code = "int v2; v1 = 0;".into();
        match canonicalize(&f) {
            Err(CorpusError::SpanDrift { slot, offset, .. }) => {
                assert_eq!(slot, "v1");
                assert_eq!(offset, 4);
            }
            other => panic!("expected drift, got {other:?}"),
        }
    }

    #[test]
    fn body_tags_follow_anonymized_hash() {
        let train = canonicalize(&func("int v1; v1 = v2;", &[("v1", "a"), ("v2", "b")])).unwrap();
        let mut renamed = func("int v1; v1 = v2;", &[("v1", "zz"), ("v2", "yy")]);
        renamed.split = Split::Test;
        let mut extra = func("int v1; v1 = v2; v1++;", &[("v1", "a"), ("v2", "b")]);
        extra.split = Split::Test;
        let mut pre = extra.clone();
        pre.body_in_train = Some(true);
        let mut eval = vec![renamed, extra, pre];
        let summary = tag_body_in_train(&[train], &mut eval);
        assert_eq!(eval[0].body_in_train, Some(true));
        assert_eq!(eval[1].body_in_train, Some(false));
        assert_eq!(eval[2].body_in_train, Some(true));
        assert_eq!(summary.preexisting, 1);
        assert_eq!(summary.recomputed, 2);
    }

    #[test]
    fn anonymization_normalizes_whitespace_and_order() {
        let a = anonymized_body("x  =\n y;", &[vec![Span::new(0, 1)], vec![Span::new(6, 7)]]);
        assert_eq!(a, "VAR0 = VAR1 ;");
    }

    #[test]
    fn corpus_text_index_round_trips() {
        let fs = vec![
            canonicalize(&func("int v1;", &[("v1", "n")])).unwrap(),
            canonicalize(&func("v2 = 1;", &[("v2", "count")])).unwrap(),
        ];
        let (text, index) = build_corpus_text(&fs);
        assert_eq!(text, "int n;\ncount = 1;");
        for (entry, f) in index.iter().zip(&fs) {
            assert_eq!(&text[entry.start..entry.end], f.text);
        }
    }

    #[test]
    fn split_strings_parse() {
        assert_eq!("dev".parse::<Split>().unwrap(), Split::Validation);
        assert!("bogus".parse::<Split>().is_err());
    }
}
