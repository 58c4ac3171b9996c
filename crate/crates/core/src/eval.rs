//! Metrics and reports: exact match at ranks 1/3/5/10, character error rate,
//! masked-token perplexity, and per-split tables (Overall, Body-in-train,
//! Body-not-in-train).

use crate::corpus::Split;
use crate::inference::Mode;
use crate::model::{Model, ModelError};
use crate::numeric::{log_softmax_row, Real};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold name is empty")]
    EmptyGold,
    #[error("no masked targets to score")]
    NoTargets,
    #[error("functions without a body_in_train tag: {}", .0.join(", "))]
    MissingTags(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ranks reported in every table.
pub const RANKS: [usize; 4] = [1, 3, 5, 10];

/// Case-sensitive equality after trimming whitespace at the slot edges.
pub fn exact_match(pred: &str, gold: &str) -> bool {
    pred.trim() == gold.trim()
}

/// Whether `gold` is among the first `k` names.
pub fn top_k_accuracy(ranked: &[String], gold: &str, k: usize) -> bool {
    ranked.iter().take(k).any(|r| exact_match(r, gold))
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the gold length in characters; can exceed 1.
pub fn cer(pred: &str, gold: &str) -> Result<f64, EvalError> {
    let n = gold.chars().count();
    if n == 0 {
        return Err(EvalError::EmptyGold);
    }
    Ok(levenshtein(pred, gold) as f64 / n as f64)
}

/// `exp` of the mean natural-log cross-entropy over all targets of all
/// instances, model in evaluation mode.
pub fn perplexity<T: Real>(model: &Model<T>, instances: &[(Vec<u32>, Vec<(usize, u32)>)]) -> Result<f64, EvalError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ids, targets) in instances {
        if targets.is_empty() {
            continue;
        }
        let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let logits = model.logits(ids, None, Some(&rows))?;
        for (r, &(_, id)) in targets.iter().enumerate() {
            let lp = log_softmax_row(logits.row(r));
            let v = lp
                .get(id as usize)
                .ok_or(ModelError::IdOutOfRange {
                    id,
                    vocab: lp.len(),
                })?;
            total -= v.to_f64();
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::NoTargets);
    }
    Ok((total / count as f64).exp())
}

/// What the system predicted for one variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariablePrediction {
    pub function_id: String,
    /// Decompiler placeholder of the slot.
    pub slot: String,
    pub gold: String,
    pub gold_tokens: Vec<u32>,
    /// Top-1 name and its tokens.
    pub predicted: String,
    pub predicted_tokens: Vec<u32>,
    pub mean_prob: f64,
    /// Deduplicated suggestions, best first; `ranked[0] == predicted`.
    pub ranked: Vec<String>,
    pub split: Split,
    pub body_in_train: Option<bool>,
}

impl VariablePrediction {
    pub fn true_count(&self) -> usize {
        self.gold_tokens.len()
    }

    pub fn correct(&self) -> bool {
        exact_match(&self.predicted, &self.gold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    /// Predicted with a different number of tokens than the gold name has.
    WrongCount,
    /// Right count, some but not all tokens right.
    PartialToken,
    /// At most two character edits away.
    OffByFewChars,
    Other,
}

/// Taxonomy label of a wrong prediction, checked in declaration order.
pub fn classify_error(p: &VariablePrediction) -> Option<ErrorKind> {
    if p.correct() {
        return None;
    }
    if p.predicted_tokens.len() != p.gold_tokens.len() {
        return Some(ErrorKind::WrongCount);
    }
    if p.predicted_tokens.iter().zip(&p.gold_tokens).any(|(a, b)| a == b) {
        return Some(ErrorKind::PartialToken);
    }
    if levenshtein(p.predicted.trim(), p.gold.trim()) <= 2 {
        return Some(ErrorKind::OffByFewChars);
    }
    Some(ErrorKind::Other)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub variables: usize,
    pub functions: usize,
    /// Percentages at [`RANKS`]; `None` for an empty row.
    pub top_k: Vec<(usize, Option<f64>)>,
    /// Mean CER of the top-1 prediction, in percent.
    pub cer: Option<f64>,
    pub perplexity: Option<f64>,
}

impl ReportRow {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.top_k.iter().find(|r| r.0 == k).and_then(|r| r.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub tokens: usize,
    pub variables: usize,
    pub top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub function_id: String,
    pub slot: String,
    pub gold: String,
    pub predicted: String,
    pub kind: ErrorKind,
}

/// Provenance and settings echoed into every report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset_hash: String,
    pub checkpoint_hash: String,
    pub max_allowed: usize,
    /// Perplexity per row name, when measured.
    pub perplexity: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub max_allowed: usize,
    pub dataset_hash: String,
    pub checkpoint_hash: String,
    pub rows: Vec<ReportRow>,
    /// Top-1 accuracy by gold token length.
    pub by_length: Vec<LengthRow>,
    pub error_counts: BTreeMap<ErrorKind, usize>,
    pub errors: Vec<ErrorEntry>,
}

pub const ROW_OVERALL: &str = "Overall";
pub const ROW_BODY_IN: &str = "Body-in-train";
pub const ROW_BODY_NOT_IN: &str = "Body-not-in-train";

fn row(name: &str, preds: &[&VariablePrediction], meta: &ReportMeta) -> ReportRow {
    let n = preds.len();
    let pct = |hits: usize| (n > 0).then(|| 100.0 * hits as f64 / n as f64);
    let top_k = RANKS
        .iter()
        .map(|&k| (k, pct(preds.iter().filter(|p| top_k_accuracy(&p.ranked, &p.gold, k)).count())))
        .collect();
    let cer_sum: f64 = preds
        .iter()
        .map(|p| cer(p.predicted.trim(), p.gold.trim()).unwrap_or(0.0))
        .sum();
    let functions: BTreeSet<&str> = preds.iter().map(|p| p.function_id.as_str()).collect();
    ReportRow {
        name: name.to_string(),
        variables: n,
        functions: functions.len(),
        top_k,
        cer: (n > 0).then(|| 100.0 * cer_sum / n as f64),
        perplexity: meta.perplexity.get(name).copied(),
    }
}

/// Aggregate per-variable predictions. Every prediction must carry a
/// body-in-train tag.
pub fn build_report(preds: &[VariablePrediction], mode: Mode, meta: &ReportMeta) -> Result<EvalReport, EvalError> {
    let missing: BTreeSet<String> = preds
        .iter()
        .filter(|p| p.body_in_train.is_none())
        .map(|p| p.function_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingTags(missing.into_iter().collect()));
    }
    if preds.iter().any(|p| p.gold.trim().is_empty()) {
        return Err(EvalError::EmptyGold);
    }
    let all: Vec<&VariablePrediction> = preds.iter().collect();
    let (inside, outside): (Vec<&VariablePrediction>, Vec<&VariablePrediction>) =
        all.iter().partition(|p| p.body_in_train == Some(true));
    let rows = vec![
        row(ROW_OVERALL, &all, meta),
        row(ROW_BODY_IN, &inside, meta),
        row(ROW_BODY_NOT_IN, &outside, meta),
    ];

    let mut lengths: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for p in preds {
        let e = lengths.entry(p.true_count()).or_default();
        e.0 += 1;
        e.1 += usize::from(p.correct());
    }
    let by_length = lengths
        .into_iter()
        .map(|(tokens, (variables, hits))| LengthRow {
            tokens,
            variables,
            top1: 100.0 * hits as f64 / variables as f64,
        })
        .collect();

    let mut error_counts = BTreeMap::new();
    let mut errors = Vec::new();
    for p in preds {
        if let Some(kind) = classify_error(p) {
            *error_counts.entry(kind).or_insert(0) += 1;
            errors.push(ErrorEntry {
                function_id: p.function_id.clone(),
                slot: p.slot.clone(),
                gold: p.gold.clone(),
                predicted: p.predicted.clone(),
                kind,
            });
        }
    }
    Ok(EvalReport {
        mode,
        max_allowed: meta.max_allowed,
        dataset_hash: meta.dataset_hash.clone(),
        checkpoint_hash: meta.checkpoint_hash.clone(),
        rows,
        by_length,
        error_counts,
        errors,
    })
}

fn cell(v: Option<f64>, width: usize) -> String {
    match v {
        Some(v) => format!("{v:>width$.2}"),
        None => format!("{:>width$}", "-"),
    }
}

impl EvalReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Top-1 ≤ Top-3 ≤ Top-5 ≤ Top-10 on every row.
    pub fn top_k_monotone(&self) -> bool {
        self.rows.iter().all(|r| {
            let v: Vec<f64> = r.top_k.iter().filter_map(|x| x.1).collect();
            v.windows(2).all(|w| w[0] <= w[1])
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mode {}  max_allowed {}  dataset {}  checkpoint {}",
            self.mode.name(),
            self.max_allowed,
            short(&self.dataset_hash),
            short(&self.checkpoint_hash)
        );
        let _ = writeln!(
            s,
            "{:<18} {:>6} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8}",
            "Split", "Vars", "Funcs", "Top-1", "Top-3", "Top-5", "Top-10", "CER", "PPL"
        );
        for r in &self.rows {
            let _ = write!(s, "{:<18} {:>6} {:>6}", r.name, r.variables, r.functions);
            for (_, v) in &r.top_k {
                let _ = write!(s, " {}", cell(*v, 7));
            }
            let _ = writeln!(s, " {} {}", cell(r.cer, 7), cell(r.perplexity, 8));
        }
        if !self.by_length.is_empty() {
            let _ = writeln!(s, "\nTop-1 by gold token count");
            for l in &self.by_length {
                let _ = writeln!(s, "  {:>2} tokens  {:>5} vars  {:>7.2}", l.tokens, l.variables, l.top1);
            }
        }
        if !self.error_counts.is_empty() {
            let _ = writeln!(s, "\nErrors");
            for (k, n) in &self.error_counts {
                let _ = writeln!(s, "  {:<16} {n}", serde_json::to_value(k).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
            }
        }
        s
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}
