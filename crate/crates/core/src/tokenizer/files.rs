//! On-disk vocabulary: `tokens.txt` (one token per line, line order = id)
//! and `merges.txt` (one pair per line, line order = priority). Both start
//! with a one-line `#` header. Byte tokens are rendered with the printable
//! byte-to-character table used by byte-level BPE tokenizers, so no token
//! contains whitespace or a newline.

use super::{BpeVocab, TokenizerError, NUM_SPECIAL, SPECIAL_TOKENS};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const TOKENS_FILE: &str = "tokens.txt";
pub const MERGES_FILE: &str = "merges.txt";
const MAGIC: &str = "#bpe-vocab v1";

fn byte_to_char_table() -> [char; 256] {
    let mut printable: Vec<u8> = (b'!'..=b'~').collect();
    printable.extend(0xA1u8..=0xAC);
    printable.extend(0xAEu8..=0xFF);
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        table[b as usize] = if printable.contains(&b) {
            char::from(b)
        } else {
            let c = char::from_u32(256 + extra).expect("valid scalar");
            extra += 1;
            c
        };
    }
    table
}

fn render(bytes: &[u8], table: &[char; 256]) -> String {
    bytes.iter().map(|&b| table[b as usize]).collect()
}

fn parse_rendered(s: &str, inverse: &HashMap<char, u8>) -> Result<Vec<u8>, TokenizerError> {
    s.chars()
        .map(|c| {
            inverse
                .get(&c)
                .copied()
                .ok_or_else(|| TokenizerError::Format(format!("unexpected character {c:?}")))
        })
        .collect()
}

fn header(v: &BpeVocab) -> String {
    format!(
        "{MAGIC} vocab_size={} max_merges={} corpus_hash={} specials={}",
        v.size(),
        v.max_merges(),
        v.corpus_hash(),
        SPECIAL_TOKENS.join(",")
    )
}

pub fn save_vocab(v: &BpeVocab, dir: &Path) -> Result<(), TokenizerError> {
    std::fs::create_dir_all(dir)?;
    let table = byte_to_char_table();
    let mut tokens = header(v);
    tokens.push('\n');
    for (id, t) in v.tokens().iter().enumerate() {
        if id < NUM_SPECIAL {
            tokens.push_str(SPECIAL_TOKENS[id]);
        } else {
            tokens.push_str(&render(t, &table));
        }
        tokens.push('\n');
    }
    let mut merges = header(v);
    merges.push('\n');
    for &(a, b) in v.merges() {
        let _ = writeln!(
            merges,
            "{} {}",
            render(&v.tokens()[a as usize], &table),
            render(&v.tokens()[b as usize], &table)
        );
    }
    std::fs::write(dir.join(TOKENS_FILE), tokens)?;
    std::fs::write(dir.join(MERGES_FILE), merges)?;
    Ok(())
}

fn parse_header(line: &str) -> Result<HashMap<String, String>, TokenizerError> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| TokenizerError::Format("missing header".into()))?;
    Ok(rest
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

pub fn load_vocab(dir: &Path) -> Result<BpeVocab, TokenizerError> {
    let tokens_text = std::fs::read_to_string(dir.join(TOKENS_FILE))?;
    let merges_text = std::fs::read_to_string(dir.join(MERGES_FILE))?;
    let mut token_lines = tokens_text.lines();
    let head = parse_header(token_lines.next().unwrap_or_default())?;
    let field = |k: &str| {
        head.get(k)
            .cloned()
            .ok_or_else(|| TokenizerError::Format(format!("header lacks `{k}`")))
    };
    let vocab_size: usize = field("vocab_size")?
        .parse()
        .map_err(|_| TokenizerError::Format("bad vocab_size".into()))?;
    let max_merges: usize = field("max_merges")?
        .parse()
        .map_err(|_| TokenizerError::Format("bad max_merges".into()))?;
    let corpus_hash = field("corpus_hash")?;
    if field("specials")? != SPECIAL_TOKENS.join(",") {
        return Err(TokenizerError::Format("special token set differs".into()));
    }

    let table = byte_to_char_table();
    let inverse: HashMap<char, u8> = table.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
    let token_list: Vec<&str> = token_lines.collect();
    if token_list.len() != vocab_size {
        return Err(TokenizerError::Format(format!(
            "header says {vocab_size} tokens, file has {}",
            token_list.len()
        )));
    }
    let mut by_bytes: HashMap<Vec<u8>, u32> = HashMap::new();
    for (id, line) in token_list.iter().enumerate().skip(NUM_SPECIAL) {
        by_bytes.entry(parse_rendered(line, &inverse)?).or_insert(id as u32);
    }

    let mut merges = Vec::new();
    for line in merges_text.lines().skip(1) {
        let (a, b) = line
            .split_once(' ')
            .ok_or_else(|| TokenizerError::Format(format!("bad merge line `{line}`")))?;
        let lookup = |s: &str| -> Result<u32, TokenizerError> {
            by_bytes
                .get(&parse_rendered(s, &inverse)?)
                .copied()
                .ok_or_else(|| TokenizerError::Format(format!("merge refers to unknown token `{s}`")))
        };
        merges.push((lookup(a)?, lookup(b)?));
    }
    let vocab = BpeVocab::from_parts(merges, max_merges, corpus_hash)?;
    if vocab.size() != vocab_size {
        return Err(TokenizerError::Format("merges do not produce the declared vocab size".into()));
    }
    for (id, line) in token_list.iter().enumerate().skip(NUM_SPECIAL) {
        if parse_rendered(line, &inverse)? != vocab.tokens()[id] {
            return Err(TokenizerError::Format(format!("token {id} disagrees with merges")));
        }
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{train_bpe, BASE_VOCAB};

    #[test]
    fn table_is_a_bijection_without_whitespace() {
        let t = byte_to_char_table();
        let set: std::collections::HashSet<char> = t.iter().copied().collect();
        assert_eq!(set.len(), 256);
        assert!(t.iter().all(|c| !c.is_whitespace()));
    }

    #[test]
    fn save_load_preserves_vocab() {
        let v = train_bpe(&"int count = 0;\n  count += 1;\n\tcount--; é é ".repeat(2), BASE_VOCAB + 12, 40).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_vocab(&v, dir.path()).unwrap();
        let back = load_vocab(dir.path()).unwrap();
        assert_eq!(back.hash(), v.hash());
        assert_eq!(back.corpus_hash(), v.corpus_hash());
        assert_eq!(back.max_merges(), 40);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let v = train_bpe("abab abab abab", BASE_VOCAB + 2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_vocab(&v, dir.path()).unwrap();
        let p = dir.path().join(TOKENS_FILE);
        let text = std::fs::read_to_string(&p).unwrap();
        let cut: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
        std::fs::write(&p, cut.join("\n")).unwrap();
        assert!(load_vocab(dir.path()).is_err());
    }
}
