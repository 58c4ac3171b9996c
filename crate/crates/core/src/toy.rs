//! Synthetic decompiled-function corpus for desk-scale runs.
//!
//! Functions are drawn from a handful of Hex-Rays-style templates in four
//! API domains. Every template variable plays a role (handle, index, count,
//! ...) whose gold name depends on the domain, so a model can recover names
//! from the surrounding API calls. A fixed share of validation and test
//! functions are verbatim copies of training functions.

use crate::corpus::{identifier_occurrences, DecompiledFunction, Span, Split, VariableSlot};
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Handle,
    Items,
    Item,
    Index,
    Count,
    Buf,
    Size,
    Result,
    Status,
    Next,
}

struct Domain {
    prefix: &'static str,
    names: [&'static str; 7],
}

const DOMAINS: [Domain; 4] = [
    Domain {
        prefix: "tok",
        names: ["lexer", "tokens", "token", "tokenIndex", "tokenCount", "input", "inputLen"],
    },
    Domain {
        prefix: "net",
        names: ["sock", "packets", "packet", "i", "numPackets", "buffer", "bytesRead"],
    },
    Domain {
        prefix: "file",
        names: ["fp", "lines", "line", "lineNo", "lineCount", "path", "pathLen"],
    },
    Domain {
        prefix: "mem",
        names: ["pool", "blocks", "block", "j", "nblocks", "data", "len"],
    },
];

impl Domain {
    fn name(&self, role: Role) -> &'static str {
        match role {
            Role::Handle => self.names[0],
            Role::Items => self.names[1],
            Role::Item => self.names[2],
            Role::Index => self.names[3],
            Role::Count => self.names[4],
            Role::Buf => self.names[5],
            Role::Size => self.names[6],
            Role::Result => "result",
            Role::Status => "status",
            Role::Next => "next",
        }
    }
}

/// Every gold name the generator can emit.
pub fn gold_names() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = DOMAINS.iter().flat_map(|d| d.names).collect();
    v.extend(["result", "status", "next"]);
    v
}

struct Template {
    text: &'static str,
    roles: &'static [(&'static str, Role)],
}

// `$P` domain prefix, `$A` address, `$K` field offset, `$X` constant,
// `$S` stack-slot comment, `$N` optional trace line.
const TEMPLATES: [Template; 8] = [
    Template {
        text: "__int64 __fastcall sub_$A(__int64 a1)
{
  __int64 v1; // rax
  int v2; // $S
  unsigned int v3; // $S

$N  v3 = 0;
  for ( v2 = 0; v2 < (int)$P_count(a1); ++v2 )
  {
    v1 = $P_get(a1, v2);
    if ( *(_DWORD *)(v1 + $K) == $X )
      ++v3;
  }
  return v3;
}",
        roles: &[("a1", Role::Handle), ("v1", Role::Item), ("v2", Role::Index), ("v3", Role::Result)],
    },
    Template {
        text: "__int64 __fastcall sub_$A(__int64 a1, int a2)
{
  int v1; // $S
  __int64 v2; // $S

$N  for ( v1 = 0; v1 < a2; ++v1 )
  {
    v2 = *(_QWORD *)(8LL * v1 + a1);
    if ( (unsigned int)$P_match(v2, $X) )
      return v2;
  }
  return 0LL;
}",
        roles: &[("a1", Role::Items), ("a2", Role::Count), ("v1", Role::Index), ("v2", Role::Item)],
    },
    Template {
        text: "__int64 __fastcall sub_$A(__int64 a1, char *a2, unsigned __int64 a3)
{
  __int64 v1; // rax
  unsigned __int64 v2; // $S

$N  v2 = 0LL;
  while ( v2 < a3 )
  {
    v1 = $P_read(a1, &a2[v2], a3 - v2);
    if ( v1 <= 0 )
      break;
    v2 += v1;
  }
  return v2;
}",
        roles: &[
            ("a1", Role::Handle),
            ("a2", Role::Buf),
            ("a3", Role::Size),
            ("v1", Role::Status),
            ("v2", Role::Result),
        ],
    },
    Template {
        text: "void *__fastcall sub_$A(const void *a1, size_t a2)
{
  void *v1; // rax

$N  v1 = (void *)$P_alloc(a2 + $K);
  if ( !v1 )
    return 0LL;
  memcpy(v1, a1, a2);
  *((_BYTE *)v1 + a2) = 0;
  return v1;
}",
        roles: &[("a1", Role::Buf), ("a2", Role::Size), ("v1", Role::Result)],
    },
    Template {
        text: "void __fastcall sub_$A(__int64 a1)
{
  __int64 v1; // $S

$N  while ( a1 )
  {
    v1 = *(_QWORD *)(a1 + $K);
    $P_free(a1);
    a1 = v1;
  }
}",
        roles: &[("a1", Role::Item), ("v1", Role::Next)],
    },
    Template {
        text: "__int64 __fastcall sub_$A(__int64 *a1, int a2)
{
  int v1; // $S
  __int64 v2; // $S

$N  v2 = 0LL;
  for ( v1 = 0; v1 < a2; ++v1 )
    v2 += $P_length(a1[v1]);
  return v2;
}",
        roles: &[("a1", Role::Items), ("a2", Role::Count), ("v1", Role::Index), ("v2", Role::Result)],
    },
    Template {
        text: "__int64 __fastcall sub_$A(const char *a1, unsigned int a2)
{
  __int64 v1; // rax
  int v2; // eax

$N  v1 = $P_open(a1, a2, $X);
  if ( !v1 )
    return 0LL;
  v2 = $P_init(v1, $X);
  if ( v2 )
  {
    $P_close(v1);
    return 0LL;
  }
  return v1;
}",
        roles: &[("a1", Role::Buf), ("a2", Role::Size), ("v1", Role::Handle), ("v2", Role::Status)],
    },
    Template {
        text: "__int64 __fastcall sub_$A(__int64 a1, int a2)
{
  __int64 v1; // rdx
  int v2; // $S

$N  v2 = *(_DWORD *)(a1 + $K);
  if ( a2 < 0 || a2 >= v2 )
    return 0LL;
  v1 = *(_QWORD *)(a1 + $K);
  return *(_QWORD *)(v1 + 8LL * a2);
}",
        roles: &[("a1", Role::Handle), ("a2", Role::Index), ("v1", Role::Items), ("v2", Role::Count)],
    },
];

pub const TEMPLATE_COUNT: usize = TEMPLATES.len();
pub const DOMAIN_COUNT: usize = DOMAINS.len();

#[derive(Clone, Debug)]
pub struct ToyConfig {
    pub functions: usize,
    /// Share of validation and of test functions copied from training.
    pub duplicate_rate: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            functions: 200,
            duplicate_rate: 0.1,
            seed: 7,
        }
    }
}

impl ToyConfig {
    /// `(train, validation, test)` function counts: 80/10/10.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let tenth = (self.functions as f64 * 0.1).round() as usize;
        (self.functions - 2 * tenth, tenth, tenth)
    }

    /// Copies of training bodies placed in each evaluation split.
    pub fn duplicates_per_eval_split(&self) -> usize {
        (self.split_sizes().1 as f64 * self.duplicate_rate).round() as usize
    }
}

fn fill(template: &Template, domain: &Domain, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(template.text.len() + 64);
    let mut rest = template.text;
    while let Some(at) = rest.find('$') {
        out.push_str(&rest[..at]);
        match rest.as_bytes()[at + 1] {
            b'P' => out.push_str(domain.prefix),
            b'A' => out.push_str(&format!("{:06X}", rng.random_range(0x401000u32..0x4FFFFF))),
            b'K' => out.push_str(&(8 * rng.random_range(1u32..16)).to_string()),
            b'X' => out.push_str(&format!("0x{:X}", rng.random_range(0x10u32..0xFFFF))),
            b'S' => {
                let slot = 4 * rng.random_range(2u32..16);
                out.push_str(&format!("[rsp+{:X}h] [rbp-{:X}h]", slot, 0x40 - slot));
            }
            b'N' => {
                if rng.random_bool(0.5) {
                    out.push_str(&format!("  {}_trace({});\n", domain.prefix, rng.random_range(1u32..64)));
                }
            }
            other => unreachable!("unknown template field {}", other as char),
        }
        rest = &rest[at + 2..];
    }
    out.push_str(rest);
    out
}

fn instantiate(id: String, template: &Template, domain: &Domain, rng: &mut ChaCha8Rng) -> DecompiledFunction {
    let code = fill(template, domain, rng);
    let variables = template
        .roles
        .iter()
        .map(|&(placeholder, role)| VariableSlot {
            decompiler_name: placeholder.to_string(),
            gold_name: domain.name(role).to_string(),
            occurrences: identifier_occurrences(&code, placeholder)
                .into_iter()
                .map(|s| Span::new(s, s + placeholder.len()))
                .collect(),
        })
        .collect();
    DecompiledFunction {
        function_id: id,
        raw_code: code,
        variables,
        split: Split::Train,
        body_in_train: None,
    }
}

/// Generate the corpus. Records come out shuffled, with splits assigned and
/// `body_in_train` left for the corpus module to compute.
pub fn generate(cfg: &ToyConfig) -> Vec<DecompiledFunction> {
    let mut rng = seed::rng(cfg.seed, &[seed::stream::TOYGEN]);
    let (n_train, n_valid, n_test) = cfg.split_sizes();
    let dups = cfg.duplicates_per_eval_split();
    let unique = cfg.functions - 2 * dups;

    let mut seen = HashSet::new();
    let mut functions: Vec<DecompiledFunction> = Vec::with_capacity(cfg.functions);
    let mut combo = 0usize;
    while functions.len() < unique {
        // Cycle through every (template, domain) pair so each is covered.
        let template = &TEMPLATES[combo % TEMPLATES.len()];
        let domain = &DOMAINS[(combo / TEMPLATES.len()) % DOMAINS.len()];
        combo += 1;
        let f = instantiate(String::new(), template, domain, &mut rng);
        if seen.insert(f.body_hash()) {
            functions.push(f);
        }
    }
    functions.shuffle(&mut rng);

    let mut splits = Vec::with_capacity(cfg.functions);
    splits.extend(std::iter::repeat_n(Split::Train, n_train));
    splits.extend(std::iter::repeat_n(Split::Validation, n_valid - dups));
    splits.extend(std::iter::repeat_n(Split::Test, n_test - dups));
    for (f, s) in functions.iter_mut().zip(&splits) {
        f.split = *s;
    }
    for split in [Split::Validation, Split::Test] {
        for _ in 0..dups {
            let src = rng.random_range(0..n_train);
            let mut copy = functions[src].clone();
            copy.split = split;
            functions.push(copy);
        }
    }
    functions.shuffle(&mut rng);
    for (i, f) in functions.iter_mut().enumerate() {
        f.function_id = format!("toy{i:04}");
    }
    functions
}
