//! Word-level tokenizer, vocabulary and token/position embedding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;

pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Lowercases, splits on whitespace, and emits every ASCII punctuation
/// character as its own token. Digits stay inside their word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if ch.is_ascii_punctuation() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(ch.to_string());
        } else {
            word.push(ch);
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Injective token ↔ id map with the four reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Format(format!("vocabulary line {} must be {r}", i + 1)));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("vocabulary line {}: invalid token {t:?}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!(
                    "vocabulary line {}: duplicate token {t:?}",
                    i + 1
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn reserved_only() -> Self {
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number (from zero) is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Tokens with at least `min_count` occurrences, by descending count then
/// lexicographically, after the reserved ids.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for tok in tokenize(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Vocabulary::from_tokens(tokens).expect("reserved prefix and unique tokens")
}

/// A fixed-length id sequence and its non-PAD mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Encoded {
    /// Number of non-PAD positions.
    pub fn len_unpadded(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Drops trailing PAD positions.
    pub fn trimmed(&self) -> Encoded {
        let n = self.len_unpadded();
        Encoded {
            ids: self.ids[..n].to_vec(),
            mask: self.mask[..n].to_vec(),
        }
    }
}

/// `[CLS] t1 .. tk [SEP]` padded to `max_len`; tokens are truncated so that
/// `[SEP]` always fits.
pub fn encode_text(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<Encoded> {
    if max_len < 2 {
        return Err(Error::contract(format!("max_len must be at least 2, got {max_len}")));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(tokenize(text).iter().take(max_len - 2).map(|t| vocab.id(t)));
    ids.push(SEP);
    let used = ids.len();
    ids.resize(max_len, PAD);
    let mask = (0..max_len).map(|i| i < used).collect();
    Ok(Encoded { ids, mask })
}

/// Token embedding plus learned absolute position embedding.
pub fn embed_sequence<T: Real>(tape: &mut Tape<T>, ids: &[usize], token_table: Var, pos_table: Var) -> Result<Var> {
    let max_pos = tape.shape(pos_table)[0];
    if ids.len() > max_pos {
        return Err(Error::Index {
            op: "embed_sequence",
            index: ids.len() - 1,
            bound: max_pos,
        });
    }
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.embedding_lookup(token_table, ids)?;
    let pos = tape.embedding_lookup(pos_table, &positions)?;
    tape.add(tok, pos)
}
