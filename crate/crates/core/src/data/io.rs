use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde_json::error::Category as JsonCategory;

use crate::error::{Error, Result};
use crate::numerics::{stream_id, stream_rng};

use super::Document;

/// One compact JSON object per line, newline-terminated.
pub fn to_jsonl(docs: &[Document]) -> Result<String> {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&serde_json::to_string(doc)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, docs: &[Document]) -> Result<()> {
    fs::write(path, to_jsonl(docs)?)?;
    Ok(())
}

/// Parses and validates every line. Errors carry the 1-based line number.
pub fn parse_jsonl(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let doc: Document = serde_json::from_str(line).map_err(|e| match e.classify() {
            JsonCategory::Data => Error::Schema {
                line: line_no,
                message: e.to_string(),
            },
            _ => Error::Parse {
                line: line_no,
                message: e.to_string(),
            },
        })?;
        doc.validate()
            .map_err(|message| Error::Schema { line: line_no, message })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Document>> {
    parse_jsonl(&fs::read_to_string(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Disjoint document-level partition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
}

impl CorpusSplit {
    pub fn get(&self, name: SplitName) -> &[Document] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Seeded shuffle of whole documents, then `floor(ratio * n)` documents per
/// split in train/val/test order. Documents left over when the ratios sum
/// to less than one are dropped.
pub fn split_corpus(docs: &[Document], ratios: [f64; 3], seed: u64) -> Result<CorpusSplit> {
    if docs.is_empty() {
        return Err(Error::contract("cannot split an empty corpus"));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || ratios.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to at most 1, got {ratios:?}"
        )));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut stream_rng(seed, stream_id("split")));
    let n = docs.len() as f64;
    let sizes = ratios.map(|r| (r * n + 1e-9).floor() as usize);
    let take = |from: usize, len: usize| -> Vec<Document> {
        order[from..from + len].iter().map(|&i| docs[i].clone()).collect()
    };
    Ok(CorpusSplit {
        train: take(0, sizes[0]),
        val: take(sizes[0], sizes[1]),
        test: take(sizes[0] + sizes[1], sizes[2]),
    })
}
