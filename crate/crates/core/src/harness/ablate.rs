use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Document, SplitName};
use crate::error::Result;
use crate::fusion::QuestionBranch;

use super::eval::evaluate;
use super::train::train_on;
use super::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Pre-reduction question width.
    pub question_width: usize,
    pub val_ema: f64,
    pub test_ema: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>7} {:>8} {:>8}",
            "variant", "q_width", "val_ema", "test_ema"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>7} {:>8.4} {:>8.4}",
                r.variant, r.question_width, r.val_ema, r.test_ema
            )?;
        }
        Ok(())
    }
}

/// Trains one model per question branch with identical seed, split and
/// budget, then scores each on val and test.
pub fn ablate(cfg: &TrainConfig, corpus: &[Document]) -> Result<AblationTable> {
    cfg.validate()?;
    let split = cfg.split_corpus(corpus)?;
    let mut rows = Vec::with_capacity(QuestionBranch::ALL.len());
    for branch in QuestionBranch::ALL {
        let mut variant = cfg.clone();
        variant.model.branch = branch;
        let (trained, _) = train_on(&variant, &split.train, &split.val)?;
        let val = evaluate(&trained, corpus, SplitName::Val, cfg.threshold)?;
        let test = evaluate(&trained, corpus, SplitName::Test, cfg.threshold)?;
        rows.push(AblationRow {
            variant: branch.as_str().to_string(),
            question_width: trained.model.head().question_width(),
            val_ema: val.report.ema,
            test_ema: test.report.ema,
        });
    }
    Ok(AblationTable { rows })
}
