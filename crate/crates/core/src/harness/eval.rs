use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Document, ElementId, SplitName};
use crate::error::{Error, Result};
use crate::fusion::{encode_question, predict_answer_set, EncodedSample, JaegerModel};
use crate::numerics::{sigmoid, ParamStore};

use super::{encode_corpus, Trained};

/// Fraction of positions where the predicted set equals the gold set.
pub fn ema<T: Ord>(predictions: &[BTreeSet<T>], golds: &[BTreeSet<T>]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::contract(format!(
            "ema: {} predictions vs {} gold sets",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("ema: no questions"));
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n: usize,
    pub ema: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub qid: String,
    pub predicted: BTreeSet<ElementId>,
    pub gold: BTreeSet<ElementId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Scores already-encoded questions. The report's `split` is empty.
pub fn evaluate_samples(
    model: &JaegerModel,
    params: &ParamStore<f32>,
    samples: &[EncodedSample],
    tau: f64,
) -> Result<EvalReport> {
    Ok(score(model, params, samples, tau)?.report)
}

fn score(model: &JaegerModel, params: &ParamStore<f32>, samples: &[EncodedSample], tau: f64) -> Result<EvalOutput> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let ids = s.candidate_ids();
        let logits = model.logits(params, s)?;
        let pick = |set: BTreeSet<usize>| set.into_iter().map(|i| ids[i]).collect::<BTreeSet<_>>();
        records.push(PredictionRecord {
            qid: s.qid.clone(),
            predicted: pick(predict_answer_set(&logits, tau)),
            gold: pick(s.gold_indices()),
        });
    }
    let preds: Vec<_> = records.iter().map(|r| r.predicted.clone()).collect();
    let golds: Vec<_> = records.iter().map(|r| r.gold.clone()).collect();
    Ok(EvalOutput {
        report: EvalReport {
            split: String::new(),
            n: records.len(),
            ema: ema(&preds, &golds)?,
        },
        predictions: records,
    })
}

/// EMA of `trained` over the `split` documents of `corpus`, split with the
/// trained config's ratios and seed.
pub fn evaluate(trained: &Trained, corpus: &[Document], split: SplitName, tau: f64) -> Result<EvalOutput> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {tau}")));
    }
    let parts = trained.config.split_corpus(corpus)?;
    let docs = parts.get(split);
    let samples = encode_corpus(docs, &trained.vocab, &trained.config.model)?;
    if samples.is_empty() {
        return Err(Error::contract(format!("split {} has no questions", split.as_str())));
    }
    let mut out = score(&trained.model, &trained.params, &samples, tau)?;
    out.report.split = split.as_str().to_string();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub question: String,
    pub answers: BTreeSet<ElementId>,
    /// `(element id, probability)` per candidate in document order.
    pub scores: Vec<(ElementId, f64)>,
}

/// Answers a free-form question about `doc`.
pub fn predict(trained: &Trained, doc: &Document, question: &str, tau: f64) -> Result<Prediction> {
    let sample = encode_question(doc, question, &trained.vocab, &trained.config.model)?;
    let ids = sample.candidate_ids();
    let logits = trained.model.logits(&trained.params, &sample)?;
    Ok(Prediction {
        doc_id: doc.doc_id.clone(),
        question: question.to_string(),
        answers: predict_answer_set(&logits, tau).into_iter().map(|i| ids[i]).collect(),
        scores: ids
            .iter()
            .zip(&logits)
            .map(|(&id, &z)| (id, sigmoid(z as f64)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(ema(&[s(&[3, 5])], &[s(&[3, 5])]).unwrap(), 1.0);
        assert_eq!(ema(&[s(&[3])], &[s(&[3, 5])]).unwrap(), 0.0);
        assert_eq!(ema(&[s(&[]), s(&[1])], &[s(&[]), s(&[2])]).unwrap(), 0.5);
        let preds = [s(&[1]), s(&[2]), s(&[3]), s(&[4])];
        let golds = [s(&[1]), s(&[9]), s(&[3]), s(&[4, 5])];
        assert_eq!(ema(&preds, &golds).unwrap(), 0.5);
        assert!(matches!(ema(&preds[..2], &golds), Err(Error::Contract(_))));
        assert!(matches!(ema::<usize>(&[], &[]), Err(Error::Contract(_))));
    }
}
