use serde::{Deserialize, Serialize};

use crate::data::{Document, ElementId, QaSample};
use crate::encoders::{
    validate_bbox, BidirQuestionEncoder, CausalQuestionEncoder, ContentEncoder, EncoderConfig, VisualConfig,
    VisualEncoder,
};
use crate::error::{Error, Result};
use crate::numerics::{ParamBuilder, ParamStore, Real, Session, Tape, Tensor, Var};
use crate::tokenizer::{encode_text, Encoded, Vocabulary};

use super::{concat_question_features, logits_of, FusionHead, QuestionBranch};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub question_bidir: EncoderConfig,
    pub question_causal: EncoderConfig,
    pub content: EncoderConfig,
    pub visual: VisualConfig,
    pub reduced_dim: usize,
    pub scorer_hidden: usize,
    pub branch: QuestionBranch,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            question_bidir: EncoderConfig::new(32, 32, false),
            question_causal: EncoderConfig::new(48, 32, true),
            content: EncoderConfig::new(32, 16, false),
            visual: VisualConfig {
                d_vis: 8,
                hidden: 32,
                d_out: 16,
            },
            reduced_dim: 32,
            scorer_hidden: 32,
            branch: QuestionBranch::Dual,
        }
    }
}

impl ModelConfig {
    /// Every encoder at width 16; used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            question_bidir: EncoderConfig::new(16, 32, false),
            question_causal: EncoderConfig::new(16, 32, true),
            content: EncoderConfig::new(16, 16, false),
            visual: VisualConfig {
                d_vis: 8,
                hidden: 16,
                d_out: 8,
            },
            reduced_dim: 16,
            scorer_hidden: 16,
            branch: QuestionBranch::Dual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.question_bidir.validate("question_bidir")?;
        self.question_causal.validate("question_causal")?;
        self.content.validate("content")?;
        self.visual.validate()?;
        if self.question_bidir.causal || !self.question_causal.causal || self.content.causal {
            return Err(Error::Config(
                "only the question_causal encoder may (and must) be causal".into(),
            ));
        }
        if self.reduced_dim == 0 || self.scorer_hidden == 0 {
            return Err(Error::Config("reduced_dim and scorer_hidden must be at least 1".into()));
        }
        if self.content.max_seq < 2 {
            return Err(Error::Config("content.max_seq must be at least 2".into()));
        }
        if self.question_len() < 2 {
            return Err(Error::Config("question max_seq must be at least 2".into()));
        }
        Ok(())
    }

    /// Question width entering the reduction.
    pub fn question_width(&self) -> usize {
        match self.branch {
            QuestionBranch::Dual => self.question_bidir.d_model + self.question_causal.d_model,
            QuestionBranch::BidirOnly => self.question_bidir.d_model,
            QuestionBranch::CausalOnly => self.question_causal.d_model,
        }
    }

    /// Encoded question length shared by the active question encoders.
    pub fn question_len(&self) -> usize {
        match self.branch {
            QuestionBranch::Dual => self.question_bidir.max_seq.min(self.question_causal.max_seq),
            QuestionBranch::BidirOnly => self.question_bidir.max_seq,
            QuestionBranch::CausalOnly => self.question_causal.max_seq,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedElement {
    pub id: ElementId,
    pub text: Encoded,
    pub bbox: [f32; 4],
}

/// Model-ready view of one question over one document. Candidate `i` is
/// `elements[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub qid: String,
    pub question: Encoded,
    pub elements: Vec<EncodedElement>,
    /// `N × d_vis`.
    pub descriptors: Tensor<f32>,
    /// Gold membership per candidate.
    pub targets: Vec<bool>,
}

impl EncodedSample {
    pub fn candidate_ids(&self) -> Vec<ElementId> {
        self.elements.iter().map(|e| e.id).collect()
    }

    pub fn gold_indices(&self) -> std::collections::BTreeSet<usize> {
        self.targets
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Encodes free-form question text against every element of `doc`.
pub fn encode_question(doc: &Document, question: &str, vocab: &Vocabulary, cfg: &ModelConfig) -> Result<EncodedSample> {
    let d_vis = cfg.visual.d_vis;
    let mut elements = Vec::with_capacity(doc.elements.len());
    let mut vis = Vec::with_capacity(doc.elements.len() * d_vis);
    for e in &doc.elements {
        if e.vis.len() != d_vis {
            return Err(Error::Compatibility(format!(
                "document {} element {} has a {}-wide descriptor; model expects {d_vis}",
                doc.doc_id,
                e.id,
                e.vis.len()
            )));
        }
        validate_bbox(e.bbox)?;
        elements.push(EncodedElement {
            id: e.id,
            text: encode_text(&e.text, vocab, cfg.content.max_seq)?.trimmed(),
            bbox: e.bbox,
        });
        vis.extend_from_slice(&e.vis);
    }
    Ok(EncodedSample {
        qid: String::new(),
        question: encode_text(question, vocab, cfg.question_len())?.trimmed(),
        descriptors: Tensor::new(vec![elements.len(), d_vis], vis)?,
        targets: vec![false; elements.len()],
        elements,
    })
}

pub fn encode_sample(doc: &Document, qa: &QaSample, vocab: &Vocabulary, cfg: &ModelConfig) -> Result<EncodedSample> {
    let mut sample = encode_question(doc, &qa.question, vocab, cfg)?;
    sample.qid = qa.qid.clone();
    sample.targets = doc.elements.iter().map(|e| qa.answers.contains(&e.id)).collect();
    Ok(sample)
}

/// Tape handles for every intermediate feature of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub qfeat1: Option<Var>,
    pub qfeat2: Option<Var>,
    pub qfeat: Var,
    pub qreduced: Var,
    pub content: Var,
    pub visual: Var,
}

/// Materialized features of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle<T> {
    pub qfeat1: Option<Tensor<T>>,
    pub qfeat2: Option<Tensor<T>>,
    /// Pre-reduction question feature.
    pub qfeat: Tensor<T>,
    pub qreduced: Tensor<T>,
    pub content_feats: Tensor<T>,
    pub visual_feats: Tensor<T>,
}

impl<T: Real> FeatureBundle<T> {
    pub fn from_tape(tape: &Tape<T>, v: &FeatureVars) -> Self {
        Self {
            qfeat1: v.qfeat1.map(|x| tape.value(x).clone()),
            qfeat2: v.qfeat2.map(|x| tape.value(x).clone()),
            qfeat: tape.value(v.qfeat).clone(),
            qreduced: tape.value(v.qreduced).clone(),
            content_feats: tape.value(v.content).clone(),
            visual_feats: tape.value(v.visual).clone(),
        }
    }
}

/// Full pipeline: question encoders, concatenation, reduction, element
/// encoders and the candidate scorer.
#[derive(Clone, Debug)]
pub struct JaegerModel {
    cfg: ModelConfig,
    vocab_size: usize,
    bidir: Option<BidirQuestionEncoder>,
    causal: Option<CausalQuestionEncoder>,
    content: ContentEncoder,
    visual: VisualEncoder,
    head: FusionHead,
}

impl JaegerModel {
    /// Architecture plus freshly initialized parameters.
    pub fn build<T: Real>(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut pb = ParamBuilder::new(&mut store, seed);
        let bidir = cfg
            .branch
            .uses_bidir()
            .then(|| BidirQuestionEncoder::new(&mut pb.scoped("question_bidir"), &cfg.question_bidir, vocab_size));
        let causal = cfg
            .branch
            .uses_causal()
            .then(|| CausalQuestionEncoder::new(&mut pb.scoped("question_causal"), &cfg.question_causal, vocab_size));
        let content = ContentEncoder::new(&mut pb.scoped("content"), &cfg.content, vocab_size);
        let visual = VisualEncoder::new(&mut pb.scoped("visual"), &cfg.visual);
        let head = FusionHead::new(
            &mut pb.scoped("fusion"),
            cfg.question_width(),
            cfg.reduced_dim,
            cfg.content.d_model,
            cfg.visual.d_out,
            cfg.scorer_hidden,
        );
        let model = Self {
            cfg: cfg.clone(),
            vocab_size,
            bidir,
            causal,
            content,
            visual,
            head,
        };
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn head(&self) -> &FusionHead {
        &self.head
    }

    pub fn bidir(&self) -> Option<&BidirQuestionEncoder> {
        self.bidir.as_ref()
    }

    pub fn causal(&self) -> Option<&CausalQuestionEncoder> {
        self.causal.as_ref()
    }

    pub fn features<T: Real>(&self, s: &mut Session<'_, T>, sample: &EncodedSample) -> Result<FeatureVars> {
        if sample.question.len_unpadded() == 0 {
            return Err(Error::contract("empty question"));
        }
        let qfeat1 = self.bidir.as_ref().map(|e| e.encode(s, &sample.question)).transpose()?;
        let qfeat2 = self
            .causal
            .as_ref()
            .map(|e| e.encode(s, &sample.question))
            .transpose()?;
        let qfeat = match (qfeat1, qfeat2) {
            (Some(a), Some(b)) => concat_question_features(&mut s.tape, a, b)?,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("every branch has a question encoder"),
        };
        let qreduced = self.head.reduce_dim(s, qfeat)?;

        let content = if sample.elements.is_empty() {
            s.constant(Tensor::zeros(&[0, self.content.width()]))
        } else {
            let rows = sample
                .elements
                .iter()
                .map(|e| self.content.encode(s, &e.text, e.bbox))
                .collect::<Result<Vec<_>>>()?;
            s.tape.concat_rows(&rows)?
        };
        let descriptors = s.constant(sample.descriptors.cast());
        let visual = self.visual.encode(s, descriptors)?;
        Ok(FeatureVars {
            qfeat1,
            qfeat2,
            qfeat,
            qreduced,
            content,
            visual,
        })
    }

    /// `N × 1` candidate logits.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, sample: &EncodedSample) -> Result<Var> {
        let f = self.features(s, sample)?;
        self.head.score_candidates(s, f.qreduced, f.content, f.visual)
    }

    /// Logits and mean BCE against the sample's gold membership.
    pub fn loss<T: Real>(&self, s: &mut Session<'_, T>, sample: &EncodedSample) -> Result<(Var, Var)> {
        let logits = self.forward(s, sample)?;
        let targets: Vec<T> = sample
            .targets
            .iter()
            .map(|&t| if t { T::one() } else { T::zero() })
            .collect();
        let loss = s.tape.bce_with_logits(logits, &targets)?;
        Ok((logits, loss))
    }

    pub fn logits<T: Real>(&self, store: &ParamStore<T>, sample: &EncodedSample) -> Result<Vec<T>> {
        let mut s = Session::new(store);
        let out = self.forward(&mut s, sample)?;
        Ok(logits_of(&s.tape, out))
    }

    pub fn feature_bundle<T: Real>(&self, store: &ParamStore<T>, sample: &EncodedSample) -> Result<FeatureBundle<T>> {
        let mut s = Session::new(store);
        let f = self.features(&mut s, sample)?;
        Ok(FeatureBundle::from_tape(&s.tape, &f))
    }
}
