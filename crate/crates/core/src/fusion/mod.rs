//! Question-feature concatenation, learned dimensionality reduction, and
//! per-candidate answer scoring.

mod model;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::encoders::Linear;
use crate::error::{Error, Result};
use crate::numerics::{ParamBuilder, Real, Session, Tape, Var};

pub use model::{
    encode_question, encode_sample, EncodedElement, EncodedSample, FeatureBundle, FeatureVars, JaegerModel, ModelConfig,
};

/// Which question encoders feed the fusion head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionBranch {
    /// Both encoders, concatenated.
    #[default]
    Dual,
    BidirOnly,
    CausalOnly,
}

impl QuestionBranch {
    pub const ALL: [QuestionBranch; 3] = [
        QuestionBranch::Dual,
        QuestionBranch::BidirOnly,
        QuestionBranch::CausalOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionBranch::Dual => "dual-concat",
            QuestionBranch::BidirOnly => "bidir-only",
            QuestionBranch::CausalOnly => "causal-only",
        }
    }

    pub fn uses_bidir(self) -> bool {
        self != QuestionBranch::CausalOnly
    }

    pub fn uses_causal(self) -> bool {
        self != QuestionBranch::BidirOnly
    }
}

/// `q1 ⊕ q2` along the trailing dimension.
pub fn concat_question_features<T: Real>(tape: &mut Tape<T>, q1: Var, q2: Var) -> Result<Var> {
    tape.concat_last(q1, q2)
}

/// Reduction map and two-layer candidate scorer.
#[derive(Clone, Debug)]
pub struct FusionHead {
    reduce: Linear,
    scorer_hidden: Linear,
    scorer_out: Linear,
    question_width: usize,
    reduced_dim: usize,
    content_width: usize,
    visual_width: usize,
    hidden: usize,
}

impl FusionHead {
    pub fn new<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        question_width: usize,
        reduced_dim: usize,
        content_width: usize,
        visual_width: usize,
        hidden: usize,
    ) -> Self {
        let reduce = Linear::new(pb, "reduce", question_width, reduced_dim);
        let mut scorer = pb.scoped("scorer");
        let scorer_hidden = Linear::new(
            &mut scorer,
            "hidden",
            reduced_dim + content_width + visual_width,
            hidden,
        );
        let scorer_out = Linear::new(&mut scorer, "out", hidden, 1);
        Self {
            reduce,
            scorer_hidden,
            scorer_out,
            question_width,
            reduced_dim,
            content_width,
            visual_width,
            hidden,
        }
    }

    pub fn reduce_param(&self) -> &Linear {
        &self.reduce
    }

    pub fn question_width(&self) -> usize {
        self.question_width
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced_dim
    }

    /// Scorer input width with the reduced question feature.
    pub fn scorer_input_width(&self) -> usize {
        self.reduced_dim + self.content_width + self.visual_width
    }

    /// Scorer input width had the concatenated feature gone in unreduced.
    pub fn unreduced_scorer_input_width(&self) -> usize {
        self.question_width + self.content_width + self.visual_width
    }

    /// Multiplies spent scoring one candidate: hidden layer plus output unit.
    pub fn per_candidate_multiplies(&self) -> usize {
        self.scorer_input_width() * self.hidden + self.hidden
    }

    pub fn unreduced_per_candidate_multiplies(&self) -> usize {
        self.unreduced_scorer_input_width() * self.hidden + self.hidden
    }

    /// `qfeat · W + b`, `1 × d_r`.
    pub fn reduce_dim<T: Real>(&self, s: &mut Session<'_, T>, qfeat: Var) -> Result<Var> {
        let shape = s.tape.shape(qfeat);
        if shape.last() != Some(&self.question_width) {
            return Err(Error::shape("reduce_dim", shape, &[self.question_width]));
        }
        self.reduce.forward(s, qfeat)
    }

    /// One logit per candidate from `[qreduced ; content_i ; visual_i]`.
    /// Returns an `N × 1` matrix.
    pub fn score_candidates<T: Real>(
        &self,
        s: &mut Session<'_, T>,
        qreduced: Var,
        content: Var,
        visual: Var,
    ) -> Result<Var> {
        let (cs, vs) = (s.tape.shape(content).to_vec(), s.tape.shape(visual).to_vec());
        if cs.len() != 2 || vs.len() != 2 || cs[0] != vs[0] {
            return Err(Error::shape("score_candidates", &cs, &vs));
        }
        if cs[1] != self.content_width || vs[1] != self.visual_width {
            return Err(Error::shape(
                "score_candidates",
                &[cs[1], vs[1]],
                &[self.content_width, self.visual_width],
            ));
        }
        let n = cs[0];
        let q = s.tape.embedding_lookup(qreduced, &vec![0; n])?;
        let joint = s.tape.concat_last(q, content)?;
        let joint = s.tape.concat_last(joint, visual)?;
        let h = self.scorer_hidden.forward(s, joint)?;
        let h = s.tape.relu(h);
        self.scorer_out.forward(s, h)
    }
}

/// `ln(τ / (1 − τ))`; a logit at or above it has `σ(logit) ≥ τ`.
pub fn logit_threshold(tau: f64) -> f64 {
    (tau / (1.0 - tau)).ln()
}

/// Indices whose sigmoid reaches `tau`; ties are included.
pub fn predict_answer_set<T: Real>(logits: &[T], tau: f64) -> BTreeSet<usize> {
    let cut = logit_threshold(tau);
    logits
        .iter()
        .enumerate()
        .filter(|(_, z)| Real::to_f64(**z) >= cut)
        .map(|(i, _)| i)
        .collect()
}

/// Copies the `N × 1` logit matrix into a flat vector.
pub fn logits_of<T: Real>(tape: &Tape<T>, logits: Var) -> Vec<T> {
    tape.value(logits).data().to_vec()
}
