//! Small transformer encoders for questions and element text, and a
//! perceptron over region descriptors.
//!
//! All modules store only [`ParamId`]s; the values live in a [`ParamStore`]
//! so the same architecture runs in `f32` for training and `f64` for
//! gradient checks.
//!
//! [`ParamStore`]: crate::numerics::ParamStore

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{InitScheme, ParamBuilder, ParamId, Real, Session, Tensor, Var, LAYER_NORM_EPS};
use crate::tokenizer::{embed_sequence, Encoded};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub causal: bool,
}

impl EncoderConfig {
    pub fn new(d_model: usize, max_seq: usize, causal: bool) -> Self {
        Self {
            d_model,
            n_heads: 2,
            n_layers: 2,
            d_ff: 2 * d_model,
            max_seq,
            causal,
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let counts = [self.d_model, self.n_heads, self.n_layers, self.d_ff, self.max_seq];
        if counts.contains(&0) {
            return Err(Error::Config(format!(
                "{what}: all widths and counts must be at least 1"
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "{what}: d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// `x · W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, d_in: usize, d_out: usize) -> Self {
        let mut scope = pb.scoped(name);
        Self {
            w: scope.add("w", &[d_in, d_out], InitScheme::XavierUniform),
            b: scope.add("b", &[d_out], InitScheme::Zeros),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        let y = s.tape.matmul(x, w)?;
        s.tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, d: usize) -> Self {
        let mut scope = pb.scoped(name);
        Self {
            gamma: scope.add("gamma", &[d], InitScheme::Ones),
            beta: scope.add("beta", &[d], InitScheme::Zeros),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        s.tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Per-head attention probabilities plus the concatenated head outputs
/// before the output projection.
pub struct Attention {
    pub weights: Vec<Var>,
    pub context: Var,
    pub values: Var,
}

/// Additive attention mask: `-inf` on PAD keys and, when causal, on keys
/// after the query.
pub fn attention_mask<T: Real>(mask: &[bool], causal: bool) -> Tensor<T> {
    let l = mask.len();
    let mut m = Tensor::zeros(&[l, l]);
    for i in 0..l {
        for (j, &keep) in mask.iter().enumerate() {
            if !keep || (causal && j > i) {
                m.data_mut()[i * l + j] = T::neg_infinity();
            }
        }
    }
    m
}

/// Multi-head self-attention, residual, layer norm, relu feed-forward,
/// residual, layer norm.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    norm1: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    norm2: LayerNorm,
    n_heads: usize,
    max_seq: usize,
    causal: bool,
}

impl TransformerBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, cfg: &EncoderConfig) -> Self {
        let d = cfg.d_model;
        let mut attn = pb.scoped("attn");
        let query = Linear::new(&mut attn, "query", d, d);
        let key = Linear::new(&mut attn, "key", d, d);
        let value = Linear::new(&mut attn, "value", d, d);
        let output = Linear::new(&mut attn, "output", d, d);
        Self {
            query,
            key,
            value,
            output,
            norm1: LayerNorm::new(pb, "norm1", d),
            ff_in: Linear::new(pb, "ff_in", d, cfg.d_ff),
            ff_out: Linear::new(pb, "ff_out", cfg.d_ff, d),
            norm2: LayerNorm::new(pb, "norm2", d),
            n_heads: cfg.n_heads,
            max_seq: cfg.max_seq,
            causal: cfg.causal,
        }
    }

    pub fn attention<T: Real>(&self, s: &mut Session<'_, T>, x: Var, mask: &[bool]) -> Result<Attention> {
        let shape = s.tape.shape(x).to_vec();
        let (l, d) = (shape[0], shape[1]);
        if l > self.max_seq {
            return Err(Error::contract(format!(
                "sequence length {l} exceeds max_seq {}",
                self.max_seq
            )));
        }
        if mask.len() != l {
            return Err(Error::shape("attention mask", &shape, &[mask.len()]));
        }
        let dh = d / self.n_heads;
        let q = self.query.forward(s, x)?;
        let k = self.key.forward(s, x)?;
        let v = self.value.forward(s, x)?;
        let additive = attention_mask::<T>(mask, self.causal);
        let scale = T::one() / T::from_f64(dh as f64).sqrt();

        let mut weights = Vec::with_capacity(self.n_heads);
        let mut context: Option<Var> = None;
        for h in 0..self.n_heads {
            let qh = s.tape.slice_last(q, h * dh, dh)?;
            let kh = s.tape.slice_last(k, h * dh, dh)?;
            let vh = s.tape.slice_last(v, h * dh, dh)?;
            let kt = s.tape.transpose(kh)?;
            let scores = s.tape.matmul(qh, kt)?;
            let scores = s.tape.scale(scores, scale);
            let scores = s.tape.add_const(scores, &additive)?;
            let p = s.tape.softmax_last(scores)?;
            let out = s.tape.matmul(p, vh)?;
            weights.push(p);
            context = Some(match context {
                None => out,
                Some(prev) => s.tape.concat_last(prev, out)?,
            });
        }
        Ok(Attention {
            weights,
            context: context.expect("n_heads >= 1"),
            values: v,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var, mask: &[bool]) -> Result<Var> {
        let attn = self.attention(s, x, mask)?;
        let a = self.output.forward(s, attn.context)?;
        let x1 = s.tape.add(x, a)?;
        let x1 = self.norm1.forward(s, x1)?;
        let f = self.ff_in.forward(s, x1)?;
        let f = s.tape.relu(f);
        let f = self.ff_out.forward(s, f)?;
        let x2 = s.tape.add(x1, f)?;
        self.norm2.forward(s, x2)
    }
}

/// Embeddings plus a block stack; shared by all text encoders.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    cfg: EncoderConfig,
    token_table: ParamId,
    pos_table: ParamId,
    bbox: Option<Linear>,
    blocks: Vec<TransformerBlock>,
}

impl TextEncoder {
    fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, cfg: &EncoderConfig, vocab_size: usize, with_bbox: bool) -> Self {
        let d = cfg.d_model;
        let token_table = pb.add("token_embedding", &[vocab_size, d], InitScheme::XavierUniform);
        let pos_table = pb.add("position_embedding", &[cfg.max_seq, d], InitScheme::XavierUniform);
        let bbox = with_bbox.then(|| Linear::new(pb, "bbox", 4, d));
        let blocks = (0..cfg.n_layers)
            .map(|i| TransformerBlock::new(&mut pb.scoped(&format!("layers.{i}")), cfg))
            .collect();
        Self {
            cfg: cfg.clone(),
            token_table,
            pos_table,
            bbox,
            blocks,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[TransformerBlock] {
        &self.blocks
    }

    /// Token + position embeddings (+ broadcast bbox embedding).
    pub fn embed<T: Real>(&self, s: &mut Session<'_, T>, text: &Encoded, bbox: Option<[T; 4]>) -> Result<Var> {
        if text.ids.len() > self.cfg.max_seq {
            return Err(Error::contract(format!(
                "sequence length {} exceeds max_seq {}",
                text.ids.len(),
                self.cfg.max_seq
            )));
        }
        let (tok, pos) = (s.param(self.token_table), s.param(self.pos_table));
        let mut x = embed_sequence(&mut s.tape, &text.ids, tok, pos)?;
        if let (Some(layer), Some(b)) = (&self.bbox, bbox) {
            let bv = s.constant(Tensor::new(vec![1, 4], b.to_vec())?);
            let be = layer.forward(s, bv)?;
            let spread = s.tape.embedding_lookup(be, &vec![0; text.ids.len()])?;
            x = s.tape.add(x, spread)?;
        }
        Ok(x)
    }

    /// Final-layer hidden states, `L × d_model`.
    pub fn hidden_states<T: Real>(&self, s: &mut Session<'_, T>, text: &Encoded, bbox: Option<[T; 4]>) -> Result<Var> {
        let mut x = self.embed(s, text, bbox)?;
        for block in &self.blocks {
            x = block.forward(s, x, &text.mask)?;
        }
        Ok(x)
    }
}

/// Bidirectional question encoder; pools the `[CLS]` position.
#[derive(Clone, Debug)]
pub struct BidirQuestionEncoder(TextEncoder);

impl BidirQuestionEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, cfg: &EncoderConfig, vocab_size: usize) -> Self {
        Self(TextEncoder::new(pb, cfg, vocab_size, false))
    }

    pub fn inner(&self) -> &TextEncoder {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.cfg.d_model
    }

    /// `1 × d1` question feature.
    pub fn encode<T: Real>(&self, s: &mut Session<'_, T>, question: &Encoded) -> Result<Var> {
        if question.ids.is_empty() {
            return Err(Error::contract("empty question sequence"));
        }
        let h = self.0.hidden_states(s, question, None)?;
        s.tape.embedding_lookup(h, &[0])
    }
}

/// Causal question encoder; pools the last non-PAD position.
#[derive(Clone, Debug)]
pub struct CausalQuestionEncoder(TextEncoder);

impl CausalQuestionEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, cfg: &EncoderConfig, vocab_size: usize) -> Self {
        Self(TextEncoder::new(pb, cfg, vocab_size, false))
    }

    pub fn inner(&self) -> &TextEncoder {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.cfg.d_model
    }

    /// `1 × d2` question feature.
    pub fn encode<T: Real>(&self, s: &mut Session<'_, T>, question: &Encoded) -> Result<Var> {
        let Some(last) = question.mask.iter().rposition(|&m| m) else {
            return Err(Error::contract("causal encoder needs at least one non-PAD token"));
        };
        let h = self.0.hidden_states(s, question, None)?;
        s.tape.embedding_lookup(h, &[last])
    }
}

pub fn validate_bbox(b: [f32; 4]) -> Result<()> {
    let [x1, y1, x2, y2] = b;
    let in_unit = b.iter().all(|v| (0.0..=1.0).contains(v));
    if !(in_unit && x1 < x2 && y1 < y2) {
        return Err(Error::contract(format!("degenerate bounding box {b:?}")));
    }
    Ok(())
}

/// Element-text encoder with the bounding box injected into every token
/// embedding; pools by averaging non-PAD positions.
#[derive(Clone, Debug)]
pub struct ContentEncoder(TextEncoder);

impl ContentEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, cfg: &EncoderConfig, vocab_size: usize) -> Self {
        Self(TextEncoder::new(pb, cfg, vocab_size, true))
    }

    pub fn inner(&self) -> &TextEncoder {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.cfg.d_model
    }

    /// `1 × d_c` element feature.
    pub fn encode<T: Real>(&self, s: &mut Session<'_, T>, text: &Encoded, bbox: [f32; 4]) -> Result<Var> {
        validate_bbox(bbox)?;
        let count = text.len_unpadded();
        if count == 0 {
            return Err(Error::contract("element text has no non-PAD tokens"));
        }
        let bbox = bbox.map(|v| T::from_f64(v as f64));
        let h = self.0.hidden_states(s, text, Some(bbox))?;
        let w = T::one() / T::from_f64(count as f64);
        let weights: Vec<T> = text.mask.iter().map(|&m| if m { w } else { T::zero() }).collect();
        let pool = s.constant(Tensor::new(vec![1, text.mask.len()], weights)?);
        s.tape.matmul(pool, h)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualConfig {
    pub d_vis: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl VisualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_vis == 0 || self.hidden == 0 || self.d_out == 0 {
            return Err(Error::Config("visual encoder widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// `relu(x W1 + b1) W2 + b2` over region descriptors.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    cfg: VisualConfig,
    hidden: Linear,
    out: Linear,
}

impl VisualEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, cfg: &VisualConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            hidden: Linear::new(pb, "hidden", cfg.d_vis, cfg.hidden),
            out: Linear::new(pb, "out", cfg.hidden, cfg.d_out),
        }
    }

    pub fn width(&self) -> usize {
        self.cfg.d_out
    }

    /// Encodes an `N × d_vis` stack of descriptors into `N × d_v`.
    pub fn encode<T: Real>(&self, s: &mut Session<'_, T>, descriptors: Var) -> Result<Var> {
        let shape = s.tape.shape(descriptors).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.d_vis {
            return Err(Error::shape("encode_visual", &shape, &[self.cfg.d_vis]));
        }
        let h = self.hidden.forward(s, descriptors)?;
        let h = s.tape.relu(h);
        self.out.forward(s, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamStore;
    use crate::tokenizer::{build_vocab, encode_text, Vocabulary};

    fn vocab() -> Vocabulary {
        build_vocab(&["what is the parent of the section titled 1 . 2 results ?"], 1)
    }

    fn bits(t: &Tensor<f32>) -> Vec<u32> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::new(16, 8, false).validate("q").is_ok());
        let mut bad = EncoderConfig::new(16, 8, false);
        bad.n_heads = 3;
        assert!(bad.validate("q").is_err());
        bad.n_heads = 0;
        assert!(bad.validate("q").is_err());
    }

    #[test]
    fn single_token_attention_is_the_value_projection() {
        let cfg = EncoderConfig::new(8, 4, false);
        let mut store = ParamStore::<f64>::new();
        let block = TransformerBlock::new(&mut ParamBuilder::new(&mut store, 3), &cfg);
        let mut s = Session::new(&store);
        let x = s.constant(Tensor::new(vec![1, 8], (0..8).map(|v| v as f64 * 0.1 - 0.3).collect()).unwrap());
        let attn = block.attention(&mut s, x, &[true]).unwrap();
        for &w in &attn.weights {
            assert_eq!(s.tape.value(w).data(), &[1.0]);
        }
        assert_eq!(s.tape.value(attn.context), s.tape.value(attn.values));
        let y = block.forward(&mut s, x, &[true]).unwrap();
        assert_eq!(s.tape.shape(y), &[1, 8]);
    }

    #[test]
    fn block_rejects_overlong_input_and_keeps_shape() {
        let cfg = EncoderConfig::new(8, 4, false);
        let mut store = ParamStore::<f32>::new();
        let block = TransformerBlock::new(&mut ParamBuilder::new(&mut store, 3), &cfg);
        let mut s = Session::new(&store);
        let x = s.constant(Tensor::full(&[5, 8], 0.1));
        assert!(matches!(block.forward(&mut s, x, &[true; 5]), Err(Error::Contract(_))));
        let x = s.constant(Tensor::new(vec![3, 8], (0..24).map(|v| (v as f32).sin()).collect()).unwrap());
        let y = block.forward(&mut s, x, &[true, true, false]).unwrap();
        assert_eq!(s.tape.shape(y), &[3, 8]);
    }

    #[test]
    fn causal_outputs_ignore_future_tokens() {
        let cfg = EncoderConfig::new(8, 10, true);
        let v = vocab();
        let mut store = ParamStore::<f32>::new();
        let enc = CausalQuestionEncoder::new(&mut ParamBuilder::new(&mut store, 11), &cfg, v.len());
        let base = encode_text("what is the parent of the section", &v, 10).unwrap();
        let mut s1 = Session::new(&store);
        let h1 = enc.inner().hidden_states(&mut s1, &base, None).unwrap();
        for t in 0..base.len_unpadded() - 1 {
            let mut perturbed = base.clone();
            perturbed.ids[t + 1] = (perturbed.ids[t + 1] + 5) % v.len();
            let mut s2 = Session::new(&store);
            let h2 = enc.inner().hidden_states(&mut s2, &perturbed, None).unwrap();
            let (a, b) = (s1.tape.value(h1), s2.tape.value(h2));
            for row in 0..=t {
                let ra: Vec<u32> = a.row(row).iter().map(|v| v.to_bits()).collect();
                let rb: Vec<u32> = b.row(row).iter().map(|v| v.to_bits()).collect();
                assert_eq!(ra, rb, "position {row} changed after perturbing {}", t + 1);
            }
        }
    }

    #[test]
    fn question_encoders_ignore_trailing_padding() {
        let v = vocab();
        let mut store = ParamStore::<f32>::new();
        let mut pb = ParamBuilder::new(&mut store, 5);
        let bidir = BidirQuestionEncoder::new(&mut pb.scoped("bidir"), &EncoderConfig::new(8, 24, false), v.len());
        let causal = CausalQuestionEncoder::new(&mut pb.scoped("causal"), &EncoderConfig::new(12, 24, true), v.len());
        let q = "what is the parent of the section titled 1 . 2 results ?";
        let short = encode_text(q, &v, 16).unwrap();
        let long = encode_text(q, &v, 24).unwrap();
        let run = |e: &Encoded| {
            let mut s = Session::new(&store);
            let a = bidir.encode(&mut s, e).unwrap();
            let b = causal.encode(&mut s, e).unwrap();
            (s.tape.value(a).clone(), s.tape.value(b).clone())
        };
        let (a1, b1) = run(&short);
        let (a2, b2) = run(&long);
        assert_eq!(a1.shape(), &[1, 8]);
        assert_eq!(b1.shape(), &[1, 12]);
        for (x, y) in a1.data().iter().zip(a2.data()).chain(b1.data().iter().zip(b2.data())) {
            assert!((x - y).abs() <= 1e-6);
        }
        let (a3, _) = run(&short);
        assert_eq!(bits(&a1), bits(&a3));

        let mut s = Session::new(&store);
        let all_pad = Encoded {
            ids: vec![0; 4],
            mask: vec![false; 4],
        };
        assert!(matches!(causal.encode(&mut s, &all_pad), Err(Error::Contract(_))));
    }

    #[test]
    fn content_encoder_sees_the_bbox() {
        let v = vocab();
        let mut store = ParamStore::<f32>::new();
        let enc = ContentEncoder::new(
            &mut ParamBuilder::new(&mut store, 9),
            &EncoderConfig::new(8, 12, false),
            v.len(),
        );
        let text = encode_text("1 . 2 results", &v, 12).unwrap();
        let run = |b: [f32; 4]| {
            let mut s = Session::new(&store);
            let f = enc.encode(&mut s, &text, b).unwrap();
            s.tape.value(f).clone()
        };
        let a = run([0.1, 0.1, 0.9, 0.2]);
        let b = run([0.1, 0.5, 0.9, 0.7]);
        assert_eq!(a.shape(), &[1, 8]);
        assert_eq!(bits(&a), bits(&run([0.1, 0.1, 0.9, 0.2])));
        assert_ne!(bits(&a), bits(&b));

        let mut s = Session::new(&store);
        assert!(matches!(
            enc.encode(&mut s, &text, [0.5, 0.1, 0.5, 0.2]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            enc.encode(&mut s, &text, [0.1, 0.1, 1.5, 0.2]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn visual_encoder_cases() {
        let cfg = VisualConfig {
            d_vis: 6,
            hidden: 10,
            d_out: 4,
        };
        let mut store = ParamStore::<f32>::new();
        let enc = VisualEncoder::new(&mut ParamBuilder::new(&mut store, 4), &cfg);
        let mut s = Session::new(&store);
        let zeros = s.constant(Tensor::zeros(&[3, 6]));
        let out = enc.encode(&mut s, zeros).unwrap();
        assert_eq!(s.tape.shape(out), &[3, 4]);
        assert!(s.tape.value(out).data().iter().all(|&v| v == 0.0));

        let x = s.constant(Tensor::new(vec![1, 6], vec![0.3, -0.2, 0.9, 0.0, 0.1, 0.5]).unwrap());
        let a = enc.encode(&mut s, x).unwrap();
        let b = enc.encode(&mut s, x).unwrap();
        assert_eq!(s.tape.value(a), s.tape.value(b));

        let wrong = s.constant(Tensor::zeros(&[1, 5]));
        assert!(matches!(enc.encode(&mut s, wrong), Err(Error::Shape { .. })));
    }
}
