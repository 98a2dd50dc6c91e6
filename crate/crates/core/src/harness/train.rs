use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Document;
use crate::error::{Error, Result};
use crate::fusion::{EncodedSample, JaegerModel};
use crate::numerics::{sgd_step, stream_id, stream_rng, ParamStore, Session, SgdConfig, Tensor};
use crate::tokenizer::Vocabulary;

use super::eval::evaluate_samples;
use super::{corpus_vocab, encode_corpus, TrainConfig};

/// A model with its parameters, vocabulary and the config that built it.
#[derive(Clone, Debug)]
pub struct Trained {
    pub config: TrainConfig,
    pub model: JaegerModel,
    pub params: ParamStore<f32>,
    pub vocab: Vocabulary,
}

impl Trained {
    /// Freshly initialized, untrained.
    pub fn init(config: &TrainConfig, vocab: Vocabulary) -> Result<Self> {
        let (model, params) = JaegerModel::build(&config.model, vocab.len(), config.seed)?;
        Ok(Self {
            config: config.clone(),
            model,
            params,
            vocab,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Steps completed by the end of this epoch.
    pub steps: usize,
    /// Mean per-question loss over the epoch.
    pub train_loss: f64,
    pub val_ema: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_samples: usize,
    pub steps: usize,
    pub epochs: Vec<EpochMetrics>,
    /// EMA of the final parameters on the training questions.
    pub train_ema: f64,
}

/// Splits the corpus by the config ratios and trains on the train split.
pub fn train(cfg: &TrainConfig, corpus: &[Document]) -> Result<(Trained, TrainReport)> {
    cfg.validate()?;
    let split = cfg.split_corpus(corpus)?;
    train_on(cfg, &split.train, &split.val)
}

/// Trains on `train_docs`, reporting EMA on `val_docs` after every epoch.
pub fn train_on(cfg: &TrainConfig, train_docs: &[Document], val_docs: &[Document]) -> Result<(Trained, TrainReport)> {
    cfg.validate()?;
    let vocab = corpus_vocab(train_docs, cfg.min_count);
    let mut samples = encode_corpus(train_docs, &vocab, &cfg.model)?;
    if let Some(limit) = cfg.max_train_samples {
        samples.truncate(limit);
    }
    if samples.is_empty() {
        return Err(Error::contract("training split has no questions"));
    }
    let val = encode_corpus(val_docs, &vocab, &cfg.model)?;
    let mut trained = Trained::init(cfg, vocab)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let budget = cfg.max_steps.map(|m| m - steps);
        let (loss, taken) = train_epoch(
            &trained.model,
            &mut trained.params,
            &samples,
            cfg,
            epoch,
            cfg.learning_rate,
            steps,
            budget,
        )?;
        steps += taken;
        let val_ema = if val.is_empty() {
            None
        } else {
            Some(evaluate_samples(&trained.model, &trained.params, &val, cfg.threshold)?.ema)
        };
        history.push(EpochMetrics {
            epoch,
            steps,
            train_loss: loss,
            val_ema,
        });
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    let train_ema = evaluate_samples(&trained.model, &trained.params, &samples, cfg.threshold)?.ema;
    let report = TrainReport {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        train_samples: samples.len(),
        steps,
        epochs: history,
        train_ema,
    };
    Ok((trained, report))
}

/// One pass over `samples` in a seeded order, averaging gradients over each
/// batch. `lr == 0` leaves the parameters untouched. Stops after `budget`
/// steps when given. Returns the mean loss of the visited questions and the
/// number of steps taken.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &JaegerModel,
    params: &mut ParamStore<f32>,
    samples: &[EncodedSample],
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
    step_offset: usize,
    budget: Option<usize>,
) -> Result<(f64, usize)> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    let sgd = (lr > 0.0).then(|| SgdConfig::new(lr)).transpose()?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, stream_id(&format!("epoch.{epoch}"))));

    let (mut loss_sum, mut visited, mut taken) = (0.0, 0usize, 0usize);
    for batch in order.chunks(cfg.batch_size) {
        if budget.is_some_and(|b| taken >= b) {
            break;
        }
        let step = step_offset + taken;
        let mut acc: Vec<Tensor<f32>> = params.zeros_like();
        for &i in batch {
            let mut s = Session::new(params);
            let (_, loss) = model.loss(&mut s, &samples[i])?;
            let value = s.tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    step,
                    epoch,
                    loss: value,
                });
            }
            s.tape.backward(loss)?;
            for (a, g) in acc.iter_mut().zip(s.param_grads()) {
                a.add_assign(&g);
            }
            loss_sum += value;
            visited += 1;
        }
        let inv = 1.0 / batch.len() as f32;
        for a in &mut acc {
            for v in a.data_mut() {
                *v *= inv;
            }
            if !a.is_finite() {
                return Err(Error::Divergence {
                    step,
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        if let Some(sgd) = &sgd {
            sgd_step(params, &acc, sgd)?;
        }
        taken += 1;
    }
    Ok((loss_sum / visited.max(1) as f64, taken))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, GenConfig};
    use crate::fusion::ModelConfig;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 2,
            batch_size: 4,
            model: ModelConfig::tiny(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let docs = generate_corpus(4, 4, &GenConfig::default()).unwrap();
        let cfg = tiny_cfg();
        let vocab = corpus_vocab(&docs, 1);
        let samples = encode_corpus(&docs, &vocab, &cfg.model).unwrap();
        let mut t = Trained::init(&cfg, vocab).unwrap();
        let before = t.params.clone();
        let (loss, steps) = train_epoch(&t.model, &mut t.params, &samples, &cfg, 0, 0.0, 0, None).unwrap();
        assert!(loss.is_finite() && steps == 4);
        for ((_, a), (_, b)) in before.iter().zip(t.params.iter()) {
            assert_eq!(
                a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let (_, steps) = train_epoch(&t.model, &mut t.params, &samples, &cfg, 0, 0.05, 0, None).unwrap();
        assert_eq!(steps, 4);
        assert_ne!(before.by_name("fusion.reduce.w"), t.params.by_name("fusion.reduce.w"));
    }

    #[test]
    fn fixed_seed_reproduces_history() {
        let docs = generate_corpus(6, 10, &GenConfig::default()).unwrap();
        let cfg = tiny_cfg();
        let (a, ra) = train(&cfg, &docs).unwrap();
        let (b, rb) = train(&cfg, &docs).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.epochs.len(), 2);
        for ((_, x), (_, y)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(
                x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn step_budget_and_divergence() {
        let docs = generate_corpus(6, 10, &GenConfig::default()).unwrap();
        let cfg = TrainConfig {
            max_steps: Some(3),
            epochs: 5,
            ..tiny_cfg()
        };
        let (_, report) = train(&cfg, &docs).unwrap();
        assert_eq!(report.steps, 3);

        let cfg = TrainConfig {
            learning_rate: 1e30,
            epochs: 3,
            ..tiny_cfg()
        };
        match train(&cfg, &docs) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
