use std::thread;

use serde::{Deserialize, Serialize};

use crate::data::{generate_document, generate_questions, GenConfig};
use crate::error::{Error, Result};
use crate::fusion::{encode_sample, EncodedSample, JaegerModel, ModelConfig};
use crate::numerics::{relative_error, BackwardFault, ParamId, ParamStore, Session, FD_STEP};

use super::corpus_vocab;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub tolerance: f64,
    pub step: f64,
    pub seed: u64,
    pub candidates: usize,
    pub threads: usize,
    #[doc(hidden)]
    pub fault: Option<BackwardFault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            tolerance: GRADCHECK_TOLERANCE,
            step: FD_STEP,
            seed: 7,
            candidates: 4,
            threads: thread::available_parallelism().map_or(1, |n| n.get()),
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub tolerance: f64,
    pub max_rel_error: f64,
    /// Parameter holding `max_rel_error`.
    pub worst: String,
    /// Parameters above tolerance, in store order.
    pub failing: Vec<String>,
    pub scalars: usize,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn summary(&self) -> String {
        if self.passed {
            format!(
                "gradcheck PASS: max relative error {:.3e} <= {:.0e} over {} parameters ({} scalars)",
                self.max_rel_error,
                self.tolerance,
                self.params.len(),
                self.scalars
            )
        } else {
            format!(
                "gradcheck FAIL: max relative error {:.3e} > {:.0e} in {}; failing: {}",
                self.max_rel_error,
                self.tolerance,
                self.worst,
                self.failing.join(", ")
            )
        }
    }
}

/// One synthetic question over a document with `candidates` elements.
pub fn gradcheck_sample(cfg: &ModelConfig, seed: u64, candidates: usize) -> Result<(EncodedSample, usize)> {
    let gen = GenConfig {
        n_pages: 1,
        elements_per_page: [candidates, candidates],
        d_vis: cfg.visual.d_vis,
        ..GenConfig::default()
    };
    let mut doc = generate_document("gradcheck", seed, &gen)?;
    doc.questions = generate_questions(&doc, seed, 2 * candidates)?;
    let vocab = corpus_vocab(std::slice::from_ref(&doc), 1);
    let qa = doc
        .questions
        .iter()
        .find(|q| !q.answers.is_empty())
        .ok_or_else(|| Error::contract("gradcheck document has no answerable question"))?;
    Ok((encode_sample(&doc, qa, &vocab, cfg)?, vocab.len()))
}

fn loss_at(model: &JaegerModel, store: &ParamStore<f64>, sample: &EncodedSample) -> Result<f64> {
    let mut s = Session::new(store);
    let (_, loss) = model.loss(&mut s, sample)?;
    Ok(s.tape.value(loss).item())
}

/// Compares backpropagated gradients of the mean BCE loss with 64-bit
/// central differences over every scalar of every parameter.
pub fn gradcheck(cfg: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let (sample, vocab_size) = gradcheck_sample(cfg, opts.seed, opts.candidates)?;
    let (model, store) = JaegerModel::build::<f64>(cfg, vocab_size, opts.seed)?;

    let analytic = {
        let mut s = Session::new(&store);
        let (_, loss) = model.loss(&mut s, &sample)?;
        if let Some(f) = opts.fault {
            s.tape.inject_fault(f);
        }
        s.tape.backward(loss)?;
        s.param_grads()
    };

    let jobs: Vec<(usize, usize)> = store
        .iter()
        .enumerate()
        .flat_map(|(p, (_, t))| (0..t.numel()).map(move |i| (p, i)))
        .collect();
    let threads = opts.threads.max(1);
    let chunk = jobs.len().div_ceil(threads).max(1);
    let numeric: Vec<f64> = thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                let (model, sample, mut probe) = (&model, &sample, store.clone());
                let (analytic, opts) = (&analytic, opts);
                scope.spawn(move || -> Result<Vec<f64>> {
                    let ids: Vec<ParamId> = probe.ids().collect();
                    part.iter()
                        .map(|&(p, i)| {
                            let a = analytic[p].data()[i];
                            let mut best = f64::INFINITY;
                            let mut value = 0.0;
                            // a smaller step rescues probes that straddle a relu kink
                            for h in [opts.step, opts.step * 0.1] {
                                let n = central_difference(model, &mut probe, ids[p], i, h, sample)?;
                                let e = relative_error(a, n, GRADCHECK_FLOOR);
                                if e < best {
                                    best = e;
                                    value = n;
                                }
                                if best <= opts.tolerance {
                                    break;
                                }
                            }
                            Ok(value)
                        })
                        .collect()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(jobs.len());
        for h in handles {
            out.extend(h.join().expect("gradcheck worker panicked")?);
        }
        Ok::<_, Error>(out)
    })?;

    let mut params: Vec<ParamCheck> = store
        .iter()
        .map(|(name, t)| ParamCheck {
            name: name.to_string(),
            numel: t.numel(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        })
        .collect();
    for (&(p, i), &n) in jobs.iter().zip(&numeric) {
        let a = analytic[p].data()[i];
        let c = &mut params[p];
        let e = relative_error(a, n, GRADCHECK_FLOOR);
        c.max_rel_error = c.max_rel_error.max(if e.is_nan() { f64::INFINITY } else { e });
        c.max_abs_error = c.max_abs_error.max((a - n).abs());
    }
    let worst = params
        .iter()
        .fold(None::<&ParamCheck>, |w, c| match w {
            Some(w) if w.max_rel_error >= c.max_rel_error => Some(w),
            _ => Some(c),
        })
        .map(|c| (c.name.clone(), c.max_rel_error))
        .unwrap_or_default();
    let failing: Vec<String> = params
        .iter()
        .filter(|c| c.max_rel_error.is_nan() || c.max_rel_error > opts.tolerance)
        .map(|c| c.name.clone())
        .collect();
    Ok(GradcheckReport {
        passed: failing.is_empty(),
        tolerance: opts.tolerance,
        max_rel_error: worst.1,
        worst: worst.0,
        failing,
        scalars: jobs.len(),
        params,
    })
}

fn central_difference(
    model: &JaegerModel,
    probe: &mut ParamStore<f64>,
    id: ParamId,
    i: usize,
    h: f64,
    sample: &EncodedSample,
) -> Result<f64> {
    let orig = probe.get(id).data()[i];
    probe.get_mut(id).data_mut()[i] = orig + h;
    let up = loss_at(model, probe, sample)?;
    probe.get_mut(id).data_mut()[i] = orig - h;
    let down = loss_at(model, probe, sample)?;
    probe.get_mut(id).data_mut()[i] = orig;
    Ok((up - down) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_has_requested_candidates() {
        let (s, v) = gradcheck_sample(&ModelConfig::tiny(), 7, 4).unwrap();
        assert_eq!(s.elements.len(), 4);
        assert!(s.targets.iter().any(|&t| t));
        assert!(v > 4);
    }
}
