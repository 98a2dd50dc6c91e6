use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::{Real, Tensor};

/// Plain stochastic gradient descent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    learning_rate: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        Ok(Self { learning_rate })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }
}

/// `p <- p - lr * g` for every parameter, in store order.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, grads: &[Tensor<T>], cfg: &SgdConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("sgd_step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.tensors().iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("sgd_step", p.shape(), g.shape()));
        }
    }
    let lr = T::from_f64(cfg.learning_rate);
    for (p, g) in params.tensors_mut().zip(grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv = *pv - lr * gv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(value: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::vector(vec![value]));
        s
    }

    #[test]
    fn single_step() {
        let mut s = store(1.0);
        sgd_step(&mut s, &[Tensor::vector(vec![0.5])], &SgdConfig::new(0.1).unwrap()).unwrap();
        assert!((s.tensors()[0].data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store(0.3);
        sgd_step(&mut s, &[Tensor::vector(vec![0.0])], &SgdConfig::new(0.1).unwrap()).unwrap();
        assert_eq!(s.tensors()[0].data()[0].to_bits(), 0.3f32.to_bits());
    }

    #[test]
    fn accepts_fine_tuning_rate_verbatim() {
        let cfg = SgdConfig::new(1e-6).unwrap();
        assert_eq!(cfg.learning_rate(), 1e-6);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: SgdConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.learning_rate(), 1e-6);
    }

    #[test]
    fn rejects_non_positive_rates() {
        assert!(SgdConfig::new(0.0).is_err());
        assert!(SgdConfig::new(-1.0).is_err());
        assert!(SgdConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = store(1.0);
        let err = sgd_step(&mut s, &[Tensor::vector(vec![0.0, 1.0])], &SgdConfig::new(0.1).unwrap());
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
