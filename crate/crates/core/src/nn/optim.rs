use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::param::ParamSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon_stability: f64,
    pub grad_clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            decay: 0.99,
            epsilon_stability: 1e-5,
            grad_clip_norm: Some(10.0),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config("decay must lie in (0, 1)".into()));
        }
        if !(self.epsilon_stability > 0.0) {
            return Err(Error::Config("epsilon_stability must be > 0".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip_norm must be > 0 when set".into()));
            }
        }
        Ok(())
    }
}

/// RMSProp with optional global-norm gradient clipping.
///
/// `sq ← decay·sq + (1−decay)·g²`, `p ← p − α·g / (√sq + ε)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub cfg: OptimizerConfig,
    square_avg: Vec<ArrayD<f64>>,
}

impl RmsProp {
    pub fn new(cfg: OptimizerConfig, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            square_avg: params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect(),
        })
    }

    /// Applies one update to every parameter.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<f64> {
        self.step_filtered(params, |_| true)
    }

    /// Applies one update to the parameters accepted by `trainable`. Returns the
    /// pre-clipping gradient norm over the trainable parameters.
    pub fn step_filtered(
        &mut self,
        params: &mut ParamSet,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<f64> {
        if self.square_avg.len() != params.len() {
            return Err(Error::dim(
                "optimizer state",
                self.square_avg.len(),
                params.len(),
            ));
        }
        let mut sq_norm = 0.0;
        for p in params.iter().filter(|p| trainable(&p.name)) {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
            }
            sq_norm += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
        let norm = sq_norm.sqrt();
        let scale = match self.cfg.grad_clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };

        let OptimizerConfig {
            learning_rate: lr,
            decay,
            epsilon_stability: eps,
            ..
        } = self.cfg;
        for (p, sq) in params.iter_mut().zip(self.square_avg.iter_mut()) {
            if !trainable(&p.name) {
                continue;
            }
            let Some(vals) = p.value.as_slice_mut() else {
                unreachable!("parameters are contiguous")
            };
            let grads = p.grad.as_slice().expect("contiguous");
            let sqs = sq.as_slice_mut().expect("contiguous");
            for ((v, &g), s) in vals.iter_mut().zip(grads).zip(sqs.iter_mut()) {
                let g = g * scale;
                *s = decay * *s + (1.0 - decay) * g * g;
                *v -= lr * g / (s.sqrt() + eps);
            }
        }
        params.step_count += 1;
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn scalar(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("w", ArrayD::from_elem(IxDyn(&[1]), v)).unwrap();
        ps
    }

    #[test]
    fn zero_grad_is_a_no_op() {
        let mut ps = scalar(1.5);
        let mut opt = RmsProp::new(OptimizerConfig::default(), &ps).unwrap();
        for _ in 0..10 {
            opt.step(&mut ps).unwrap();
        }
        assert_eq!(ps.by_name("w").unwrap().value[[0]], 1.5);
        assert_eq!(ps.step_count, 10);
    }

    #[test]
    fn constant_grad_update_tends_to_learning_rate() {
        let cfg = OptimizerConfig {
            learning_rate: 0.01,
            grad_clip_norm: None,
            ..Default::default()
        };
        let mut ps = scalar(0.0);
        let mut opt = RmsProp::new(cfg, &ps).unwrap();
        let g = 3.0;
        let mut last = 0.0;
        for _ in 0..5000 {
            ps.by_name_mut("w").unwrap().grad[[0]] = g;
            let before = ps.by_name("w").unwrap().value[[0]];
            opt.step(&mut ps).unwrap();
            last = before - ps.by_name("w").unwrap().value[[0]];
        }
        // fixed point: sq = g², step = α·g/(|g|+ε)
        let expected = 0.01 * g / (g + 1e-5);
        assert!((last - expected).abs() < 1e-9, "{last} vs {expected}");
        assert!((last - 0.01).abs() < 1e-7);
    }

    #[test]
    fn clipping_scales_gradient() {
        let cfg = OptimizerConfig {
            learning_rate: 1.0,
            decay: 0.5,
            epsilon_stability: 1e-12,
            grad_clip_norm: Some(1.0),
        };
        let mut ps = ParamSet::new();
        ps.add("a", ArrayD::zeros(IxDyn(&[2]))).unwrap();
        ps.by_name_mut("a").unwrap().grad.as_slice_mut().unwrap().copy_from_slice(&[6.0, 8.0]);
        let mut opt = RmsProp::new(cfg, &ps).unwrap();
        let norm = opt.step(&mut ps).unwrap();
        assert_eq!(norm, 10.0);
        // effective grad (0.6, 0.8); sq = 0.5·g², step = g/√(0.5 g²) = √2 per coordinate
        let sq = &opt.square_avg[0];
        assert!((sq[[0]] - 0.5 * 0.36).abs() < 1e-15);
        assert!((sq[[1]] - 0.5 * 0.64).abs() < 1e-15);
    }

    #[test]
    fn non_finite_grad_names_parameter() {
        let mut ps = scalar(0.0);
        ps.by_name_mut("w").unwrap().grad[[0]] = f64::NAN;
        let mut opt = RmsProp::new(OptimizerConfig::default(), &ps).unwrap();
        let err = opt.step(&mut ps).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn rejects_non_positive_learning_rate() {
        let cfg = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(RmsProp::new(cfg, &scalar(0.0)).is_err());
    }
}
