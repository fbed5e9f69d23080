//! Adaptive-moment (Adam) update with bias correction.

use serde::{Deserialize, Serialize};

use super::{Block, EncoderError, ModelParams, ParamGrads, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(EncoderError::Optimizer(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(EncoderError::Optimizer(format!("{name} {b} not in [0,1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(EncoderError::Optimizer("eps must be positive".into()));
        }
        Ok(())
    }
}

/// One Adam step over every block not listed in `frozen`.
///
/// Frozen blocks keep both their values and their moments.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    opt: &OptimizerConfig,
    frozen: &[Block],
) -> Result<()> {
    opt.validate()?;
    let t = params.advance_step() as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for b in Block::ALL {
        if frozen.contains(&b) {
            continue;
        }
        let g = grads.block(b);
        let (w, m, v) = params.parts_mut(b);
        if g.shape() != w.shape() {
            return Err(EncoderError::GradShape(format!(
                "{} gradient {:?} vs parameter {:?}",
                b.name(),
                g.shape(),
                w.shape()
            )));
        }
        let it = w
            .data_mut()
            .iter_mut()
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
            .zip(g.data());
        for (((wi, mi), vi), &gi) in it {
            *mi = opt.beta1 * *mi + (1.0 - opt.beta1) * gi;
            *vi = opt.beta2 * *vi + (1.0 - opt.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *wi -= opt.learning_rate * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ModelShape;
    use crate::numkit::Matrix;

    fn scalar_model() -> ModelParams {
        // Only the vision projection is non-empty: a 1x1 "scalar" parameter.
        let shape = ModelShape {
            src_vocab: 0,
            tgt_vocab: 0,
            feat_dim: 1,
            embed_dim: 0,
            output_dim: 1,
        };
        let blocks = Block::ALL
            .iter()
            .map(|&b| {
                let (r, c) = shape.block_dims(b);
                Matrix::filled(r, c, 0.5)
            })
            .collect();
        ModelParams::from_blocks(shape, blocks, 0).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let opt = OptimizerConfig::default();
        for g in [2.5, -0.003] {
            let mut p = scalar_model();
            let mut grads = ParamGrads::zeros(p.shape());
            grads.block_mut(Block::VisionProjection)[(0, 0)] = g;
            adam_step(&mut p, &grads, &opt, &[]).unwrap();
            let delta = p.block(Block::VisionProjection)[(0, 0)] - 0.5;
            let expected = -opt.learning_rate * g / ((g * g).sqrt() + opt.eps);
            assert!((delta - expected).abs() < 1e-15);
            assert!((delta + opt.learning_rate * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn frozen_blocks_do_not_move() {
        let mut p = scalar_model();
        let mut grads = ParamGrads::zeros(p.shape());
        grads.block_mut(Block::VisionProjection)[(0, 0)] = 1.0;
        adam_step(&mut p, &grads, &OptimizerConfig::default(), &[Block::VisionProjection]).unwrap();
        assert_eq!(p.block(Block::VisionProjection)[(0, 0)], 0.5);
        assert_eq!(p.moments(Block::VisionProjection).0[(0, 0)], 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = OptimizerConfig {
            beta1: 1.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
