//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::grad::GradBuffer;
use super::net::DenseNet;
use crate::{Error, Result};

/// Optimizer hyperparameters.
///
/// Defaults are desk-scale: lr 1e-3, betas (0.9, 0.999), decay 1e-4. All are
/// overridable through experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl OptConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("optimizer config {self:?}")))
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    m: GradBuffer,
    v: GradBuffer,
    step: u64,
    pub config: OptConfig,
}

/// What [`opt_step`] did with the proposed update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN/Inf; parameters and moments untouched.
    SkippedNonFinite,
}

impl OptState {
    pub fn new(net: &DenseNet, config: OptConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            m: GradBuffer::zeros_like(net),
            v: GradBuffer::zeros_like(net),
            step: 0,
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update:
///
/// ```text
/// m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
/// p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// ```
///
/// with bias-corrected `m_hat = m / (1 - b1^k)`, `v_hat = v / (1 - b2^k)`.
/// The decay term multiplies the parameter, not the gradient, so a zero
/// gradient with decay `d` scales every parameter by `1 - lr·d`.
pub fn opt_step(net: &mut DenseNet, grads: &GradBuffer, state: &mut OptState) -> Result<StepOutcome> {
    if grads.weights.len() != net.weights.len() || grads.biases.len() != net.biases.len() {
        return Err(Error::ShapeMismatch {
            context: "gradient layer count",
            expected: net.weights.len(),
            got: grads.weights.len(),
        });
    }
    if !grads.is_finite() {
        log::warn!("skipping optimizer step: non-finite gradient");
        return Ok(StepOutcome::SkippedNonFinite);
    }

    state.step += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);

    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * p[i]);
        }
    };
    for l in 0..net.weights.len() {
        update(
            &mut net.weights[l],
            &grads.weights[l],
            &mut state.m.weights[l],
            &mut state.v.weights[l],
        );
        update(
            &mut net.biases[l],
            &grads.biases[l],
            &mut state.m.biases[l],
            &mut state.v.biases[l],
        );
    }
    net.check_finite()?;
    Ok(StepOutcome::Applied)
}
