//! Flow matching training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fm_loss, DataTarget, FlowSample};
use crate::nn::{opt_step, DenseNet, InputEncoding, OptConfig, OptState, RngStream, StepOutcome};
use crate::{Error, Result};

/// Configuration for [`train_flow`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub target: DataTarget,
    pub n_conditions: usize,
    /// Hidden layer widths of the velocity net.
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub steps: usize,
    pub opt: OptConfig,
    pub seed: u64,
}

impl FlowTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        self.opt.validate()?;
        if self.batch < 1 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidConfig("at least one hidden layer".into()));
        }
        Ok(())
    }
}

/// Per-step training metric.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepMetric {
    pub step: usize,
    pub loss: f64,
}

/// Draw one flow matching batch: `x0 ~ N(0, I)`, `x1 ~ target`,
/// `t ~ U[0, 1]`, condition uniform.
pub(crate) fn draw_batch<R: Rng>(
    target: &DataTarget,
    n_conditions: usize,
    batch: usize,
    rng: &mut R,
) -> Vec<FlowSample> {
    let d = target.dim();
    (0..batch)
        .map(|_| FlowSample {
            x0: crate::nn::standard_normal_vec(rng, d),
            x1: target.sample(rng),
            t: rng.gen::<f64>(),
            condition: if n_conditions > 0 {
                rng.gen_range(0..n_conditions)
            } else {
                0
            },
        })
        .collect()
}

/// Train a velocity net on the linear-OT flow matching objective.
///
/// Deterministic in `(config, seed)`: stream 0 initializes parameters,
/// stream 1 drives data sampling. A NaN loss aborts with the offending step.
pub fn train_flow(cfg: &FlowTrainConfig) -> Result<(DenseNet, Vec<StepMetric>)> {
    cfg.validate()?;
    let d = cfg.target.dim();
    let enc = InputEncoding::xt_fourier(d, cfg.n_conditions);
    let mut dims = vec![enc.width()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(d);

    let mut net = DenseNet::random(&dims, enc, RngStream::new(cfg.seed, 0))?;
    let mut state = OptState::new(&net, cfg.opt)?;
    let mut rng = RngStream::new(cfg.seed, 1).rng();
    let mut metrics = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = draw_batch(&cfg.target, cfg.n_conditions, cfg.batch, &mut rng);
        let (loss, grads) = fm_loss(&net, &batch)?;
        if !loss.is_finite() {
            log::error!("flow training diverged at step {step}");
            return Err(Error::Diverged { step });
        }
        if opt_step(&mut net, &grads, &mut state)? == StepOutcome::SkippedNonFinite {
            log::warn!("flow step {step}: non-finite gradient skipped");
        }
        metrics.push(StepMetric { step, loss });
    }
    Ok((net, metrics))
}
