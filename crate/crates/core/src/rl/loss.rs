//! The clipped group-relative surrogate and its exact gradient.

use super::logprob::importance_ratio;
use super::{GroupBatch, GrpoConfig};
use crate::dynamics::{
    drift_eval_time, log_prob_kernel, policy_mean, DriftMode, GuidanceConfig, NoiseSchedule,
    TimeGrid,
};
use crate::nn::{DenseNet, GradBuffer};
use crate::{parallel, Error, Result};

/// Exponent clamp for importance ratios; beyond this the ratio is saturated
/// and the event counted.
pub(crate) const RATIO_LOG_CLAMP: f64 = 60.0;

/// Loss value, exact parameter gradients, and diagnostics.
#[derive(Debug)]
pub struct GrpoLossReport {
    pub loss: f64,
    pub grads: GradBuffer,
    /// Fraction of transitions where the clipped branch was strictly smaller
    /// (gradient blocked).
    pub clip_fraction: f64,
    /// Importance-ratio exponent clamps.
    pub ratio_clamps: usize,
    pub transitions: usize,
}

struct TransitionRef {
    batch: usize,
    member: usize,
    step: usize,
}

/// Evaluate the surrogate
///
/// ```text
/// L(θ) = -mean over stochastic transitions of
///        min( ω·A, clip(ω, 1-ε, 1+ε)·A )
/// ```
///
/// with `ω = π_θ / π_old` from stored behavior log-probabilities. Gradients
/// flow through the unclipped branch wherever it attains the min (ties
/// included); the clipped branch is constant in `θ` outside the band.
pub fn grpo_loss(
    batches: &[GroupBatch],
    net: &DenseNet,
    prm: Option<&DenseNet>,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
    cfg: &GrpoConfig,
) -> Result<GrpoLossReport> {
    cfg.validate()?;
    if batches.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if guidance.mode == DriftMode::Ode {
        return Err(Error::InvalidConfig(
            "the surrogate needs stochastic transitions; ODE mode has none".into(),
        ));
    }

    let mut transitions = Vec::new();
    for (b, batch) in batches.iter().enumerate() {
        if batch.advantages.is_empty() {
            return Err(Error::InvalidConfig(
                "advantages must be computed before the loss".into(),
            ));
        }
        let steps = batch.steps();
        for i in 0..batch.trajectories.len() {
            for k in 0..steps {
                if schedule.eps_at(k, steps) > 0.0 && batch.trajectories[i].logp_old[k].is_some() {
                    transitions.push(TransitionRef {
                        batch: b,
                        member: i,
                        step: k,
                    });
                }
            }
        }
    }
    if transitions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = transitions.len() as f64;

    struct Piece {
        objective: f64,
        grads: Option<GradBuffer>,
        clipped: bool,
        clamped: bool,
    }

    let pieces = parallel::par_map(&transitions, |tr| -> Result<Piece> {
        let batch = &batches[tr.batch];
        let traj = &batch.trajectories[tr.member];
        let (k, c) = (tr.step, batch.condition);
        let x = &traj.states[k];
        let x_next = &traj.states[k + 1];
        let t_k = grid.node(k);
        let dt = grid.dt(k);
        let eps = schedule.eps_at(k, batch.steps());
        let advantage = batch.advantages[tr.member][k];
        let logp_old = traj.logp_old[k].expect("filtered to stored steps");

        let mu = policy_mean(net, prm, x, t_k, c, dt, schedule, guidance, cfg.mode)?;
        let logp = log_prob_kernel(x_next, &mu, eps, dt);
        let (omega, clamped) = importance_ratio(logp, logp_old, RATIO_LOG_CLAMP);

        let unclipped = omega * advantage;
        let clipped_ratio = omega.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let clipped = clipped_ratio * advantage;
        let take_unclipped = unclipped <= clipped;
        let objective = unclipped.min(clipped);

        let grads = if take_unclipped && advantage != 0.0 {
            // dμ/dθ = dt·a_t·du/dθ; dlogπ/dθ = (x_next - μ)ᵀ dμ/dθ / (2·eps·dt).
            let t_eval = drift_eval_time(t_k);
            let a_t = 1.0 + t_eval * schedule.eps / (1.0 - t_eval);
            let coef = -(1.0 / n) * advantage * omega * a_t / (2.0 * eps);
            let upstream: Vec<f64> = x_next
                .iter()
                .zip(&mu)
                .map(|(xn, m)| coef * (xn - m))
                .collect();
            Some(net.param_grad(x, t_eval, c, &upstream)?)
        } else {
            None
        };

        Ok(Piece {
            objective,
            grads,
            clipped: clipped < unclipped,
            clamped,
        })
    });

    let mut loss = 0.0;
    let mut grads = GradBuffer::zeros_like(net);
    let mut clip_count = 0usize;
    let mut ratio_clamps = 0usize;
    for piece in pieces {
        let piece = piece?;
        loss -= piece.objective / n;
        if let Some(g) = piece.grads {
            grads.add_scaled(1.0, &g);
        }
        if piece.clipped {
            clip_count += 1;
        }
        if piece.clamped {
            ratio_clamps += 1;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "grpo surrogate loss".into(),
        });
    }
    Ok(GrpoLossReport {
        loss,
        grads,
        clip_fraction: clip_count as f64 / n,
        ratio_clamps,
        transitions: transitions.len(),
    })
}
