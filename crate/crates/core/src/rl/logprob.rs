//! Transition log-probabilities, importance ratios, and the distillation
//! residual decomposition.

use serde::Serialize;

use crate::dynamics::{
    drift_eval_time, flow_drift, guidance_term, log_prob_kernel, policy_mean, DriftMode,
    GuidanceConfig, NoiseSchedule, PolicyMode, TimeGrid, Trajectory,
};
use crate::nn::DenseNet;
use crate::{Error, Result};

/// Log-density of reaching `x_next` from `x` under the policy's Gaussian
/// transition kernel.
///
/// The mean follows the mode: `Standard` includes the reward-guidance term,
/// `Distill` is flow-only. Deterministic steps (`eps = 0`) have a degenerate
/// kernel and are rejected.
#[allow(clippy::too_many_arguments)]
pub fn log_prob(
    net: &DenseNet,
    prm: Option<&DenseNet>,
    x: &[f64],
    x_next: &[f64],
    t: f64,
    c: usize,
    eps: f64,
    dt: f64,
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
    mode: PolicyMode,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(
            "log_prob is undefined on deterministic steps (eps = 0)".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("dt must be > 0".into()));
    }
    let mu = policy_mean(net, prm, x, t, c, dt, schedule, guidance, mode)?;
    Ok(log_prob_kernel(x_next, &mu, eps, dt))
}

/// `ω = exp(log π_new - log π_old)`, clamping the exponent to ±`log_clamp`.
///
/// Returns the ratio and whether the clamp fired (callers log the event).
/// The per-step normalizing constants cancel in the difference.
pub fn importance_ratio(logp_new: f64, logp_old: f64, log_clamp: f64) -> (f64, bool) {
    let diff = logp_new - logp_old;
    if diff.abs() > log_clamp {
        (diff.clamp(-log_clamp, log_clamp).exp(), true)
    } else {
        (diff.exp(), false)
    }
}

/// Residual decomposition report for guided transitions.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// Worst componentwise error over the checked steps.
    pub max_abs_error: f64,
    pub steps_checked: usize,
}

/// Verify, from stored rollout quantities, that each stochastic transition of
/// a guided rollout decomposes as
///
/// ```text
/// x_{k+1} - mu_flow(θ_old) = sqrt(2·eps·dt)·z + dt·lambda·∇_x r_p(x_k, t_k)
/// ```
///
/// i.e. the deviation from the flow-only mean is exactly the injected noise
/// plus the reward-gradient displacement. This is pure bookkeeping — both
/// sides are recomputed from the trajectory and the frozen behavior nets — so
/// the error should sit at rounding level.
pub fn distill_residual_check(
    traj: &Trajectory,
    behavior_net: &DenseNet,
    prm: &DenseNet,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
) -> Result<ResidualReport> {
    traj.validate()?;
    let c = traj.condition;
    let mut max_abs_error = 0.0f64;
    let mut steps_checked = 0usize;

    for k in 0..traj.steps() {
        let eps_k = schedule.eps_at(k, traj.steps());
        if eps_k <= 0.0 {
            continue;
        }
        let t_k = grid.node(k);
        let dt = grid.dt(k);
        let x = &traj.states[k];
        let x_next = &traj.states[k + 1];
        let z = &traj.noises[k];

        let t_eval = drift_eval_time(t_k);
        let flow = flow_drift(behavior_net, x, t_eval, c, schedule.eps)?;
        let guid = guidance_term(prm, x, t_eval, c, guidance.lambda, schedule)?;
        let s = (2.0 * eps_k * dt).sqrt();
        for i in 0..x.len() {
            let lhs = x_next[i] - (x[i] + dt * flow[i]);
            let rhs = s * z[i] + dt * guid[i];
            max_abs_error = max_abs_error.max((lhs - rhs).abs());
        }
        steps_checked += 1;
    }
    Ok(ResidualReport {
        max_abs_error,
        steps_checked,
    })
}

/// Convenience: the residual check expects a guided rollout; unguided
/// trajectories reduce to `residual = sqrt(2·eps·dt)·z`, which the same
/// formula covers with a zero guidance term.
pub fn residual_is_pure_noise(guidance: &GuidanceConfig) -> bool {
    guidance.lambda == 0.0 || guidance.mode != DriftMode::SdeGuided
}
