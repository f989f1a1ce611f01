//! Time discretization and the three samplers.
//!
//! Forward time runs from `t = 0` (noise) to `t = 1` (data). Sampling
//! integrates the SDE
//!
//! ```text
//! dX = [ (1 + t·eps/(1-t)) u(X, t) - (eps/(1-t)) X + lambda ∇_x r_p(X, t) ] dt
//!      + sqrt(2 eps) dW
//! ```
//!
//! by Euler-Maruyama over a shifted grid. The first two drift terms are the
//! stochastic dynamics intrinsic to the flow (`eps = 0` recovers the
//! probability-flow ODE); the third steers each step up the process-reward
//! gradient inside a configurable time window. With the reward term switched
//! off the drift is algebraically identical to the reverse-time samplers used
//! by prior flow RL work, which [`equivalence_check`] verifies numerically.

mod flowgrpo;
mod rollout;

pub use flowgrpo::{equivalence_check, flowgrpo_drift, EquivalenceReport, FlowGrpoFrame};
pub use rollout::{rollout, PolicyMode, RolloutSetup, StepRecord, Trajectory};

use serde::{Deserialize, Serialize};

use crate::nn::DenseNet;
use crate::{vecops, Error, Result, TIME_GUARD};

/// Shifted time grid `t_k = s·u / (1 + (s-1)·u)` with `u = k/T`.
///
/// `s = 1` is the uniform grid; larger shifts crowd nodes toward `t = 1`.
/// Endpoints are exactly 0 and 1; the drift is never evaluated at the final
/// node.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(step_count: usize, shift: f64) -> Result<Self> {
        if step_count < 2 {
            return Err(Error::InvalidConfig("grid needs at least 2 steps".into()));
        }
        if !(shift > 0.0) {
            return Err(Error::InvalidConfig("time shift must be > 0".into()));
        }
        let t_count = step_count as f64;
        let nodes = (0..=step_count)
            .map(|k| {
                let u = k as f64 / t_count;
                shift * u / (1.0 + (shift - 1.0) * u)
            })
            .collect();
        Ok(Self { nodes })
    }

    pub fn uniform(step_count: usize) -> Result<Self> {
        Self::new(step_count, 1.0)
    }

    /// Number of integration steps `T` (one less than the node count).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Diffusion coefficient and guidance window.
///
/// `eps` is constant over the trajectory; the final step can be forced
/// deterministic to avoid the `1/(1-t)` singularity, in which case it is
/// excluded from every log-probability computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub eps: f64,
    /// Guidance active for `t` in `[window.0, window.1]`.
    pub window: (f64, f64),
    pub final_step_deterministic: bool,
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.eps < 0.0 {
            return Err(Error::InvalidConfig("eps must be >= 0".into()));
        }
        if self.window.0 > self.window.1 {
            return Err(Error::InvalidConfig("guidance window is inverted".into()));
        }
        Ok(())
    }

    /// Diffusion coefficient at step `k` of a `T`-step trajectory.
    pub fn eps_at(&self, k: usize, step_count: usize) -> f64 {
        if self.final_step_deterministic && k + 1 == step_count {
            0.0
        } else {
            self.eps
        }
    }

    pub fn in_window(&self, t: f64) -> bool {
        t >= self.window.0 && t <= self.window.1
    }
}

/// Sampler variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Deterministic probability-flow ODE: drift is `u` alone, no noise.
    Ode,
    /// Stochastic dynamics of the flow, no reward term.
    SdeUnguided,
    /// Stochastic dynamics plus the reward-gradient correction.
    SdeGuided,
}

/// Reward-guidance strength.
///
/// `lambda` scales the reward gradient in the drift; deriving it as
/// `eps / beta` recovers the KL-regularized dynamics where `beta` is the
/// penalty strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub beta: f64,
    pub lambda: f64,
    pub mode: DriftMode,
}

impl GuidanceConfig {
    /// `lambda = eps / beta`.
    pub fn derived(beta: f64, eps: f64, mode: DriftMode) -> Self {
        Self {
            beta,
            lambda: eps / beta,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig("beta must be > 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_mode(self, mode: DriftMode) -> Self {
        Self { mode, ..self }
    }
}

/// Clamp a drift-evaluation time away from the `t = 1` singularity.
pub fn drift_eval_time(t: f64) -> f64 {
    t.min(1.0 - TIME_GUARD)
}

/// The flow part of the drift given an already-evaluated velocity.
pub(crate) fn flow_drift_from_velocity(u: &[f64], x: &[f64], t: f64, eps: f64) -> Vec<f64> {
    let a = 1.0 + t * eps / (1.0 - t);
    let b = eps / (1.0 - t);
    u.iter().zip(x).map(|(ui, xi)| a * ui - b * xi).collect()
}

/// Stochastic-flow drift `(1 + t·eps/(1-t)) u(x,t) - (eps/(1-t)) x`.
///
/// With `eps = 0` this is exactly the ODE velocity. Rejects `t` beyond the
/// singularity guard; samplers clamp with [`drift_eval_time`] first.
pub fn flow_drift(net: &DenseNet, x: &[f64], t: f64, c: usize, eps: f64) -> Result<Vec<f64>> {
    if t > 1.0 - TIME_GUARD {
        return Err(Error::TimeOutOfRange {
            t,
            limit: 1.0 - TIME_GUARD,
        });
    }
    let u = net.forward(x, t, c)?;
    Ok(flow_drift_from_velocity(&u, x, t, eps))
}

/// Reward-gradient drift correction `lambda · ∇_x r_p(x, t, c)`, gated to the
/// guidance window. Outside the window (or at `lambda = 0`) it is the zero
/// vector and the reward model is not evaluated.
pub fn guidance_term(
    prm: &DenseNet,
    x: &[f64],
    t: f64,
    c: usize,
    lambda: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if lambda == 0.0 || !schedule.in_window(t) {
        return Ok(vec![0.0; x.len()]);
    }
    let mut g = prm.input_grad(x, t, c)?;
    for gi in &mut g {
        *gi *= lambda;
    }
    Ok(g)
}

/// Full drift for the configured mode.
///
/// - `Ode`: the raw velocity `u(x, t)`.
/// - `SdeUnguided`: [`flow_drift`].
/// - `SdeGuided`: [`flow_drift`] plus [`guidance_term`].
pub fn total_drift(
    net: &DenseNet,
    prm: Option<&DenseNet>,
    x: &[f64],
    t: f64,
    c: usize,
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
) -> Result<Vec<f64>> {
    match guidance.mode {
        DriftMode::Ode => net.forward(x, t, c),
        DriftMode::SdeUnguided => flow_drift(net, x, t, c, schedule.eps),
        DriftMode::SdeGuided => {
            let prm = prm.ok_or_else(|| {
                Error::InvalidConfig("guided mode requires a process reward model".into())
            })?;
            let mut drift = flow_drift(net, x, t, c, schedule.eps)?;
            let g = guidance_term(prm, x, t, c, guidance.lambda, schedule)?;
            for (d, gi) in drift.iter_mut().zip(&g) {
                *d += gi;
            }
            Ok(drift)
        }
    }
}

/// One Euler-Maruyama update: `x + drift·dt + sqrt(2·eps·dt)·z`.
pub fn em_step(x: &[f64], drift: &[f64], eps: f64, dt: f64, z: &[f64]) -> Result<Vec<f64>> {
    if drift.len() != x.len() || z.len() != x.len() {
        return Err(Error::ShapeMismatch {
            context: "em_step",
            expected: x.len(),
            got: drift.len().min(z.len()),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("dt must be > 0".into()));
    }
    if !vecops::all_finite(x) || !vecops::all_finite(drift) || !vecops::all_finite(z) {
        return Err(Error::NonFinite {
            context: "em_step inputs".into(),
        });
    }
    let s = (2.0 * eps * dt).sqrt();
    Ok(x.iter()
        .zip(drift.iter().zip(z))
        .map(|(xi, (di, zi))| xi + di * dt + s * zi)
        .collect())
}

/// Gaussian transition log-density of the Euler-Maruyama kernel:
/// `C - ‖x_next - mu‖² / (4·eps·dt)` with `C = -(d/2)·ln(4π·eps·dt)`.
pub fn log_prob_kernel(x_next: &[f64], mu: &[f64], eps: f64, dt: f64) -> f64 {
    let d = x_next.len() as f64;
    let c_k = -(d / 2.0) * (4.0 * std::f64::consts::PI * eps * dt).ln();
    c_k - vecops::squared_distance(x_next, mu) / (4.0 * eps * dt)
}

/// Transition mean `mu = x + dt · D(x, t)` where `D` is the total drift in
/// [`PolicyMode::Standard`] or the flow-only drift in [`PolicyMode::Distill`].
///
/// The sampler and the policy-gradient loss both call this, so a freshly
/// rolled-out transition re-evaluated at the same parameters reproduces its
/// stored log-probability bit for bit.
pub fn policy_mean(
    net: &DenseNet,
    prm: Option<&DenseNet>,
    x: &[f64],
    t: f64,
    c: usize,
    dt: f64,
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
    mode: PolicyMode,
) -> Result<Vec<f64>> {
    let t_eval = drift_eval_time(t);
    let drift = match mode {
        PolicyMode::Standard => total_drift(net, prm, x, t_eval, c, schedule, guidance)?,
        PolicyMode::Distill => match guidance.mode {
            DriftMode::Ode => net.forward(x, t_eval, c)?,
            _ => flow_drift(net, x, t_eval, c, schedule.eps)?,
        },
    };
    Ok(x.iter().zip(&drift).map(|(xi, di)| xi + dt * di).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseNet, InputEncoding, RngStream};

    fn test_nets() -> (DenseNet, DenseNet) {
        let enc = InputEncoding::xt_fourier(2, 2);
        let net = DenseNet::random(&[enc.width(), 8, 2], enc, RngStream::new(51, 0)).unwrap();
        let prm = DenseNet::random(&[enc.width(), 8, 1], enc, RngStream::new(52, 0)).unwrap();
        (net, prm)
    }

    fn schedule() -> NoiseSchedule {
        NoiseSchedule {
            eps: 0.3125,
            window: (0.5, 1.0),
            final_step_deterministic: true,
        }
    }

    #[test]
    fn grid_with_unit_shift_is_uniform() {
        let g = TimeGrid::new(8, 1.0).unwrap();
        for k in 0..=8 {
            assert!((g.node(k) - k as f64 / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_endpoints_are_exact_for_any_shift() {
        for &s in &[0.25, 1.0, 3.0, 5.0, 17.5] {
            let g = TimeGrid::new(16, s).unwrap();
            assert_eq!(g.node(0), 0.0);
            assert_eq!(g.node(16), 1.0);
        }
    }

    #[test]
    fn grid_midpoint_matches_the_shift_transform() {
        // T = 16, s = 5: t_8 = 5·0.5 / (1 + 4·0.5) = 2.5/3.
        let g = TimeGrid::new(16, 5.0).unwrap();
        assert!((g.node(8) - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn flow_drift_reduces_to_velocity_without_noise() {
        let (net, _) = test_nets();
        let x = [0.3, -0.8];
        let t = 0.4;
        let u = net.forward(&x, t, 1).unwrap();
        let d = flow_drift(&net, &x, t, 1, 0.0).unwrap();
        assert_eq!(d, u);
    }

    #[test]
    fn flow_drift_at_t0() {
        let (net, _) = test_nets();
        let x = [1.0, 2.0];
        let eps = 0.5;
        let u = net.forward(&x, 0.0, 0).unwrap();
        let d = flow_drift(&net, &x, 0.0, 0, eps).unwrap();
        for i in 0..2 {
            assert!((d[i] - (u[i] - eps * x[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn flow_drift_matches_term_by_term_evaluation() {
        let (net, _) = test_nets();
        let (x, t, eps) = ([0.7, -0.2], 0.55, 0.3125);
        let u = net.forward(&x, t, 0).unwrap();
        let d = flow_drift(&net, &x, t, 0, eps).unwrap();
        for i in 0..2 {
            // Independent association order.
            let expect = u[i] + (t * eps / (1.0 - t)) * u[i] - (eps / (1.0 - t)) * x[i];
            assert!((d[i] - expect).abs() < 1e-12, "{} vs {expect}", d[i]);
        }
    }

    #[test]
    fn flow_drift_rejects_t_near_one() {
        let (net, _) = test_nets();
        assert!(matches!(
            flow_drift(&net, &[0.0, 0.0], 0.9995, 0, 0.1),
            Err(Error::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn guidance_zero_scale_and_window_gating() {
        let (_, prm) = test_nets();
        let sched = schedule();
        let z = guidance_term(&prm, &[0.1, 0.1], 0.7, 0, 0.0, &sched).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        let outside = guidance_term(&prm, &[0.1, 0.1], 0.3, 0, 0.5, &sched).unwrap();
        assert_eq!(outside, vec![0.0, 0.0]);
        let inside = guidance_term(&prm, &[0.1, 0.1], 0.7, 0, 0.5, &sched).unwrap();
        assert!(inside.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn paper_defaults_satisfy_lambda_equals_eps_over_beta() {
        let g = GuidanceConfig::derived(3.125, 0.3125, DriftMode::SdeGuided);
        assert!((g.lambda - 0.1).abs() < 1e-12);
    }

    #[test]
    fn total_drift_with_flat_prm_equals_flow_drift() {
        let (net, _) = test_nets();
        let enc = InputEncoding::xt_fourier(2, 2);
        let flat_prm = DenseNet::zeros(&[enc.width(), 4, 1], enc).unwrap();
        let sched = schedule();
        let g = GuidanceConfig::derived(3.125, sched.eps, DriftMode::SdeGuided);
        let x = [0.4, 0.2];
        let t = 0.75;
        let guided = total_drift(&net, Some(&flat_prm), &x, t, 0, &sched, &g).unwrap();
        let plain = flow_drift(&net, &x, t, 0, sched.eps).unwrap();
        assert_eq!(guided, plain);
    }

    #[test]
    fn total_drift_in_ode_mode_is_the_velocity() {
        let (net, prm) = test_nets();
        let sched = schedule();
        let g = GuidanceConfig {
            beta: 1.0,
            lambda: 0.0,
            mode: DriftMode::Ode,
        };
        let x = [0.1, -0.5];
        let d = total_drift(&net, Some(&prm), &x, 0.6, 1, &sched, &g).unwrap();
        assert_eq!(d, net.forward(&x, 0.6, 1).unwrap());
    }

    #[test]
    fn guided_minus_unguided_is_the_guidance_term() {
        let (net, prm) = test_nets();
        let sched = schedule();
        let guided_cfg = GuidanceConfig::derived(3.125, sched.eps, DriftMode::SdeGuided);
        let x = [0.3, 0.9];
        let t = 0.8;
        let guided = total_drift(&net, Some(&prm), &x, t, 1, &sched, &guided_cfg).unwrap();
        let unguided = flow_drift(&net, &x, t, 1, sched.eps).unwrap();
        let term = guidance_term(&prm, &x, t, 1, guided_cfg.lambda, &sched).unwrap();
        for i in 0..2 {
            assert!(
                ((guided[i] - unguided[i]) - term[i]).abs() < 1e-14,
                "component {i}"
            );
        }
    }

    #[test]
    fn em_step_identity_with_no_drift_and_no_noise() {
        let x = [0.5, -0.25];
        let y = em_step(&x, &[0.0, 0.0], 0.0, 0.1, &[0.3, 0.3]).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn em_step_with_zero_draw_is_plain_euler() {
        let x = [1.0, 2.0];
        let drift = [0.5, -0.5];
        let y = em_step(&x, &drift, 0.7, 0.2, &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.1, 1.9]);
    }

    #[test]
    fn em_step_matches_direct_arithmetic() {
        let y = em_step(&[0.0, 0.0], &[1.0, -1.0], 0.3125, 0.0625, &[1.0, 1.0]).unwrap();
        let s = (2.0f64 * 0.3125 * 0.0625).sqrt();
        assert!((s - 0.197_642_353_760_523_72).abs() < 1e-15);
        assert!((y[0] - (0.0625 + s)).abs() < 1e-15);
        assert!((y[1] - (-0.0625 + s)).abs() < 1e-15);
    }

    #[test]
    fn em_step_rejects_non_finite_inputs() {
        assert!(em_step(&[f64::NAN], &[0.0], 0.1, 0.1, &[0.0]).is_err());
    }

    #[test]
    fn log_prob_kernel_normalizer_in_two_dims() {
        // d = 2, eps = 0.3125, dt = 0.0625: C = -ln(4π·eps·dt) = 1.4048...
        let mu = [0.3, -0.4];
        let c_k = log_prob_kernel(&mu, &mu, 0.3125, 0.0625);
        let expect = -(4.0 * std::f64::consts::PI * 0.3125 * 0.0625).ln();
        assert_eq!(c_k, expect);
        assert!((c_k - 1.4048).abs() < 1e-4);
    }
}
