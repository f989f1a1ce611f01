//! Trajectory sampling.

use serde::{Deserialize, Serialize};

use super::{
    drift_eval_time, em_step, log_prob_kernel, policy_mean, total_drift, DriftMode,
    GuidanceConfig, NoiseSchedule, TimeGrid,
};
use crate::nn::{standard_normal_vec, DenseNet, RngStream};
use crate::{vecops, Error, Result};

/// Which transition mean the stored (and later re-evaluated)
/// log-probabilities use.
///
/// * `Standard` — the mean includes the reward-guidance term, so for a fresh
///   rollout the residual is exactly the injected noise and the guidance
///   cancels from the importance ratio.
/// * `Distill` — the mean is flow-only; the residual then carries the
///   guidance displacement and the optimizer pushes the velocity field to
///   absorb it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Standard,
    Distill,
}

/// One sampled path with everything the policy optimizer needs later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub condition: usize,
    pub stream: RngStream,
    /// `T + 1` states, `states[0] = X_0`.
    pub states: Vec<Vec<f64>>,
    /// `T` noise draws; all-zero on deterministic steps.
    pub noises: Vec<Vec<f64>>,
    /// Behavior log-probability per step; `None` on deterministic steps.
    pub logp_old: Vec<Option<f64>>,
    /// Process reward `r_p(X_k, t_k, c)` at the pre-step state.
    pub process_rewards: Vec<f64>,
    /// Outcome reward of the final state, filled in by the caller.
    pub outcome_reward: Option<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.noises.len()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.steps();
        let consistent = self.states.len() == t + 1
            && self.logp_old.len() == t
            && self.process_rewards.len() == t;
        if !consistent {
            return Err(Error::InvalidConfig("trajectory arrays disagree on T".into()));
        }
        if self.logp_old.iter().flatten().any(|lp| !lp.is_finite()) {
            return Err(Error::NonFinite {
                context: "stored log-probabilities".into(),
            });
        }
        Ok(())
    }

    /// Flatten into JSONL step records (`k`, `t`, `x`, `z`, `logp_old`, `r_p`).
    pub fn step_records(&self, grid: &TimeGrid) -> Vec<StepRecord> {
        (0..self.steps())
            .map(|k| StepRecord {
                k,
                t: grid.node(k),
                x: self.states[k].clone(),
                z: self.noises[k].clone(),
                logp_old: self.logp_old[k],
                r_p: self.process_rewards[k],
            })
            .collect()
    }
}

/// One line of a trajectory dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub logp_old: Option<f64>,
    pub r_p: f64,
}

/// Everything a rollout needs besides the nets.
#[derive(Debug, Clone, Copy)]
pub struct RolloutSetup<'a> {
    pub grid: &'a TimeGrid,
    pub schedule: &'a NoiseSchedule,
    pub guidance: &'a GuidanceConfig,
    pub logprob_mode: PolicyMode,
    pub condition: usize,
}

/// Integrate one trajectory.
///
/// Starts from `x0` when given (group members share their initial noise),
/// otherwise draws `X_0 ~ N(0, I)` from the stream. Each step stores the
/// injected noise, the process reward at the pre-step state, and the behavior
/// log-probability under the mean selected by `logprob_mode`. Deterministic
/// steps (`eps = 0`, including everything in ODE mode) store no
/// log-probability.
pub fn rollout(
    net: &DenseNet,
    prm: Option<&DenseNet>,
    setup: RolloutSetup<'_>,
    stream: RngStream,
    x0: Option<&[f64]>,
) -> Result<Trajectory> {
    setup.schedule.validate()?;
    setup.guidance.validate()?;
    let d = net.data_dim();
    let step_count = setup.grid.steps();
    let c = setup.condition;
    let mut rng = stream.rng();

    let mut x = match x0 {
        Some(start) => {
            if start.len() != d {
                return Err(Error::ShapeMismatch {
                    context: "rollout x0",
                    expected: d,
                    got: start.len(),
                });
            }
            start.to_vec()
        }
        None => standard_normal_vec(&mut rng, d),
    };

    let mut states = Vec::with_capacity(step_count + 1);
    let mut noises = Vec::with_capacity(step_count);
    let mut logp_old = Vec::with_capacity(step_count);
    let mut process_rewards = Vec::with_capacity(step_count);
    states.push(x.clone());

    for k in 0..step_count {
        let t_k = setup.grid.node(k);
        let dt = setup.grid.dt(k);
        let eps_k = if setup.guidance.mode == DriftMode::Ode {
            0.0
        } else {
            setup.schedule.eps_at(k, step_count)
        };

        let r_p = match prm {
            Some(p) => p.forward(&x, t_k, c)?[0],
            None => 0.0,
        };
        process_rewards.push(r_p);

        let t_eval = drift_eval_time(t_k);
        let drift = total_drift(net, prm, &x, t_eval, c, setup.schedule, setup.guidance)?;
        let z = if eps_k > 0.0 {
            standard_normal_vec(&mut rng, d)
        } else {
            vec![0.0; d]
        };
        let x_next = em_step(&x, &drift, eps_k, dt, &z)?;
        if !vecops::all_finite(&x_next) {
            log::error!("rollout aborted: non-finite state at step {k}");
            return Err(Error::NonFinite {
                context: format!("rollout state at step {k}"),
            });
        }

        if eps_k > 0.0 {
            let mu = policy_mean(
                net,
                prm,
                &x,
                t_k,
                c,
                dt,
                setup.schedule,
                setup.guidance,
                setup.logprob_mode,
            )?;
            logp_old.push(Some(log_prob_kernel(&x_next, &mu, eps_k, dt)));
        } else {
            logp_old.push(None);
        }

        noises.push(z);
        states.push(x_next.clone());
        x = x_next;
    }

    let traj = Trajectory {
        condition: c,
        stream,
        states,
        noises,
        logp_old,
        process_rewards,
        outcome_reward: None,
    };
    traj.validate()?;
    Ok(traj)
}
