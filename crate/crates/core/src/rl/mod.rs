//! Dual-reward group-relative policy optimization.
//!
//! A group of `G` trajectories shares one condition and one initial noise;
//! rewards are z-scored within the group (per step for process rewards, once
//! and broadcast for the outcome reward) and summed into an advantage table.
//! The policy objective is the clipped importance-ratio surrogate over the
//! stochastic transitions, with log-probabilities computed either against the
//! full guided mean (standard) or the flow-only mean (distillation).

mod logprob;
mod loss;
mod oracle;
mod train;

pub use logprob::{distill_residual_check, importance_ratio, log_prob, ResidualReport};
pub use loss::{grpo_loss, GrpoLossReport};
pub use oracle::{boltzmann_policy, optimal_policy_oracle, OracleCertificate};
pub use train::{train_grpo, GrpoOutcome, IterationMetrics, OutcomeModel, TrainEvent};

use serde::{Deserialize, Serialize};

use crate::dynamics::{PolicyMode, Trajectory};
use crate::nn::{DenseNet, OptConfig};
use crate::{Error, Result};

/// GRPO hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// Trajectories per prompt per iteration.
    pub group_size: usize,
    /// Importance-ratio clip half-width.
    pub clip: f64,
    pub opt: OptConfig,
    /// Log-probability convention (standard vs distillation).
    pub mode: PolicyMode,
    pub process_weight: f64,
    pub outcome_weight: f64,
    /// Additive floor on the group standard deviation.
    pub adv_floor: f64,
    /// Optimizer passes over each collected batch.
    pub inner_epochs: usize,
    pub iterations: usize,
    /// Checkpoint cadence in iterations; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip: 1e-4,
            opt: OptConfig::default(),
            mode: PolicyMode::Distill,
            process_weight: 1.0,
            outcome_weight: 1.0,
            adv_floor: 1e-8,
            inner_epochs: 1,
            iterations: 50,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        self.opt.validate()?;
        if self.group_size < 2 {
            return Err(Error::InvalidConfig("group size must be >= 2".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidConfig("clip must be > 0".into()));
        }
        if self.adv_floor < 0.0 || self.process_weight < 0.0 || self.outcome_weight < 0.0 {
            return Err(Error::InvalidConfig("weights and floor must be >= 0".into()));
        }
        if self.inner_epochs < 1 {
            return Err(Error::InvalidConfig("at least one inner epoch".into()));
        }
        Ok(())
    }
}

/// Frozen behavior policy for one optimization phase.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    net: DenseNet,
}

impl PolicySnapshot {
    pub fn freeze(net: &DenseNet) -> Self {
        Self { net: net.clone() }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }
}

/// `G` trajectories sharing a condition and initial noise, plus their
/// advantage table.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub condition: usize,
    pub x0: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    /// `advantages[i][k]` for member `i`, step `k`; empty until
    /// [`dual_advantage`] fills it.
    pub advantages: Vec<Vec<f64>>,
}

impl GroupBatch {
    pub fn new(condition: usize, x0: Vec<f64>, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.len() < 2 {
            return Err(Error::InvalidConfig("a group needs at least 2 members".into()));
        }
        let steps = trajectories[0].steps();
        for traj in &trajectories {
            traj.validate()?;
            if traj.steps() != steps {
                return Err(Error::InvalidConfig("group members differ in length".into()));
            }
            if traj.states[0] != x0 {
                return Err(Error::InvalidConfig(
                    "group members must share the initial state exactly".into(),
                ));
            }
            if traj.condition != condition {
                return Err(Error::InvalidConfig("group members differ in condition".into()));
            }
        }
        Ok(Self {
            condition,
            x0,
            trajectories,
            advantages: Vec::new(),
        })
    }

    pub fn steps(&self) -> usize {
        self.trajectories[0].steps()
    }
}

/// Z-score `values` over the group: `(v - mean) / (std + floor)` with the
/// population standard deviation. An all-equal group maps to all zeros.
pub fn group_normalize(values: &[f64], floor: f64) -> Result<Vec<f64>> {
    let g = values.len();
    if g < 2 {
        return Err(Error::InvalidConfig("group_normalize needs G >= 2".into()));
    }
    let mean = values.iter().sum::<f64>() / g as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / g as f64;
    let denom = var.sqrt() + floor;
    Ok(values.iter().map(|v| (v - mean) / denom).collect())
}

/// Fill the advantage table of a group:
///
/// ```text
/// A[i][k] = w_p · z_k(r_p(X_k^i)) + w_o · z(r_o(X_T^i))
/// ```
///
/// Process rewards are normalized per step across the group; outcome rewards
/// are normalized once and broadcast over every step. Requires every member's
/// outcome reward to be filled in.
pub fn dual_advantage(batch: &mut GroupBatch, w_p: f64, w_o: f64, floor: f64) -> Result<()> {
    let g = batch.trajectories.len();
    let steps = batch.steps();

    let outcomes: Vec<f64> = batch
        .trajectories
        .iter()
        .map(|t| {
            t.outcome_reward.ok_or_else(|| {
                Error::InvalidConfig("outcome reward missing from a group member".into())
            })
        })
        .collect::<Result<_>>()?;
    let z_outcome = group_normalize(&outcomes, floor)?;

    let mut advantages = vec![vec![0.0; steps]; g];
    for k in 0..steps {
        let step_rewards: Vec<f64> = batch
            .trajectories
            .iter()
            .map(|t| t.process_rewards[k])
            .collect();
        let z_step = group_normalize(&step_rewards, floor)?;
        for i in 0..g {
            advantages[i][k] = w_p * z_step[i] + w_o * z_outcome[i];
        }
    }
    batch.advantages = advantages;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngStream;

    fn synthetic_trajectory(
        condition: usize,
        x0: &[f64],
        steps: usize,
        process: &[f64],
        outcome: f64,
    ) -> Trajectory {
        let d = x0.len();
        Trajectory {
            condition,
            stream: RngStream::new(0, 0),
            states: (0..=steps).map(|k| vec![k as f64; d]).collect::<Vec<_>>(),
            noises: vec![vec![0.0; d]; steps],
            logp_old: vec![Some(0.0); steps],
            process_rewards: process.to_vec(),
            outcome_reward: Some(outcome),
        }
        // States deliberately fake except states[0], patched below by tests
        // that need the shared-x0 invariant.
    }

    fn group_with(outcomes: &[f64], process: &[Vec<f64>]) -> GroupBatch {
        let x0 = vec![0.0, 0.0];
        let steps = process[0].len();
        let mut trajs = Vec::new();
        for (i, o) in outcomes.iter().enumerate() {
            let mut t = synthetic_trajectory(0, &x0, steps, &process[i], *o);
            t.states[0] = x0.clone();
            trajs.push(t);
        }
        GroupBatch::new(0, x0, trajs).unwrap()
    }

    #[test]
    fn normalize_all_equal_gives_zeros() {
        let z = group_normalize(&[1.0, 1.0, 1.0, 1.0], 1e-8).unwrap();
        assert_eq!(z, vec![0.0; 4]);
    }

    #[test]
    fn normalize_symmetric_two_point_case() {
        let z = group_normalize(&[0.0, 2.0], 1e-12).unwrap();
        assert!((z[0] + 1.0).abs() < 1e-9);
        assert!((z[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_matches_direct_arithmetic() {
        let vals = [0.3, -1.2, 0.9, 2.2, -0.4, 0.0, 1.1, -2.0];
        let z = group_normalize(&vals, 1e-8).unwrap();
        let mean: f64 = z.iter().sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12, "residual mean {mean}");
        let std = (z.iter().map(|v| v * v).sum::<f64>() / 8.0).sqrt();
        assert!((std - 1.0).abs() < 1e-6, "std {std}");
    }

    #[test]
    fn normalize_is_shift_invariant() {
        let vals = [0.5, 1.5, -0.5, 3.0];
        let shifted: Vec<f64> = vals.iter().map(|v| v + 41.7).collect();
        let a = group_normalize(&vals, 1e-8).unwrap();
        let b = group_normalize(&shifted, 1e-8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn outcome_only_advantage_broadcasts_over_steps() {
        let mut batch = group_with(
            &[1.0, 3.0],
            &[vec![9.0, 9.0, 9.0], vec![5.0, 1.0, 7.0]],
        );
        dual_advantage(&mut batch, 0.0, 1.0, 1e-8).unwrap();
        let a0 = batch.advantages[0][0];
        assert!(batch.advantages[0].iter().all(|&a| a == a0));
        assert!((a0 + 1.0).abs() < 1e-6);
        assert!((batch.advantages[1][0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn process_only_advantage_is_per_step_zscore() {
        let mut batch = group_with(&[5.0, 5.0], &[vec![0.0, 4.0], vec![2.0, 0.0]]);
        dual_advantage(&mut batch, 1.0, 0.0, 1e-8).unwrap();
        assert!((batch.advantages[0][0] + 1.0).abs() < 1e-6);
        assert!((batch.advantages[1][0] - 1.0).abs() < 1e-6);
        assert!((batch.advantages[0][1] - 1.0).abs() < 1e-6);
        assert!((batch.advantages[1][1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn unit_weights_sum_the_two_tables() {
        let mut both = group_with(&[1.0, 2.0], &[vec![0.5], vec![1.5]]);
        dual_advantage(&mut both, 1.0, 1.0, 1e-8).unwrap();
        let mut proc_only = group_with(&[1.0, 2.0], &[vec![0.5], vec![1.5]]);
        dual_advantage(&mut proc_only, 1.0, 0.0, 1e-8).unwrap();
        let mut out_only = group_with(&[1.0, 2.0], &[vec![0.5], vec![1.5]]);
        dual_advantage(&mut out_only, 0.0, 1.0, 1e-8).unwrap();
        for i in 0..2 {
            let sum = proc_only.advantages[i][0] + out_only.advantages[i][0];
            assert!((both.advantages[i][0] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn advantages_have_zero_group_mean_at_every_step() {
        let mut batch = group_with(
            &[0.1, 0.9, 0.4, 0.7],
            &[
                vec![1.0, 2.0, 3.0],
                vec![0.0, 1.0, -1.0],
                vec![2.0, 2.0, 2.0],
                vec![-1.0, 0.5, 4.0],
            ],
        );
        dual_advantage(&mut batch, 1.0, 1.0, 1e-8).unwrap();
        for k in 0..3 {
            let mean: f64 = (0..4).map(|i| batch.advantages[i][k]).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10, "step {k} mean {mean}");
        }
    }

    #[test]
    fn missing_outcome_reward_is_an_error() {
        let mut batch = group_with(&[1.0, 2.0], &[vec![0.0], vec![0.0]]);
        batch.trajectories[1].outcome_reward = None;
        assert!(dual_advantage(&mut batch, 1.0, 1.0, 1e-8).is_err());
    }

    #[test]
    fn group_batch_rejects_mismatched_x0() {
        let x0 = vec![0.0, 0.0];
        let mut t1 = synthetic_trajectory(0, &x0, 2, &[0.0, 0.0], 1.0);
        t1.states[0] = x0.clone();
        let mut t2 = synthetic_trajectory(0, &x0, 2, &[0.0, 0.0], 1.0);
        t2.states[0] = vec![0.0, 1e-16];
        assert!(GroupBatch::new(0, x0, vec![t1, t2]).is_err());
    }
}
