//! The KL-regularized optimal policy and its brute-force certificate.
//!
//! Maximizing `J(π) = E_π[r] - β·KL(π ‖ π_ref)` over distributions on a
//! finite set has the closed-form solution `π*(x) ∝ π_ref(x)·exp(r(x)/β)`.
//! [`optimal_policy_oracle`] certifies the closed form by maximizing `J`
//! numerically — projected gradient ascent on the simplex, which knows
//! nothing about the Boltzmann shape — and comparing the two in total
//! variation.

use serde::Serialize;

use crate::{Error, Result};

/// Closed-form `π*(x) = π_ref(x)·exp(r(x)/β) / Z`.
///
/// Points with zero reference mass get `π*(x) = 0` regardless of reward.
pub fn boltzmann_policy(ref_weights: &[f64], rewards: &[f64], beta: f64) -> Result<Vec<f64>> {
    validate_instance(ref_weights, rewards, beta)?;
    let max_arg = rewards
        .iter()
        .zip(ref_weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(r, _)| r / beta)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = ref_weights
        .iter()
        .zip(rewards)
        .map(|(w, r)| {
            if *w > 0.0 {
                w * (r / beta - max_arg).exp()
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

/// Closed form, brute-force maximizer, and their agreement.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCertificate {
    pub closed_form: Vec<f64>,
    pub brute_force: Vec<f64>,
    /// Total variation distance `0.5·Σ|π* - π_bf|`.
    pub tv_distance: f64,
    pub objective_closed: f64,
    pub objective_brute_force: f64,
    pub ascent_iterations: usize,
}

/// `J(π) = Σ π·r - β Σ π·log(π/π_ref)`, with `0·log 0 = 0`.
fn objective(pi: &[f64], ref_weights: &[f64], rewards: &[f64], beta: f64) -> f64 {
    let mut j = 0.0;
    for i in 0..pi.len() {
        if pi[i] > 0.0 {
            j += pi[i] * rewards[i] - beta * pi[i] * (pi[i] / ref_weights[i]).ln();
        }
    }
    j
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn validate_instance(ref_weights: &[f64], rewards: &[f64], beta: f64) -> Result<()> {
    let n = ref_weights.len();
    if n == 0 || n > 16 {
        return Err(Error::InvalidConfig(format!(
            "oracle instances are limited to 1..=16 points, got {n}"
        )));
    }
    if rewards.len() != n {
        return Err(Error::ShapeMismatch {
            context: "oracle rewards",
            expected: n,
            got: rewards.len(),
        });
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidConfig("beta must be > 0".into()));
    }
    if ref_weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidConfig("reference weights must be >= 0".into()));
    }
    let total: f64 = ref_weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "reference weights sum to {total}, expected 1"
        )));
    }
    if !rewards.iter().all(|r| r.is_finite()) {
        return Err(Error::NonFinite {
            context: "oracle rewards".into(),
        });
    }
    Ok(())
}

/// Certify the Boltzmann closed form against projected gradient ascent.
///
/// The ascent runs on the support of `π_ref` with Armijo backtracking, so it
/// monotonically increases `J` until the iterates stall at the unique
/// interior maximum. Agreement within 1e-6 total variation is the acceptance
/// bar; the certificate reports the measured distance either way.
pub fn optimal_policy_oracle(
    ref_weights: &[f64],
    rewards: &[f64],
    beta: f64,
) -> Result<OracleCertificate> {
    let closed_form = boltzmann_policy(ref_weights, rewards, beta)?;

    // Work on the support only; zero-reference points are pinned to zero.
    let support: Vec<usize> = (0..ref_weights.len())
        .filter(|&i| ref_weights[i] > 0.0)
        .collect();
    let s_ref: Vec<f64> = support.iter().map(|&i| ref_weights[i]).collect();
    let s_rew: Vec<f64> = support.iter().map(|&i| rewards[i]).collect();
    let m = support.len();

    // Uniform interior start — deliberately far from the closed form.
    let mut pi = vec![1.0 / m as f64; m];
    let mut j_cur = objective(&pi, &s_ref, &s_rew, beta);
    let mut iterations = 0usize;
    let max_iterations = 200_000usize;
    let floor = 1e-300;

    while iterations < max_iterations {
        iterations += 1;
        let grad: Vec<f64> = (0..m)
            .map(|i| s_rew[i] - beta * ((pi[i].max(floor) / s_ref[i]).ln() + 1.0))
            .collect();

        // Backtracking line search along the projected step.
        let mut eta = 1.0 / beta.max(1.0);
        let mut advanced = false;
        for _ in 0..60 {
            let trial: Vec<f64> = pi.iter().zip(&grad).map(|(p, g)| p + eta * g).collect();
            let trial = project_simplex(&trial);
            let j_trial = objective(&trial, &s_ref, &s_rew, beta);
            if j_trial > j_cur {
                let moved = pi
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                pi = trial;
                j_cur = j_trial;
                advanced = true;
                if moved < 1e-16 {
                    iterations = max_iterations;
                }
                break;
            }
            eta *= 0.5;
        }
        if !advanced {
            break;
        }
    }

    let mut brute_force = vec![0.0; ref_weights.len()];
    for (slot, &i) in support.iter().enumerate() {
        brute_force[i] = pi[slot];
    }
    let tv_distance = 0.5
        * closed_form
            .iter()
            .zip(&brute_force)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    Ok(OracleCertificate {
        objective_closed: objective(
            &support.iter().map(|&i| closed_form[i]).collect::<Vec<_>>(),
            &s_ref,
            &s_rew,
            beta,
        ),
        objective_brute_force: j_cur,
        closed_form,
        brute_force,
        tv_distance,
        ascent_iterations: iterations,
    })
}
