//! A desk-scale laboratory for reward-guided flow matching.
//!
//! The crate trains small dense velocity fields with the linear-OT flow
//! matching objective, samples them with deterministic ODE / stochastic SDE /
//! reward-gradient-guided SDE integrators, trains a process reward model from
//! pairwise preferences, and post-trains the velocity field with a dual-reward
//! clipped group-relative policy objective. Every analytic formula in the
//! pipeline is paired with an independent numerical oracle (finite
//! differences, Monte Carlo regression, brute-force simplex ascent) so the
//! whole stack can be verified end to end on a laptop.
//!
//! Module map:
//!
//! - [`nn`] — dense networks with exact reverse-mode gradients, AdamW, seeded
//!   RNG streams, finite-difference oracles, JSON checkpoints.
//! - [`flow`] — linear-OT interpolation, the flow matching loss, closed-form
//!   Gaussian velocity/score oracles, and the score-from-velocity identity.
//! - [`dynamics`] — time grids, noise schedules, the three samplers, and the
//!   reverse-time drift equivalence checker.
//! - [`reward`] — ground-truth toy rewards, a frozen decoder map, preference
//!   pair machinery, Bradley-Terry PRM training, and the SPSA diagnostic.
//! - [`rl`] — group-normalized advantages, transition log-probabilities in
//!   standard and distillation form, the clipped surrogate loss, the
//!   Boltzmann-policy oracle, and the full post-training loop.
//! - [`parallel`] — order-preserving data-parallel map helpers (rayon behind
//!   the `parallel` feature, sequential otherwise).

pub mod dynamics;
mod error;
pub mod flow;
pub mod nn;
pub mod parallel;
pub mod reward;
pub mod rl;

pub use error::{Error, Result};

/// Guard distance from the `t = 1` singularity.
///
/// Every formula with a `1 - t` denominator (drifts, the score-velocity
/// identity) rejects `t > 1 - TIME_GUARD`; samplers clamp their drift
/// evaluation times to this bound.
pub const TIME_GUARD: f64 = 1e-3;

pub(crate) mod vecops {
    //! Small dense-vector helpers shared across modules.

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn squared_norm(a: &[f64]) -> f64 {
        a.iter().map(|x| x * x).sum()
    }

    pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    pub fn all_finite(a: &[f64]) -> bool {
        a.iter().all(|x| x.is_finite())
    }
}
