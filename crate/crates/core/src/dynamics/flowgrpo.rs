//! Reverse-time drift equivalence.
//!
//! Prior flow-RL samplers write the stochastic dynamics in reverse time
//! `τ = 1 - t` with a data-to-noise velocity `v = -u` and diffusion
//! `σ_τ² = 2·eps`. Their generation drift is
//!
//! ```text
//! F(x, τ) = v + (σ²/2τ)(x + (1-τ)v)
//! ```
//!
//! and, accounting for `dt = -dτ`, our forward drift must satisfy
//! `D(x, t) = -F(x, 1-t)` identically — for any velocity function, not just
//! trained ones. [`equivalence_check`] evaluates both published formulas on
//! identical network outputs and reports the worst residual.

use serde::Serialize;

use super::flow_drift_from_velocity;
use crate::nn::DenseNet;
use crate::{Error, Result, TIME_GUARD};

/// A forward-time drift evaluation mapped into the reverse-time convention.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrpoFrame {
    /// Reverse time `τ = 1 - t`.
    pub tau: f64,
    /// Squared diffusion `σ_τ² = 2·eps`.
    pub sigma_sq: f64,
    /// Reverse velocity `v = -u` at the mapped state.
    pub velocity: Vec<f64>,
    pub state: Vec<f64>,
}

impl FlowGrpoFrame {
    /// Map forward-time quantities into the reverse-time frame.
    pub fn from_forward(x: &[f64], t: f64, eps: f64, u: &[f64]) -> Self {
        Self {
            tau: 1.0 - t,
            sigma_sq: 2.0 * eps,
            velocity: u.iter().map(|ui| -ui).collect(),
            state: x.to_vec(),
        }
    }
}

/// Reverse-time drift `v + (σ²/2τ)(x + (1-τ)v)`.
pub fn flowgrpo_drift(v: &[f64], x: &[f64], tau: f64, sigma_sq: f64) -> Result<Vec<f64>> {
    if v.len() != x.len() {
        return Err(Error::ShapeMismatch {
            context: "flowgrpo_drift",
            expected: x.len(),
            got: v.len(),
        });
    }
    if !(tau > TIME_GUARD) || tau > 1.0 {
        return Err(Error::TimeOutOfRange {
            t: tau,
            limit: TIME_GUARD,
        });
    }
    let coeff = sigma_sq / (2.0 * tau);
    Ok(v.iter()
        .zip(x)
        .map(|(vi, xi)| vi + coeff * (xi + (1.0 - tau) * vi))
        .collect())
}

/// Result of the drift-equivalence sweep.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub probes: usize,
    pub max_residual: f64,
    pub threshold: f64,
    pub pass: bool,
    /// `(t, residual)` of the worst probe.
    pub worst: Option<(f64, f64)>,
}

/// Verify `D(x, t) + F(x, 1-t) = 0` over probe points.
///
/// Probes must keep `t` in `[TIME_GUARD, 1 - TIME_GUARD]`. Both drifts are
/// computed from the same `net.forward` output, so the residual isolates the
/// two published formulas.
pub fn equivalence_check(
    net: &DenseNet,
    probes: &[(Vec<f64>, f64)],
    eps: f64,
    c: usize,
    threshold: f64,
) -> Result<EquivalenceReport> {
    let residuals = crate::parallel::par_map(probes, |(x, t)| -> Result<f64> {
        if *t < TIME_GUARD || *t > 1.0 - TIME_GUARD {
            return Err(Error::TimeOutOfRange {
                t: *t,
                limit: 1.0 - TIME_GUARD,
            });
        }
        let u = net.forward(x, *t, c)?;
        let ours = flow_drift_from_velocity(&u, x, *t, eps);
        let frame = FlowGrpoFrame::from_forward(x, *t, eps, &u);
        let theirs = flowgrpo_drift(&frame.velocity, &frame.state, frame.tau, frame.sigma_sq)?;
        Ok(ours
            .iter()
            .zip(&theirs)
            .map(|(a, b)| (a + b).abs())
            .fold(0.0f64, f64::max))
    });

    let mut max_residual = 0.0f64;
    let mut worst = None;
    for (i, r) in residuals.into_iter().enumerate() {
        let r = r?;
        if r >= max_residual {
            max_residual = r;
            worst = Some((probes[i].1, r));
        }
    }
    Ok(EquivalenceReport {
        probes: probes.len(),
        max_residual,
        threshold,
        pass: max_residual < threshold,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{standard_normal_vec, DenseNet, InputEncoding, RngStream};

    #[test]
    fn zero_diffusion_leaves_the_velocity() {
        let v = [0.3, -0.6];
        let d = flowgrpo_drift(&v, &[1.0, 1.0], 0.5, 0.0).unwrap();
        assert_eq!(d, v.to_vec());
    }

    #[test]
    fn tau_one_coefficient() {
        let v = [1.0, 2.0];
        let x = [3.0, -3.0];
        let sigma_sq = 0.625;
        let d = flowgrpo_drift(&v, &x, 1.0, sigma_sq).unwrap();
        for i in 0..2 {
            let expect = v[i] + sigma_sq / 2.0 * x[i];
            assert!((d[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_term_by_term_evaluation() {
        let v = [0.4, -1.1];
        let x = [0.2, 0.9];
        let (tau, sigma_sq) = (0.35, 0.8);
        let d = flowgrpo_drift(&v, &x, tau, sigma_sq).unwrap();
        for i in 0..2 {
            let expect = v[i] + sigma_sq / (2.0 * tau) * x[i]
                + sigma_sq / (2.0 * tau) * (1.0 - tau) * v[i];
            assert!((d[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_tau_near_zero() {
        assert!(flowgrpo_drift(&[0.0], &[0.0], 5e-4, 0.1).is_err());
    }

    #[test]
    fn equivalence_holds_for_a_random_net() {
        let enc = InputEncoding::xt_fourier(2, 1);
        let net = DenseNet::random(&[enc.width(), 16, 2], enc, RngStream::new(71, 0)).unwrap();
        let mut rng = RngStream::new(71, 1).rng();
        let probes: Vec<(Vec<f64>, f64)> = (0..200)
            .map(|_| {
                let x: Vec<f64> = standard_normal_vec(&mut rng, 2)
                    .iter()
                    .map(|z| 2.0 * z)
                    .collect();
                let t = TIME_GUARD + (1.0 - 2.0 * TIME_GUARD) * rand::Rng::gen::<f64>(&mut rng);
                (x, t)
            })
            .collect();
        let report = equivalence_check(&net, &probes, 0.3125, 0, 1e-10).unwrap();
        assert!(report.pass, "max residual {}", report.max_residual);
    }

    #[test]
    fn zero_noise_gives_exactly_zero_residual() {
        let enc = InputEncoding::xt_fourier(2, 1);
        let net = DenseNet::random(&[enc.width(), 8, 2], enc, RngStream::new(72, 0)).unwrap();
        let probes = vec![(vec![0.5, -0.5], 0.5)];
        let report = equivalence_check(&net, &probes, 0.0, 0, 1e-10).unwrap();
        assert_eq!(report.max_residual, 0.0);
    }
}
