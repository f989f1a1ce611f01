//! Linear-OT flow matching and its closed-form Gaussian oracles.
//!
//! The path between a standard normal source point `x0` and a data point
//! `x1` is the straight line `x_t = (1-t) x0 + t x1`. A velocity network is
//! regressed onto the conditional velocity `x1 - x0`; for an isotropic
//! Gaussian data target the marginal velocity and score have closed forms,
//! which makes the score-from-velocity identity
//!
//! ```text
//! score(x, t) = -(x - t·u_t(x)) / (1 - t)
//! ```
//!
//! testable to machine precision with no learning in the loop.

mod train;

pub use train::{train_flow, FlowTrainConfig, StepMetric};

use serde::{Deserialize, Serialize};

use crate::nn::{DenseNet, GradBuffer};
use crate::{parallel, vecops, Error, Result, TIME_GUARD};

/// Isotropic Gaussian data target `N(mean, std^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl GaussianTarget {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.std <= 0.0 || self.mean.is_empty() {
            return Err(Error::InvalidConfig(
                "gaussian target needs std > 0 and a non-empty mean".into(),
            ));
        }
        Ok(())
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        crate::nn::standard_normal_vec(rng, self.dim())
            .iter()
            .zip(&self.mean)
            .map(|(z, m)| m + self.std * z)
            .collect()
    }
}

/// Equal-covariance Gaussian mixture with arbitrary weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTarget {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub weights: Vec<f64>,
}

impl MixtureTarget {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.std <= 0.0 {
            return Err(Error::InvalidConfig(
                "mixture target needs components and std > 0".into(),
            ));
        }
        let d = self.dim();
        if self.means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidConfig("mixture means differ in dimension".into()));
        }
        if self.weights.len() != self.means.len() {
            return Err(Error::InvalidConfig("one weight per component required".into()));
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig("mixture weights must be >= 0".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.means.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u <= acc {
                pick = i;
                break;
            }
        }
        crate::nn::standard_normal_vec(rng, self.dim())
            .iter()
            .zip(&self.means[pick])
            .map(|(z, m)| m + self.std * z)
            .collect()
    }
}

/// Data distribution selector, JSON-taggable for experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataTarget {
    Gaussian(GaussianTarget),
    Mixture(MixtureTarget),
}

impl DataTarget {
    pub fn dim(&self) -> usize {
        match self {
            DataTarget::Gaussian(g) => g.dim(),
            DataTarget::Mixture(m) => m.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataTarget::Gaussian(g) => g.validate(),
            DataTarget::Mixture(m) => m.validate(),
        }
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            DataTarget::Gaussian(g) => g.sample(rng),
            DataTarget::Mixture(m) => m.sample(rng),
        }
    }
}

/// One training triple for the flow matching loss.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub condition: usize,
}

/// `(1-t)·x0 + t·x1`. Endpoints are returned bitwise.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    if x0.len() != x1.len() {
        return Err(Error::ShapeMismatch {
            context: "interpolate",
            expected: x0.len(),
            got: x1.len(),
        });
    }
    if t == 0.0 {
        return Ok(x0.to_vec());
    }
    if t == 1.0 {
        return Ok(x1.to_vec());
    }
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect())
}

/// Flow matching loss over a batch: mean of `‖u(x_t, t) - (x1 - x0)‖^2`,
/// with exact parameter gradients.
pub fn fm_loss(net: &DenseNet, batch: &[FlowSample]) -> Result<(f64, GradBuffer)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv_b = 1.0 / batch.len() as f64;
    let per_item = parallel::par_map(batch, |s| -> Result<(f64, GradBuffer)> {
        let x_t = interpolate(&s.x0, &s.x1, s.t)?;
        let out = net.forward(&x_t, s.t, s.condition)?;
        if out.len() != s.x0.len() {
            return Err(Error::ShapeMismatch {
                context: "velocity output vs data dim",
                expected: s.x0.len(),
                got: out.len(),
            });
        }
        let resid: Vec<f64> = out
            .iter()
            .zip(s.x1.iter().zip(&s.x0))
            .map(|(o, (x1, x0))| o - (x1 - x0))
            .collect();
        let loss = vecops::squared_norm(&resid);
        let upstream: Vec<f64> = resid.iter().map(|r| 2.0 * r * inv_b).collect();
        let grads = net.param_grad(&x_t, s.t, s.condition, &upstream)?;
        Ok((loss, grads))
    });

    let mut loss = 0.0;
    let mut grads = GradBuffer::zeros_like(net);
    for item in per_item {
        let (l, g) = item?;
        loss += l * inv_b;
        grads.add_scaled(1.0, &g);
    }
    Ok((loss, grads))
}

/// Marginal variance of `x_t` for a Gaussian target: `(1-t)^2 + t^2 σ1^2`.
fn marginal_var(g: &GaussianTarget, t: f64) -> f64 {
    (1.0 - t) * (1.0 - t) + t * t * g.std * g.std
}

/// Posterior mean `E[X1 | X_t = x]` for a Gaussian target, in closed form.
pub fn posterior_mean(g: &GaussianTarget, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != g.dim() {
        return Err(Error::ShapeMismatch {
            context: "posterior_mean",
            expected: g.dim(),
            got: x.len(),
        });
    }
    let coeff = t * g.std * g.std / marginal_var(g, t);
    Ok(g.mean
        .iter()
        .zip(x)
        .map(|(m, xi)| m + coeff * (xi - t * m))
        .collect())
}

/// Marginal velocity `u_t(x) = (E[X1|x] - x)/(1-t)` for a Gaussian target.
///
/// The closed-form posterior mean is validated against Monte Carlo
/// conditional regression in the oracle test suite.
pub fn analytic_velocity(g: &GaussianTarget, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if t >= 1.0 {
        return Err(Error::TimeOutOfRange { t, limit: 1.0 });
    }
    let e = posterior_mean(g, x, t)?;
    Ok(e.iter().zip(x).map(|(ei, xi)| (ei - xi) / (1.0 - t)).collect())
}

/// Marginal score `∇ log p_t(x) = -(x - t·mean) / ((1-t)^2 + t^2 σ1^2)`.
pub fn analytic_score(g: &GaussianTarget, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != g.dim() {
        return Err(Error::ShapeMismatch {
            context: "analytic_score",
            expected: g.dim(),
            got: x.len(),
        });
    }
    let var = marginal_var(g, t);
    Ok(x.iter()
        .zip(&g.mean)
        .map(|(xi, m)| -(xi - t * m) / var)
        .collect())
}

/// Score from velocity under the linear-OT path:
/// `-(x - t·u) / (1 - t)`. Rejects `t` within [`TIME_GUARD`] of the
/// singularity at 1.
pub fn score_from_velocity(x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
    if t > 1.0 - TIME_GUARD {
        return Err(Error::TimeOutOfRange {
            t,
            limit: 1.0 - TIME_GUARD,
        });
    }
    if x.len() != u.len() {
        return Err(Error::ShapeMismatch {
            context: "score_from_velocity",
            expected: x.len(),
            got: u.len(),
        });
    }
    Ok(x.iter()
        .zip(u)
        .map(|(xi, ui)| -(xi - t * ui) / (1.0 - t))
        .collect())
}

/// Posterior mean reconstructed from the score:
/// `E[X1|x] = (x + (1-t)^2 · score) / t`. Valid for `t > 0`.
pub fn posterior_mean_from_score(x: &[f64], t: f64, score: &[f64]) -> Result<Vec<f64>> {
    if t <= 0.0 {
        return Err(Error::TimeOutOfRange { t, limit: 0.0 });
    }
    if x.len() != score.len() {
        return Err(Error::ShapeMismatch {
            context: "posterior_mean_from_score",
            expected: x.len(),
            got: score.len(),
        });
    }
    let w = (1.0 - t) * (1.0 - t);
    Ok(x.iter().zip(score).map(|(xi, s)| (xi + w * s) / t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_grad, DenseNet, InputEncoding, RngStream};

    #[test]
    fn interpolate_endpoints_are_bitwise_exact() {
        let x0 = vec![0.1, -0.0, 3.5e-300];
        let x1 = vec![-2.0, 7.25, 1.0];
        let a = interpolate(&x0, &x1, 0.0).unwrap();
        let b = interpolate(&x0, &x1, 1.0).unwrap();
        for (got, want) in a.iter().zip(&x0) {
            assert_eq!(got.to_bits(), want.to_bits());
        }
        for (got, want) in b.iter().zip(&x1) {
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn interpolate_midpoint() {
        let y = interpolate(&[0.0, 0.0], &[2.0, 4.0], 0.5).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn interpolate_matches_direct_arithmetic() {
        let x0 = [0.37, -1.41];
        let x1 = [2.2, 0.6];
        let t = 0.3;
        let y = interpolate(&x0, &x1, t).unwrap();
        for i in 0..2 {
            let direct = (1.0 - t) * x0[i] + t * x1[i];
            assert_eq!(y[i], direct);
        }
    }

    #[test]
    fn interpolate_rejects_dim_mismatch() {
        assert!(interpolate(&[1.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn fm_loss_zero_when_net_predicts_conditional_velocity() {
        // Constant target: a bias-only net reproduces x1 - x0 exactly.
        let enc = InputEncoding::xt_fourier(2, 1);
        let net = DenseNet::from_parts(
            vec![enc.width(), 2],
            vec![vec![0.0; enc.width() * 2]],
            vec![vec![1.5, -0.5]],
            enc,
        )
        .unwrap();
        let batch: Vec<FlowSample> = (0..4)
            .map(|i| {
                let x0 = vec![0.1 * i as f64, -0.2];
                let x1 = vec![x0[0] + 1.5, x0[1] - 0.5];
                FlowSample {
                    x0,
                    x1,
                    t: 0.25 * i as f64,
                    condition: 0,
                }
            })
            .collect();
        let (loss, grads) = fm_loss(&net, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn fm_loss_of_zero_net_is_mean_squared_target() {
        let enc = InputEncoding::xt_fourier(2, 1);
        let net = DenseNet::zeros(&[enc.width(), 4, 2], enc).unwrap();
        let batch = vec![
            FlowSample {
                x0: vec![0.0, 0.0],
                x1: vec![1.0, 2.0],
                t: 0.3,
                condition: 0,
            },
            FlowSample {
                x0: vec![1.0, -1.0],
                x1: vec![0.0, 0.0],
                t: 0.8,
                condition: 0,
            },
        ];
        let expect = ((1.0 + 4.0) + (1.0 + 1.0)) / 2.0;
        let (loss, _) = fm_loss(&net, &batch).unwrap();
        assert!((loss - expect).abs() < 1e-15);
    }

    #[test]
    fn fm_loss_rejects_empty_batch() {
        let enc = InputEncoding::xt_fourier(2, 1);
        let net = DenseNet::zeros(&[enc.width(), 2], enc).unwrap();
        assert!(matches!(fm_loss(&net, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn fm_loss_gradient_matches_finite_differences() {
        let enc = InputEncoding::xt_fourier(2, 1);
        let net = DenseNet::random(&[enc.width(), 5, 2], enc, RngStream::new(21, 0)).unwrap();
        let batch = vec![FlowSample {
            x0: vec![0.4, -0.2],
            x1: vec![1.1, 0.9],
            t: 0.45,
            condition: 0,
        }];
        let (_, grads) = fm_loss(&net, &batch).unwrap();

        let mut probe = net.clone();
        let h = 1e-6;
        for l in 0..probe.weights.len() {
            for i in 0..probe.weights[l].len() {
                let orig = probe.weights[l][i];
                probe.weights[l][i] = orig + h;
                let (lp, _) = fm_loss(&probe, &batch).unwrap();
                probe.weights[l][i] = orig - h;
                let (lm, _) = fm_loss(&probe, &batch).unwrap();
                probe.weights[l][i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let ad = grads.weights[l][i];
                assert!(
                    (ad - fd).abs() <= 1e-4 * ad.abs().max(fd.abs()) + 1e-7,
                    "layer {l} param {i}: {ad} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn analytic_velocity_at_t0_is_mean_minus_x() {
        let g = GaussianTarget {
            mean: vec![0.0, 0.0],
            std: 1.0,
        };
        let u = analytic_velocity(&g, &[0.7, -0.4], 0.0).unwrap();
        assert_eq!(u, vec![-0.7, 0.4]);
    }

    #[test]
    fn analytic_velocity_on_mean_ray_returns_the_mean() {
        let g = GaussianTarget {
            mean: vec![2.0, 0.0],
            std: 0.37,
        };
        let t = 0.65;
        let x: Vec<f64> = g.mean.iter().map(|m| t * m).collect();
        let u = analytic_velocity(&g, &x, t).unwrap();
        for (ui, m) in u.iter().zip(&g.mean) {
            assert!((ui - m).abs() < 1e-12, "{ui} vs {m}");
        }
    }

    #[test]
    fn analytic_velocity_rejects_t_at_one() {
        let g = GaussianTarget {
            mean: vec![0.0],
            std: 1.0,
        };
        assert!(analytic_velocity(&g, &[0.0], 1.0).is_err());
    }

    #[test]
    fn analytic_score_at_t0_is_standard_normal_score() {
        let g = GaussianTarget {
            mean: vec![5.0, -3.0],
            std: 2.0,
        };
        let s = analytic_score(&g, &[0.3, 1.7], 0.0).unwrap();
        assert_eq!(s, vec![-0.3, -1.7]);
    }

    #[test]
    fn analytic_score_vanishes_at_the_mode() {
        let g = GaussianTarget {
            mean: vec![1.0, 1.0],
            std: 0.5,
        };
        let t = 0.6;
        let x: Vec<f64> = g.mean.iter().map(|m| t * m).collect();
        let s = analytic_score(&g, &x, t).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn analytic_score_matches_finite_difference_of_log_density() {
        let g = GaussianTarget {
            mean: vec![1.0, 1.0],
            std: 0.5,
        };
        let t = 0.6;
        let x = [0.2, -0.3];
        let var = marginal_var(&g, t);
        let logp = |p: &[f64]| {
            let d2: f64 = p
                .iter()
                .zip(&g.mean)
                .map(|(pi, m)| (pi - t * m) * (pi - t * m))
                .sum();
            -0.5 * d2 / var
        };
        let fd = finite_diff_grad(logp, &x, 1e-6).unwrap();
        let s = analytic_score(&g, &x, t).unwrap();
        for (a, b) in s.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn score_from_velocity_at_t0_drops_the_velocity() {
        let s = score_from_velocity(&[1.0, 2.0], 0.0, &[99.0, -99.0]).unwrap();
        assert_eq!(s, vec![-1.0, -2.0]);
    }

    #[test]
    fn score_from_velocity_fixed_point_gives_zero() {
        // u = x/t makes the numerator vanish; pick binary-exact values.
        let t = 0.5;
        let x = [3.0, -1.5];
        let u: Vec<f64> = x.iter().map(|xi| xi / t).collect();
        let s = score_from_velocity(&x, t, &u).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn score_from_velocity_rejects_near_singular_t() {
        assert!(score_from_velocity(&[0.0], 0.9999, &[0.0]).is_err());
    }

    #[test]
    fn prop_identity_score_equals_velocity_transform_on_grid() {
        let g = GaussianTarget {
            mean: vec![1.0, -0.5],
            std: 0.7,
        };
        let mut max_err = 0.0f64;
        for ti in 1..=9 {
            let t = ti as f64 / 10.0;
            for ix in 0..11 {
                for iy in 0..11 {
                    let x = [-2.5 + 0.5 * ix as f64, -2.5 + 0.5 * iy as f64];
                    let u = analytic_velocity(&g, &x, t).unwrap();
                    let via_u = score_from_velocity(&x, t, &u).unwrap();
                    let direct = analytic_score(&g, &x, t).unwrap();
                    let err = via_u
                        .iter()
                        .zip(&direct)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    max_err = max_err.max(err);
                }
            }
        }
        assert!(max_err < 1e-10, "max residual {max_err}");
    }

    #[test]
    fn tweedie_reconstruction_matches_posterior_mean() {
        let g = GaussianTarget {
            mean: vec![1.0, 1.0],
            std: 0.5,
        };
        for &t in &[0.1, 0.35, 0.6, 0.9] {
            let x = [0.2, -0.3];
            let s = analytic_score(&g, &x, t).unwrap();
            let rebuilt = posterior_mean_from_score(&x, t, &s).unwrap();
            let direct = posterior_mean(&g, &x, t).unwrap();
            for (a, b) in rebuilt.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mixture_validation() {
        let bad = MixtureTarget {
            means: vec![vec![0.0], vec![1.0]],
            std: 0.5,
            weights: vec![0.6, 0.5],
        };
        assert!(bad.validate().is_err());
        let good = MixtureTarget {
            means: vec![vec![0.0], vec![1.0]],
            std: 0.5,
            weights: vec![0.5, 0.5],
        };
        assert!(good.validate().is_ok());
    }
}
