//! Zeroth-order gradient estimation and its variance diagnostic.
//!
//! The two-sided estimator
//!
//! ```text
//! g_hat = (f(x + σz) - f(x - σz)) / (2σ) · z,   z ~ N(0, I)
//! ```
//!
//! is unbiased for linear (and, by symmetry, quadratic) objectives, but its
//! per-coordinate variance scales with the full squared gradient norm rather
//! than the coordinate's own gradient. [`spsa_variance_diagnostic`] measures
//! that blow-up on the composed decoder-plus-reward objective, documenting
//! why single-sample zeroth-order guidance is useless in higher dimensions
//! while an exact latent gradient path is not.

use serde::Serialize;

use super::{DecoderMap, GroundTruthReward};
use crate::nn::{standard_normal_vec, RngStream};
use crate::{parallel, Error, Result};

/// Averaged two-sided SPSA gradient estimate over `k` perturbation draws.
pub fn spsa_estimate<F>(f: F, x: &[f64], sigma: f64, k: usize, stream: RngStream) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig("perturbation scale must be > 0".into()));
    }
    if k < 1 {
        return Err(Error::InvalidConfig("at least one draw required".into()));
    }
    let d = x.len();
    let mut rng = stream.rng();
    let draws: Vec<Vec<f64>> = (0..k).map(|_| standard_normal_vec(&mut rng, d)).collect();

    let estimates = parallel::par_map(&draws, |z| -> Result<Vec<f64>> {
        let plus: Vec<f64> = x.iter().zip(z).map(|(xi, zi)| xi + sigma * zi).collect();
        let minus: Vec<f64> = x.iter().zip(z).map(|(xi, zi)| xi - sigma * zi).collect();
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: "spsa objective".into(),
            });
        }
        let scale = (fp - fm) / (2.0 * sigma);
        Ok(z.iter().map(|zi| scale * zi).collect())
    });

    let mut mean = vec![0.0; d];
    for est in estimates {
        for (m, e) in mean.iter_mut().zip(est?) {
            *m += e / k as f64;
        }
    }
    Ok(mean)
}

/// Variance measurement at one probe point.
#[derive(Debug, Clone, Serialize)]
pub struct SpsaPointReport {
    pub x: Vec<f64>,
    /// Exact gradient of the composed objective via the chain rule.
    pub exact_grad: Vec<f64>,
    /// Population variance of each coordinate of the K=1 estimator.
    pub coord_variance: Vec<f64>,
    /// mean_i Var_i / mean_i g_i² — equivalently the total estimator
    /// variance over the squared gradient norm.
    pub variance_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpsaDiagnostic {
    pub trials: usize,
    pub sigma: f64,
    pub points: Vec<SpsaPointReport>,
}

impl SpsaDiagnostic {
    pub fn min_ratio(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.variance_ratio)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Compare K=1 SPSA estimates of `r*(decoder(x))` against the exact gradient.
///
/// For each probe point, runs `trials` independent single-draw estimates,
/// computes their per-coordinate variance, and reports the ratio of the mean
/// coordinate variance to the mean squared gradient coordinate. In the
/// small-σ regime this ratio concentrates near `d + 1` for a `d`-dimensional
/// latent, which is exactly the dimensional penalty that makes single-sample
/// estimates unusable.
pub fn spsa_variance_diagnostic(
    decoder: &DecoderMap,
    reward: &GroundTruthReward,
    points: &[Vec<f64>],
    trials: usize,
    sigma: f64,
    stream: RngStream,
) -> Result<SpsaDiagnostic> {
    if trials < 2 {
        return Err(Error::InvalidConfig("variance needs at least 2 trials".into()));
    }
    let objective = |x: &[f64]| -> Result<f64> { reward.eval(&decoder.decode(x)?, 0) };

    let mut reports = Vec::with_capacity(points.len());
    for (pi, x) in points.iter().enumerate() {
        let d = x.len();
        // Exact chain rule: J_decoder^T · ∇r evaluated at the decoded point.
        let decoded = decoder.decode(x)?;
        let exact_grad = decoder.input_vjp(x, &reward.grad(&decoded, 0)?)?;

        let trial_ids: Vec<usize> = (0..trials).collect();
        let estimates = parallel::par_map(&trial_ids, |&trial| {
            spsa_estimate(
                objective,
                x,
                sigma,
                1,
                stream.with_index(stream.index + (pi * trials + trial) as u64 + 1),
            )
        });

        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut collected = Vec::with_capacity(trials);
        for est in estimates {
            let est = est?;
            for (m, e) in mean.iter_mut().zip(&est) {
                *m += e / trials as f64;
            }
            collected.push(est);
        }
        for est in &collected {
            for i in 0..d {
                let dev = est[i] - mean[i];
                sq[i] += dev * dev / trials as f64;
            }
        }
        let mean_var: f64 = sq.iter().sum::<f64>() / d as f64;
        let mean_grad_sq: f64 =
            exact_grad.iter().map(|g| g * g).sum::<f64>() / d as f64;
        reports.push(SpsaPointReport {
            x: x.clone(),
            exact_grad,
            coord_variance: sq,
            variance_ratio: mean_var / mean_grad_sq,
        });
    }
    Ok(SpsaDiagnostic {
        trials,
        sigma,
        points: reports,
    })
}
