//! Gradient containers and central-difference oracles.

use super::net::DenseNet;
use crate::{Error, Result};

/// Parameter-shaped gradient accumulator mirroring a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += scale * other`. Shapes must match.
    pub fn add_scaled(&mut self, scale: f64, other: &GradBuffer) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for x in w {
                *x *= s;
            }
        }
        for b in &mut self.biases {
            for x in b {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_difference(&self, other: &GradBuffer) -> f64 {
        self.iter()
            .zip(other.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Flat view over all entries, weights first, layer by layer.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .chain(self.biases.iter().flat_map(|b| b.iter().copied()))
    }
}

/// Central-difference gradient of a scalar callback:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be > 0".into()));
    }
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite difference at coordinate {i}"),
            });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Central differences of `⟨upstream, forward⟩` over every network parameter.
///
/// Brute force on purpose: one cloned network and two forward passes per
/// parameter. This is the oracle the reverse-mode path is judged against.
pub fn finite_diff_param_grad(
    net: &DenseNet,
    x: &[f64],
    t: f64,
    c: usize,
    upstream: &[f64],
    h: f64,
) -> Result<GradBuffer> {
    let objective = |n: &DenseNet| -> Result<f64> {
        let out = n.forward(x, t, c)?;
        Ok(out.iter().zip(upstream).map(|(o, u)| o * u).sum())
    };
    let mut grads = GradBuffer::zeros_like(net);
    let mut probe = net.clone();
    let n_layers = net.weights.len();
    for l in 0..n_layers {
        for i in 0..net.weights[l].len() {
            let orig = net.weights[l][i];
            probe.weights[l][i] = orig + h;
            let fp = objective(&probe)?;
            probe.weights[l][i] = orig - h;
            let fm = objective(&probe)?;
            probe.weights[l][i] = orig;
            grads.weights[l][i] = (fp - fm) / (2.0 * h);
        }
        for i in 0..net.biases[l].len() {
            let orig = net.biases[l][i];
            probe.biases[l][i] = orig + h;
            let fp = objective(&probe)?;
            probe.biases[l][i] = orig - h;
            let fm = objective(&probe)?;
            probe.biases[l][i] = orig;
            grads.biases[l][i] = (fp - fm) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Central differences of a scalar-output network over `x`.
pub fn finite_diff_input_grad(
    net: &DenseNet,
    x: &[f64],
    t: f64,
    c: usize,
    h: f64,
) -> Result<Vec<f64>> {
    if net.output_dim() != 1 {
        return Err(Error::ShapeMismatch {
            context: "finite_diff_input_grad requires a scalar output",
            expected: 1,
            got: net.output_dim(),
        });
    }
    finite_diff_grad(|p| net.forward(p, t, c).map(|o| o[0]).unwrap_or(f64::NAN), x, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_for_central_differences() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8, "{}", g[0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.25, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_values_name_the_coordinate() {
        let f = |x: &[f64]| if x[1] > 0.5 { f64::NAN } else { 0.0 };
        let err = finite_diff_grad(f, &[0.0, 0.5], 1e-3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("coordinate 1"), "{msg}");
    }

    #[test]
    fn grad_buffer_accumulation() {
        use crate::nn::{DenseNet, InputEncoding, RngStream};
        let enc = InputEncoding::xt_fourier(2, 1);
        let net = DenseNet::random(&[enc.width(), 3, 1], enc, RngStream::new(4, 0)).unwrap();
        let g = net.param_grad(&[0.2, 0.3], 0.5, 0, &[1.0]).unwrap();
        let mut acc = GradBuffer::zeros_like(&net);
        acc.add_scaled(2.0, &g);
        acc.add_scaled(-2.0, &g);
        assert_eq!(acc.max_abs(), 0.0);
        acc.add_scaled(1.0, &g);
        acc.scale(3.0);
        let diff = acc
            .iter()
            .zip(g.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - 3.0 * b).abs()));
        assert!(diff < 1e-15);
    }
}
