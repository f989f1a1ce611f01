//! The dense network and its input encoding.

use serde::{Deserialize, Serialize};

use super::grad::GradBuffer;
use super::rng::RngStream;
use crate::{vecops, Error, Result};

/// Hidden-layer activation. The output layer is always identity.
///
/// Tanh keeps the network smooth everywhere, so reward-model input gradients
/// (the guidance field) are continuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// How `(x, t, c)` become the network input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingKind {
    /// `[x, 0, 0, 0, 0...]` — the time and condition slots are zeroed.
    Raw,
    /// `[x, t, sin(2πt), cos(2πt), one-hot(c)]`.
    XtFourierV1,
}

/// Input encoding: kind plus the dimensions needed to size the input layer.
///
/// The input width is `data_dim + 3 + n_conditions` for both kinds, so nets
/// with different encodings are interchangeable shape-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub kind: EncodingKind,
    pub data_dim: usize,
    pub n_conditions: usize,
}

impl InputEncoding {
    pub fn raw(data_dim: usize) -> Self {
        Self {
            kind: EncodingKind::Raw,
            data_dim,
            n_conditions: 0,
        }
    }

    pub fn xt_fourier(data_dim: usize, n_conditions: usize) -> Self {
        Self {
            kind: EncodingKind::XtFourierV1,
            data_dim,
            n_conditions,
        }
    }

    pub fn width(&self) -> usize {
        self.data_dim + 3 + self.n_conditions
    }

    /// Build the input vector. `c` is ignored when `n_conditions == 0`.
    pub fn encode(&self, x: &[f64], t: f64, c: usize) -> Result<Vec<f64>> {
        if x.len() != self.data_dim {
            return Err(Error::ShapeMismatch {
                context: "input encoding",
                expected: self.data_dim,
                got: x.len(),
            });
        }
        if self.n_conditions > 0 && c >= self.n_conditions {
            return Err(Error::BadCondition {
                condition: c,
                n_conditions: self.n_conditions,
            });
        }
        let mut input = Vec::with_capacity(self.width());
        input.extend_from_slice(x);
        match self.kind {
            EncodingKind::Raw => {
                input.resize(self.width(), 0.0);
            }
            EncodingKind::XtFourierV1 => {
                let angle = 2.0 * std::f64::consts::PI * t;
                input.push(t);
                input.push(angle.sin());
                input.push(angle.cos());
                for j in 0..self.n_conditions {
                    input.push(if j == c { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(input)
    }
}

/// A fully connected network with 64-bit parameters.
///
/// `layer_dims = [n_in, h_1, ..., n_out]`; layer `l` maps `layer_dims[l]`
/// to `layer_dims[l + 1]` with a row-major weight matrix. Hidden layers
/// apply tanh, the final layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub(crate) layer_dims: Vec<usize>,
    /// Row-major `out × in` matrices, one per layer.
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) biases: Vec<Vec<f64>>,
    pub(crate) activation: Activation,
    pub(crate) encoding: InputEncoding,
}

impl DenseNet {
    /// All-zero parameters.
    pub fn zeros(layer_dims: &[usize], encoding: InputEncoding) -> Result<Self> {
        Self::from_parts(
            layer_dims.to_vec(),
            layer_dims
                .windows(2)
                .map(|w| vec![0.0; w[0] * w[1]])
                .collect(),
            layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect(),
            encoding,
        )
    }

    /// Gaussian init scaled by `1/sqrt(fan_in)`, deterministic in the stream.
    pub fn random(layer_dims: &[usize], encoding: InputEncoding, stream: RngStream) -> Result<Self> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = stream.rng();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Self::from_parts(layer_dims.to_vec(), weights, biases, encoding)
    }

    /// Assemble from explicit parameters, validating shape consistency.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        encoding: InputEncoding,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "a network needs at least input and output dims".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("layer dims must be positive".into()));
        }
        if layer_dims[0] != encoding.width() {
            return Err(Error::ShapeMismatch {
                context: "encoding width vs input layer",
                expected: encoding.width(),
                got: layer_dims[0],
            });
        }
        let n_layers = layer_dims.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::ShapeMismatch {
                context: "layer count",
                expected: n_layers,
                got: weights.len(),
            });
        }
        for (l, w) in layer_dims.windows(2).enumerate() {
            if weights[l].len() != w[0] * w[1] {
                return Err(Error::ShapeMismatch {
                    context: "weight matrix",
                    expected: w[0] * w[1],
                    got: weights[l].len(),
                });
            }
            if biases[l].len() != w[1] {
                return Err(Error::ShapeMismatch {
                    context: "bias vector",
                    expected: w[1],
                    got: biases[l].len(),
                });
            }
        }
        let net = Self {
            layer_dims,
            weights,
            biases,
            activation: Activation::Tanh,
            encoding,
        };
        net.check_finite()?;
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn encoding(&self) -> InputEncoding {
        self.encoding
    }

    pub fn data_dim(&self) -> usize {
        self.encoding.data_dim
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self.weights.iter().all(|w| vecops::all_finite(w))
            && self.biases.iter().all(|b| vecops::all_finite(b));
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: "network parameters".into(),
            })
        }
    }

    /// Evaluate the network at `(x, t, c)`.
    pub fn forward(&self, x: &[f64], t: f64, c: usize) -> Result<Vec<f64>> {
        let input = self.encoding.encode(x, t, c)?;
        Ok(self.run(&input).pop().unwrap())
    }

    /// Forward pass over an already-encoded input, keeping every layer's
    /// post-activation output (`result[0]` is the input itself).
    fn run(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.weights.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let prev = &acts[l];
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut out = Vec::with_capacity(n_out);
            for row in 0..n_out {
                let mut z = b[row];
                let base = row * n_in;
                for col in 0..n_in {
                    z += w[base + col] * prev[col];
                }
                out.push(if l + 1 < n_layers { z.tanh() } else { z });
            }
            acts.push(out);
        }
        acts
    }

    /// Reverse-mode gradients of `⟨upstream, forward(x, t, c)⟩`.
    ///
    /// Returns exact parameter gradients and the gradient with respect to the
    /// `x`-part of the input (the time and condition features are constants of
    /// the encoding, so they carry no `x`-gradient).
    pub fn backward(
        &self,
        x: &[f64],
        t: f64,
        c: usize,
        upstream: &[f64],
    ) -> Result<(GradBuffer, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "upstream vector",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let input = self.encoding.encode(x, t, c)?;
        let acts = self.run(&input);
        let n_layers = self.weights.len();

        let mut grads = GradBuffer::zeros_like(self);
        // Output layer is identity, so the seed delta is the upstream itself.
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let prev = &acts[l];
            {
                let gw = &mut grads.weights[l];
                let gb = &mut grads.biases[l];
                for row in 0..n_out {
                    let base = row * n_in;
                    let d = delta[row];
                    gb[row] += d;
                    for col in 0..n_in {
                        gw[base + col] += d * prev[col];
                    }
                }
            }
            // Propagate to the previous layer: W^T delta, through tanh' where
            // the previous activations were tanh outputs.
            let mut next_delta = vec![0.0; n_in];
            let w = &self.weights[l];
            for row in 0..n_out {
                let base = row * n_in;
                let d = delta[row];
                for col in 0..n_in {
                    next_delta[col] += w[base + col] * d;
                }
            }
            if l > 0 {
                for (nd, a) in next_delta.iter_mut().zip(&acts[l]) {
                    *nd *= 1.0 - a * a;
                }
            }
            delta = next_delta;
        }
        // delta now holds the gradient wrt the encoded input; the x-part
        // occupies the first data_dim slots under both encodings.
        delta.truncate(self.encoding.data_dim);
        Ok((grads, delta))
    }

    /// Exact parameter gradients of `⟨upstream, forward⟩`.
    pub fn param_grad(&self, x: &[f64], t: f64, c: usize, upstream: &[f64]) -> Result<GradBuffer> {
        Ok(self.backward(x, t, c, upstream)?.0)
    }

    /// Gradient of `⟨upstream, forward⟩` with respect to `x`.
    pub fn input_vjp(&self, x: &[f64], t: f64, c: usize, upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward(x, t, c, upstream)?.1)
    }

    /// `∇_x` of a scalar-output network. Rejects non-scalar outputs.
    pub fn input_grad(&self, x: &[f64], t: f64, c: usize) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::ShapeMismatch {
                context: "input_grad requires a scalar output",
                expected: 1,
                got: self.output_dim(),
            });
        }
        self.input_vjp(x, t, c, &[1.0])
    }
}
