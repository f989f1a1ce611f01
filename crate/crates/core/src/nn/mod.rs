//! Minimal dense networks with exact reverse-mode gradients.
//!
//! Everything downstream — the velocity field, the process reward model, the
//! frozen decoder — is a [`DenseNet`]: a stack of affine layers with tanh on
//! hidden layers and an identity output, over a fixed encoding of the
//! `(x, t, c)` triple. Gradients are hand-rolled reverse mode and checked
//! against the central-difference oracles in [`grad`]; no autodiff framework
//! is involved, which is the point: the gradient path is small enough to
//! verify exhaustively.

mod checkpoint;
mod grad;
mod net;
mod optim;
mod rng;

pub use checkpoint::{load_file, load_json, save_file, save_json};
pub use grad::{finite_diff_grad, finite_diff_input_grad, finite_diff_param_grad, GradBuffer};
pub use net::{Activation, DenseNet, EncodingKind, InputEncoding};
pub use optim::{opt_step, OptConfig, OptState, StepOutcome};
pub use rng::{standard_normal_vec, RngStream};
