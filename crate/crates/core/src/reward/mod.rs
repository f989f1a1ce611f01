//! Ground-truth rewards, the frozen decoder, and preference machinery.
//!
//! The toy pipeline mirrors the latent/pixel split of a real generation
//! stack: trajectories live in a low-dimensional latent space, while the
//! outcome reward scores the image of the final state under a frozen,
//! randomly initialized "decoder" network. Preference pairs labelled by a
//! ground-truth reward stand in for human annotation; the process reward
//! model is trained on noise-perturbed pairs with the Bradley-Terry ranking
//! loss.

mod prm;
mod spsa;

pub use prm::{prm_accuracy_vs_t, train_prm, PrmEvalNode, PrmEvalReport, PrmTrainConfig};
pub use spsa::{spsa_estimate, spsa_variance_diagnostic, SpsaDiagnostic, SpsaPointReport};

use serde::{Deserialize, Serialize};

use crate::flow::interpolate;
use crate::nn::{DenseNet, InputEncoding, RngStream};
use crate::{vecops, Error, Result};

/// A frozen latent-to-"pixel" map.
///
/// Seeded once at experiment start and never trained; tanh hidden layers keep
/// it smooth so zeroth-order gradient targets are differentiable. The default
/// geometry expands `d` latent dims to `4d` output dims.
#[derive(Debug, Clone)]
pub struct DecoderMap {
    net: DenseNet,
}

impl DecoderMap {
    /// Random frozen decoder `R^d -> R^{expansion·d}`.
    pub fn new(data_dim: usize, hidden: usize, expansion: usize, stream: RngStream) -> Result<Self> {
        let enc = InputEncoding::raw(data_dim);
        let net = DenseNet::random(
            &[enc.width(), hidden, expansion * data_dim],
            enc,
            stream,
        )?;
        Ok(Self { net })
    }

    /// Wrap an explicit network (tests use an identity map).
    pub fn from_net(net: DenseNet) -> Self {
        Self { net }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.data_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn decode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(x, 0.0, 0)
    }

    /// Exact `J^T upstream` through the decoder, for the chain rule of
    /// composed objectives.
    pub fn input_vjp(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.net.input_vjp(x, 0.0, 0, upstream)
    }
}

/// Deterministic toy reward, bounded above on any compact set.
///
/// The condition id selects the preferred mode of `ModeTilt`;
/// `TargetDistance` ignores it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundTruthReward {
    /// `r(y) = -‖y - target‖²`: zero at the target, negative elsewhere.
    TargetDistance { target: Vec<f64> },
    /// `r(y, c) = exp(-‖y - modes[c]‖² / (2·width²))`: a positive bump of
    /// height 1 around the condition's preferred mode.
    ModeTilt { modes: Vec<Vec<f64>>, width: f64 },
}

impl GroundTruthReward {
    pub fn dim(&self) -> usize {
        match self {
            GroundTruthReward::TargetDistance { target } => target.len(),
            GroundTruthReward::ModeTilt { modes, .. } => modes.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GroundTruthReward::TargetDistance { target } => {
                if target.is_empty() {
                    return Err(Error::InvalidConfig("empty reward target".into()));
                }
            }
            GroundTruthReward::ModeTilt { modes, width } => {
                if modes.is_empty() || !(*width > 0.0) {
                    return Err(Error::InvalidConfig(
                        "mode tilt needs modes and width > 0".into(),
                    ));
                }
                let d = modes[0].len();
                if modes.iter().any(|m| m.len() != d) {
                    return Err(Error::InvalidConfig("mode dims differ".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, y: &[f64], c: usize) -> Result<f64> {
        match self {
            GroundTruthReward::TargetDistance { target } => {
                if y.len() != target.len() {
                    return Err(Error::ShapeMismatch {
                        context: "reward input",
                        expected: target.len(),
                        got: y.len(),
                    });
                }
                Ok(-vecops::squared_distance(y, target))
            }
            GroundTruthReward::ModeTilt { modes, width } => {
                let mode = modes.get(c).ok_or(Error::BadCondition {
                    condition: c,
                    n_conditions: modes.len(),
                })?;
                if y.len() != mode.len() {
                    return Err(Error::ShapeMismatch {
                        context: "reward input",
                        expected: mode.len(),
                        got: y.len(),
                    });
                }
                Ok((-vecops::squared_distance(y, mode) / (2.0 * width * width)).exp())
            }
        }
    }

    /// Exact gradient `∇_y r(y, c)`.
    pub fn grad(&self, y: &[f64], c: usize) -> Result<Vec<f64>> {
        match self {
            GroundTruthReward::TargetDistance { target } => Ok(y
                .iter()
                .zip(target)
                .map(|(yi, ti)| -2.0 * (yi - ti))
                .collect()),
            GroundTruthReward::ModeTilt { modes, width } => {
                let r = self.eval(y, c)?;
                let mode = &modes[c];
                let w2 = width * width;
                Ok(y.iter()
                    .zip(mode)
                    .map(|(yi, mi)| -r * (yi - mi) / w2)
                    .collect())
            }
        }
    }
}

/// Outcome reward of a final latent: the ground-truth reward evaluated in
/// decoded space, `r*(decoder(x), c)`.
pub fn outcome_reward(
    decoder: &DecoderMap,
    reward: &GroundTruthReward,
    x_final: &[f64],
    c: usize,
) -> Result<f64> {
    if !vecops::all_finite(x_final) {
        return Err(Error::NonFinite {
            context: "outcome reward input".into(),
        });
    }
    reward.eval(&decoder.decode(x_final)?, c)
}

/// One labelled preference: the winner beats the loser under the ground-truth
/// reward by at least the generation margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    #[serde(rename = "w")]
    pub winner: Vec<f64>,
    #[serde(rename = "l")]
    pub loser: Vec<f64>,
    #[serde(rename = "c")]
    pub condition: usize,
}

/// Perturb both pair elements along the linear path with a shared `(t, noise)`
/// draw: `X_t = (1-t)·noise + t·X_1`.
pub fn perturb_pair(pair: &PreferencePair, t: f64, noise: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        interpolate(noise, &pair.winner, t)?,
        interpolate(noise, &pair.loser, t)?,
    ))
}

/// Numerically stable Bradley-Terry loss `-log σ(s_w - s_l)`.
pub fn bt_loss(s_w: f64, s_l: f64) -> f64 {
    softplus(-(s_w - s_l))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, stable on both tails.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draw preference pairs labelled by the ground-truth reward.
///
/// Candidates come from the proposal distribution; a candidate pair is kept
/// only when the reward gap exceeds `margin`, which keeps near-ties (label
/// noise) out of the training set. Conditions cycle uniformly.
pub fn generate_pairs(
    reward: &GroundTruthReward,
    proposal: &crate::flow::DataTarget,
    n_conditions: usize,
    margin: f64,
    count: usize,
    stream: RngStream,
) -> Result<Vec<PreferencePair>> {
    reward.validate()?;
    proposal.validate()?;
    if margin < 0.0 {
        return Err(Error::InvalidConfig("margin must be >= 0".into()));
    }
    let mut rng = stream.rng();
    let mut pairs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let max_attempts = count.saturating_mul(1000).max(10_000);
    while pairs.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidConfig(format!(
                "pair generation stalled: {} of {count} pairs after {attempts} attempts \
                 (margin {margin} too strict for this reward/proposal?)",
                pairs.len()
            )));
        }
        let c = pairs.len() % n_conditions.max(1);
        let a = proposal.sample(&mut rng);
        let b = proposal.sample(&mut rng);
        let ra = reward.eval(&a, c)?;
        let rb = reward.eval(&b, c)?;
        if (ra - rb).abs() < margin {
            continue;
        }
        let (winner, loser) = if ra > rb { (a, b) } else { (b, a) };
        pairs.push(PreferencePair {
            winner,
            loser,
            condition: c,
        });
    }
    Ok(pairs)
}

/// Serialize pairs as JSONL lines `{"w": [...], "l": [...], "c": n}`.
pub fn pairs_to_jsonl(pairs: &[PreferencePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serialization"));
        out.push('\n');
    }
    out
}

pub fn pairs_from_jsonl(text: &str) -> Result<Vec<PreferencePair>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
