//! Process reward model training and evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bt_loss, perturb_pair, sigmoid, PreferencePair};
use crate::nn::{
    opt_step, standard_normal_vec, DenseNet, GradBuffer, InputEncoding, OptConfig, OptState,
    RngStream, StepOutcome,
};
use crate::{parallel, Error, Result};

/// Configuration for [`train_prm`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrmTrainConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub opt: OptConfig,
    /// Perturbation times are drawn from `U[t_min, 1]`. At `t = 0` both pair
    /// elements collapse onto the shared noise and the label carries no
    /// signal, so the degenerate end is excluded.
    pub t_min: f64,
    pub n_conditions: usize,
    pub seed: u64,
}

impl PrmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.opt.validate()?;
        if self.batch < 1 || self.hidden.is_empty() {
            return Err(Error::InvalidConfig("prm config needs batch >= 1 and hidden layers".into()));
        }
        if !(0.0..1.0).contains(&self.t_min) {
            return Err(Error::InvalidConfig("t_min must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Train a scalar reward net on noise-perturbed preference pairs.
///
/// Each batch item draws a pair (cycled), a shared timestep `t ~ U[t_min, 1]`
/// and shared noise, perturbs both elements along the linear path, and takes
/// a Bradley-Terry gradient step on the score difference.
pub fn train_prm(
    pairs: &[PreferencePair],
    cfg: &PrmTrainConfig,
) -> Result<(DenseNet, Vec<crate::flow::StepMetric>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = pairs[0].winner.len();
    let enc = InputEncoding::xt_fourier(d, cfg.n_conditions);
    let mut dims = vec![enc.width()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(1);
    let mut net = DenseNet::random(&dims, enc, RngStream::new(cfg.seed, 0))?;
    let mut state = OptState::new(&net, cfg.opt)?;
    let mut rng = RngStream::new(cfg.seed, 1).rng();
    let mut metrics = Vec::with_capacity(cfg.steps);

    struct Item {
        pair_idx: usize,
        t: f64,
        noise: Vec<f64>,
    }

    for step in 0..cfg.steps {
        let items: Vec<Item> = (0..cfg.batch)
            .map(|_| Item {
                pair_idx: rng.gen_range(0..pairs.len()),
                t: cfg.t_min + (1.0 - cfg.t_min) * rng.gen::<f64>(),
                noise: standard_normal_vec(&mut rng, d),
            })
            .collect();
        let inv_b = 1.0 / cfg.batch as f64;

        let per_item = parallel::par_map(&items, |item| -> Result<(f64, GradBuffer)> {
            let pair = &pairs[item.pair_idx];
            let (xw, xl) = perturb_pair(pair, item.t, &item.noise)?;
            let c = pair.condition;
            let s_w = net.forward(&xw, item.t, c)?[0];
            let s_l = net.forward(&xl, item.t, c)?[0];
            let loss = bt_loss(s_w, s_l);
            // d/ds_w of -log σ(s_w - s_l) is σ(s_w - s_l) - 1; s_l gets the
            // opposite sign.
            let upstream_w = (sigmoid(s_w - s_l) - 1.0) * inv_b;
            let mut grads = net.param_grad(&xw, item.t, c, &[upstream_w])?;
            let g_l = net.param_grad(&xl, item.t, c, &[-upstream_w])?;
            grads.add_scaled(1.0, &g_l);
            Ok((loss, grads))
        });

        let mut loss = 0.0;
        let mut grads = GradBuffer::zeros_like(&net);
        for item in per_item {
            let (l, g) = item?;
            loss += l * inv_b;
            grads.add_scaled(1.0, &g);
        }
        if !loss.is_finite() {
            log::error!("prm training diverged at step {step}");
            return Err(Error::Diverged { step });
        }
        if opt_step(&mut net, &grads, &mut state)? == StepOutcome::SkippedNonFinite {
            log::warn!("prm step {step}: non-finite gradient skipped");
        }
        metrics.push(crate::flow::StepMetric { step, loss });
    }
    Ok((net, metrics))
}

/// Per-timestep pairwise accuracy on a held-out pair set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrmEvalNode {
    pub t: f64,
    /// `None` when every pair was degenerate (identical elements) at this
    /// node, which makes the comparison meaningless.
    pub accuracy: Option<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrmEvalReport {
    pub nodes: Vec<PrmEvalNode>,
}

impl PrmEvalReport {
    pub fn min_accuracy(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| n.accuracy)
            .fold(None, |m, a| Some(m.map_or(a, |v: f64| v.min(a))))
    }

    /// CSV with a schema comment line, then `t,accuracy,n_pairs` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("#schema=prm-accuracy-v1\nt,accuracy,n_pairs\n");
        for n in &self.nodes {
            let acc = n
                .accuracy
                .map_or_else(|| "nan".to_string(), |a| format!("{a}"));
            out.push_str(&format!("{},{},{}\n", n.t, acc, n.n_pairs));
        }
        out
    }
}

/// Evaluate pairwise accuracy at each node of a timestep grid.
///
/// Every pair gets one shared noise draw per node; accuracy is the fraction
/// of non-degenerate pairs where the model scores the winner strictly above
/// the loser.
pub fn prm_accuracy_vs_t(
    prm: &DenseNet,
    pairs: &[PreferencePair],
    t_grid: &[f64],
    stream: RngStream,
) -> Result<PrmEvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = pairs[0].winner.len();
    let mut nodes = Vec::with_capacity(t_grid.len());
    for (node_idx, &t) in t_grid.iter().enumerate() {
        let mut rng = stream.with_index(stream.index + node_idx as u64).rng();
        let noises: Vec<Vec<f64>> = (0..pairs.len())
            .map(|_| standard_normal_vec(&mut rng, d))
            .collect();
        let indexed: Vec<usize> = (0..pairs.len()).collect();
        let outcomes = parallel::par_map(&indexed, |&i| -> Result<Option<bool>> {
            let pair = &pairs[i];
            if pair.winner == pair.loser {
                return Ok(None);
            }
            let (xw, xl) = perturb_pair(pair, t, &noises[i])?;
            let s_w = prm.forward(&xw, t, pair.condition)?[0];
            let s_l = prm.forward(&xl, t, pair.condition)?[0];
            Ok(Some(s_w > s_l))
        });
        let mut correct = 0usize;
        let mut decided = 0usize;
        for o in outcomes {
            if let Some(win) = o? {
                decided += 1;
                if win {
                    correct += 1;
                }
            }
        }
        nodes.push(PrmEvalNode {
            t,
            accuracy: (decided > 0).then(|| correct as f64 / decided as f64),
            n_pairs: decided,
        });
    }
    Ok(PrmEvalReport { nodes })
}
