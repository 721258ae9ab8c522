//! The imitation-learned navigation policy with a variational bottleneck:
//! the encoder's posterior gives both the action latent and a scalar
//! divergence-from-prior score used for failure detection, and the score's
//! gradient at the last conv layer localizes what drove it.

mod net;
mod train;
mod weights;

pub use net::{bilinear_upsample, Evaluator, PolicyGraph};
pub use train::{train, TrainConfig, TrainLog};
pub use weights::{EncoderWeights, LayerPair, NetConfig, PolicyWeights};

pub(crate) use net::{build_encoder, build_kl_elems, cam_from_maps};
pub(crate) use train::{fill_obs, run_epochs, SHUFFLE_SALT};
pub(crate) use weights::{push_layers, push_net, read_layers, read_net};

use crate::conformal::PredictionBand;
use crate::error::Result;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Normalized velocity command scaled by the simulator's physical maxima.
/// The policy's squashed heads emit v in [0,1] and omega in [-1,1]; recovery
/// maneuvers may command v down to -1 to reverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionCmd {
    pub v: f64,
    pub omega: f64,
}

impl ActionCmd {
    pub const STOP: ActionCmd = ActionCmd { v: 0.0, omega: 0.0 };

    pub fn clamped(self) -> ActionCmd {
        ActionCmd {
            v: self.v.clamp(-1.0, 1.0),
            omega: self.omega.clamp(-1.0, 1.0),
        }
    }

    /// Time-reversed command: used when replaying cached actions backward.
    pub fn reversed(self) -> ActionCmd {
        ActionCmd {
            v: -self.v,
            omega: -self.omega,
        }
    }
}

/// Diagonal-Gaussian posterior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// Closed-form KL divergence from the posterior to the unit Gaussian:
/// 0.5 * sum_i (mean_i^2 + exp(log_var_i) - log_var_i - 1).  Non-negative,
/// zero exactly at the prior.
pub fn kl_unit_gaussian(g: &LatentGaussian) -> f64 {
    g.mean
        .iter()
        .zip(&g.log_var)
        .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
        * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Infer,
}

/// Reparameterized draw from the posterior; inference mode returns the mean
/// exactly so downstream scores stay deterministic.
pub fn sample_latent(g: &LatentGaussian, rng: &mut impl Rng, mode: SampleMode) -> Vec<f64> {
    match mode {
        SampleMode::Infer => g.mean.clone(),
        SampleMode::Train => g
            .mean
            .iter()
            .zip(&g.log_var)
            .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    }
}

/// Non-negative attribution map: `raw` at feature-map resolution, `full`
/// bilinearly upsampled to the observation size.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub raw: Tensor,
    pub full: Tensor,
}

/// One control step's outputs.  `flagged` is None when no band was supplied;
/// the heatmap is computed only for flagged frames.
#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub action: ActionCmd,
    pub score: f64,
    pub flagged: Option<bool>,
    pub heatmap: Option<Heatmap>,
}

/// Runs the encoder on one frame: posterior parameters plus the last conv
/// layer's post-ReLU feature maps, shape [K, fh, fw].
pub fn encode(obs: &[f32], w: &PolicyWeights) -> Result<(LatentGaussian, Tensor)> {
    let mut ev = Evaluator::new(w)?;
    ev.eval(obs)?;
    let latent = ev.latent();
    let maps = ev.feature_maps();
    Ok((latent, maps))
}

/// Decodes an action from a latent vector: hidden ReLU layer, then the two
/// squashed heads.
pub fn decode_action(z: &[f64], w: &PolicyWeights) -> Result<ActionCmd> {
    if z.len() != w.net.latent {
        return Err(crate::error::Error::InvalidParameter(format!(
            "latent has {} values, model expects {}",
            z.len(),
            w.net.latent
        )));
    }
    let hidden = w.net.hidden;
    let mut h = vec![0.0; hidden];
    let wd = w.dec_hidden.w.data();
    for (o, hv) in h.iter_mut().enumerate() {
        let row = &wd[o * z.len()..][..z.len()];
        let acc: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
        *hv = (acc + w.dec_hidden.b.data()[o]).max(0.0);
    }
    let wo = w.dec_out.w.data();
    let mut raw = [0.0; 2];
    for (o, rv) in raw.iter_mut().enumerate() {
        let row = &wo[o * hidden..][..hidden];
        *rv = row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + w.dec_out.b.data()[o];
    }
    Ok(ActionCmd {
        v: 1.0 / (1.0 + (-raw[0]).exp()),
        omega: raw[1].tanh(),
    })
}

/// Training objective on one batch: mean over samples of squared action
/// error plus beta times the posterior KL, with a reparameterized latent
/// draw per sample.
pub fn vib_loss(
    w: &PolicyWeights,
    obs: &[f32],
    actions: &[f32],
    beta: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let per = w.net.obs_len();
    if obs.is_empty() || obs.len() % per != 0 || actions.len() != obs.len() / per * 2 {
        return Err(crate::error::Error::InvalidParameter(
            "batch must be a whole number of (observation, action) pairs".into(),
        ));
    }
    let batch = obs.len() / per;
    let mut pg = PolicyGraph::build(w, batch, beta)?;
    pg.set_obs(obs)?;
    pg.set_target(actions)?;
    let eps: Vec<f64> = (0..batch * w.net.latent)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    pg.set_eps(&eps)?;
    pg.forward()
}

/// Attribution heatmap for one frame.
pub fn grad_cam(obs: &[f32], w: &PolicyWeights) -> Result<Heatmap> {
    let mut ev = Evaluator::new(w)?;
    ev.eval(obs)?;
    ev.grad_cam()
}

/// One-shot convenience wrapper; loops should hold an `Evaluator` instead to
/// reuse the graph.
pub fn policy_step(
    obs: &[f32],
    w: &PolicyWeights,
    band: Option<&PredictionBand>,
    t: usize,
) -> Result<PolicyStep> {
    Evaluator::new(w)?.step(obs, band, t)
}
