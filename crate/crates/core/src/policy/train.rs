//! Minibatch training: Adam over the graph-resident weights, seeded
//! shuffling, fresh noise draws per batch.  Single-threaded and
//! deterministic for a given seed.

use super::weights::{NetConfig, PolicyWeights};
use super::PolicyGraph;
use crate::error::{Error, Result};
use crate::simworld::Dataset;
use crate::tensor::{AdamHyper, AdamState};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Decorrelates the shuffle/noise stream from the weight-init stream, which
/// consumes the raw seed.
pub(crate) const SHUFFLE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch: 64,
            lr: 1e-3,
            beta: 1e-3,
            seed: 7,
        }
    }
}

/// Mean loss per epoch, in order.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Trains a fresh policy on the dataset.  Weight init consumes the seed's
/// first stream; shuffling and latent noise use a decorrelated stream so
/// changing epochs never changes initialization.
pub fn train(data: &Dataset, net: &NetConfig, cfg: &TrainConfig) -> Result<(PolicyWeights, TrainLog)> {
    let n = data.n_frames();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if data.channels != net.channels || data.height != net.height || data.width != net.width {
        return Err(Error::InvalidParameter(format!(
            "dataset frames are {}x{}x{}, model expects {}x{}x{}",
            data.channels, data.height, data.width, net.channels, net.height, net.width
        )));
    }
    let mut weights = PolicyWeights::init(net.clone(), cfg.beta, cfg.seed);
    let log = train_into(&mut weights, data, cfg)?;
    Ok((weights, log))
}

/// Optimizes `weights` in place.
fn train_into(weights: &mut PolicyWeights, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    let batch = cfg.batch.max(1).min(data.n_frames());
    let mut pg = PolicyGraph::build(weights, batch, cfg.beta)?;
    let sizes: Vec<usize> = weights.layers().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = AdamState::new(&sizes);
    let hyper = AdamHyper {
        lr: cfg.lr,
        ..AdamHyper::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);

    let obs_len = data.obs_len();
    let latent = weights.net.latent;
    let mut obs_buf = vec![0.0f32; batch * obs_len];
    let mut act_buf = vec![0.0f32; batch * 2];
    let mut eps_buf = vec![0.0f64; batch * latent];
    let mut grad_scratch: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();

    let log = run_epochs(data, cfg.epochs, batch, &mut rng, |chunk, rng| {
        fill_obs(data, chunk, obs_len, &mut obs_buf);
        for (bi, &(ti, si)) in chunk.iter().enumerate() {
            let a = data.action(ti as usize, si as usize);
            act_buf[bi * 2] = a[0];
            act_buf[bi * 2 + 1] = a[1];
        }
        for e in eps_buf.iter_mut() {
            *e = rng.sample::<f64, _>(StandardNormal);
        }
        pg.set_obs(&obs_buf)?;
        pg.set_target(&act_buf)?;
        pg.set_eps(&eps_buf)?;
        let loss = pg.forward()?;
        pg.backward_loss()?;
        adam.begin_step();
        for i in 0..sizes.len() {
            grad_scratch[i].copy_from_slice(pg.weight_grad(i).data());
            adam.update_one(i, pg.weight_mut(i), &grad_scratch[i], &hyper)?;
        }
        Ok(loss)
    })?;
    pg.store_weights(weights);
    Ok(log)
}

/// Copies the chunk's frames into a contiguous f32 batch buffer.
pub(crate) fn fill_obs(data: &Dataset, chunk: &[(u32, u32)], obs_len: usize, buf: &mut [f32]) {
    for (bi, &(ti, si)) in chunk.iter().enumerate() {
        let frame = data.frame(ti as usize, si as usize);
        buf[bi * obs_len..][..obs_len].copy_from_slice(frame);
    }
}

/// Shared minibatch loop: indexes every frame, reshuffles per epoch, and
/// hands fixed-size chunks to `step` along with the stream used for
/// shuffling so callers draw their noise from the same sequence.  `step`
/// owns the graph and optimizer; the return is its per-epoch mean.
pub(crate) fn run_epochs<F>(
    data: &Dataset,
    epochs: usize,
    batch: usize,
    rng: &mut ChaCha20Rng,
    mut step: F,
) -> Result<TrainLog>
where
    F: FnMut(&[(u32, u32)], &mut ChaCha20Rng) -> Result<f64>,
{
    let mut index: Vec<(u32, u32)> = Vec::with_capacity(data.n_frames());
    for (ti, traj) in data.trajs.iter().enumerate() {
        for si in 0..traj.len {
            index.push((ti as u32, si as u32));
        }
    }
    let mut log = TrainLog::default();
    for _epoch in 0..epochs {
        index.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in index.chunks_exact(batch) {
            loss_sum += step(chunk, rng)?;
            batches += 1;
        }
        log.epoch_loss.push(loss_sum / batches.max(1) as f64);
    }
    Ok(log)
}
