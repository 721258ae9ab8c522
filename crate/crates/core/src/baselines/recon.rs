//! Reconstruction-based detectors: a convolutional autoencoder scored by
//! pixel error, and its variational variant scored either by pixel error or
//! by the posterior's divergence from the prior with the same attribution
//! map as the policy.  One trained weight file serves both scoring modes.

use crate::error::{Error, Result};
use crate::io::{f64_exact, Container};
use crate::policy::{
    build_encoder, build_kl_elems, cam_from_maps, fill_obs, push_layers, push_net, read_layers,
    read_net, run_epochs, EncoderWeights, Heatmap, LayerPair, NetConfig, TrainConfig, TrainLog,
    SHUFFLE_SALT,
};
use crate::simworld::Dataset;
use crate::tensor::{AdamHyper, AdamState, Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// Autoencoder parameters: the policy's encoder stack plus a mirrored
/// deconvolutional decoder back to image space.  `variational` records
/// whether training sampled the latent and penalized its divergence; a plain
/// autoencoder uses the mean head directly and never trains the
/// log-variance head.
#[derive(Debug, Clone, PartialEq)]
pub struct AeWeights {
    pub net: NetConfig,
    pub variational: bool,
    pub beta: f64,
    pub seed: u64,
    pub enc: EncoderWeights,
    pub dec_lin: LayerPair,
    pub dec_deconv: [LayerPair; 3],
}

impl AeWeights {
    pub fn zeros(net: NetConfig, variational: bool) -> AeWeights {
        let [c1, c2, c3] = net.conv;
        AeWeights {
            enc: EncoderWeights::zeros(&net),
            dec_lin: LayerPair::zeros(&[net.flat_dim(), net.latent], net.flat_dim()),
            dec_deconv: [
                LayerPair::zeros(&[c3, c2, 3, 3], c2),
                LayerPair::zeros(&[c2, c1, 3, 3], c1),
                LayerPair::zeros(&[c1, net.channels, 3, 3], net.channels),
            ],
            net,
            variational,
            beta: 0.0,
            seed: 0,
        }
    }

    pub fn init(net: NetConfig, variational: bool, beta: f64, seed: u64) -> AeWeights {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let enc = EncoderWeights::init(&net, &mut rng);
        let [c1, c2, c3] = net.conv;
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let dec_lin = LayerPair::init(
            &mut rng,
            &[net.flat_dim(), net.latent],
            net.flat_dim(),
            he(net.latent),
        );
        let dec_deconv = [
            LayerPair::init(&mut rng, &[c3, c2, 3, 3], c2, he(c3 * 9)),
            LayerPair::init(&mut rng, &[c2, c1, 3, 3], c1, he(c2 * 9)),
            LayerPair::init(
                &mut rng,
                &[c1, net.channels, 3, 3],
                net.channels,
                (1.0 / (c1 * 9) as f64).sqrt(),
            ),
        ];
        AeWeights {
            net,
            variational,
            beta,
            seed,
            enc,
            dec_lin,
            dec_deconv,
        }
    }

    pub fn layers(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.enc.layers();
        out.push(("dlin.w".into(), &self.dec_lin.w));
        out.push(("dlin.b".into(), &self.dec_lin.b));
        for (i, lp) in self.dec_deconv.iter().enumerate() {
            out.push((format!("dconv{}.w", i + 1), &lp.w));
            out.push((format!("dconv{}.b", i + 1), &lp.b));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.enc.layers_mut();
        out.push(("dlin.w".into(), &mut self.dec_lin.w));
        out.push(("dlin.b".into(), &mut self.dec_lin.b));
        for (i, lp) in self.dec_deconv.iter_mut().enumerate() {
            out.push((format!("dconv{}.w", i + 1), &mut lp.w));
            out.push((format!("dconv{}.b", i + 1), &mut lp.b));
        }
        out
    }

    /// Kind is `ae` or `vae` so loaders can tell which scores the file
    /// supports.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        c.push("version", 1);
        c.push("kind", if self.variational { "vae" } else { "ae" });
        push_net(&mut c, &self.net);
        c.push("beta", f64_exact(self.beta));
        c.push("seed", self.seed);
        push_layers(&mut c, &self.layers());
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<AeWeights> {
        let c = Container::read(path)?;
        let kind = c.require(path, "kind")?;
        let variational = match kind {
            "vae" => true,
            "ae" => false,
            other => {
                return Err(Error::format(
                    path,
                    format!("kind is {other}, expected ae or vae"),
                ))
            }
        };
        let net = read_net(&c, path)?;
        let mut out = AeWeights::zeros(net, variational);
        out.beta = c.require_parsed(path, "beta")?;
        out.seed = c.require_parsed(path, "seed")?;
        read_layers(&c, path, &mut out.layers_mut())?;
        Ok(out)
    }
}

/// Output padding per upsampling stage so three stride-2 deconvolutions
/// exactly invert the encoder's three ceil-halvings.  Fails when height and
/// width parities diverge at some stage, since each deconv applies a single
/// output padding to both axes.
fn mirror_out_pads(net: &NetConfig) -> Result<[usize; 3]> {
    let h1 = net.height.div_ceil(2);
    let w1 = net.width.div_ceil(2);
    let h2 = h1.div_ceil(2);
    let w2 = w1.div_ceil(2);
    let (fh, fw) = net.feat_hw();
    let stages = [(fh, fw, h2, w2), (h2, w2, h1, w1), (h1, w1, net.height, net.width)];
    let mut pads = [0usize; 3];
    for (i, &(ih, iw, oh, ow)) in stages.iter().enumerate() {
        // oh is either 2*ih or 2*ih - 1 because ih = ceil(oh / 2).
        let op_h = oh + 1 - 2 * ih;
        let op_w = ow + 1 - 2 * iw;
        if op_h != op_w {
            return Err(Error::InvalidParameter(format!(
                "decoder cannot mirror {}x{}: height and width parities diverge at stage {}",
                net.height,
                net.width,
                i + 1
            )));
        }
        pads[i] = op_h;
    }
    Ok(pads)
}

/// Reconstruction graph: encoder, latent (sampled only when variational),
/// mirrored deconv decoder with a sigmoid output, squared pixel error, and
/// the divergence term.  The loss includes the divergence only when
/// variational, so a plain autoencoder never trains its log-variance head.
pub struct AeGraph {
    graph: Graph,
    batch: usize,
    net: NetConfig,
    variational: bool,
    obs: NodeId,
    eps: NodeId,
    weight_ids: Vec<NodeId>,
    a_maps: NodeId,
    sq_err: NodeId,
    kl_half: NodeId,
    loss: NodeId,
}

impl AeGraph {
    pub fn build(w: &AeWeights, batch: usize, beta: f64) -> Result<AeGraph> {
        if batch == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        let net = w.net.clone();
        let out_pads = mirror_out_pads(&net)?;
        let mut g = Graph::new();
        let enc = build_encoder(&mut g, &net, batch, &w.enc)?;
        let mut weight_ids = enc.weight_ids;

        let eps = g.leaf(Tensor::zeros(&[batch, net.latent]));
        let z = if w.variational {
            let half_lv = g.mul_scalar(enc.logvar, 0.5);
            let sigma = g.exp(half_lv);
            let noise = g.mul(sigma, eps)?;
            g.add(enc.mu, noise)?
        } else {
            enc.mu
        };

        let w_lin = g.leaf(w.dec_lin.w.clone());
        let b_lin = g.leaf(w.dec_lin.b.clone());
        weight_ids.extend([w_lin, b_lin]);
        let lin_pre = g.linear(z, w_lin, b_lin)?;
        let lin = g.relu(lin_pre);
        let (fh, fw) = net.feat_hw();
        let mut cur = g.reshape(lin, vec![batch, net.conv[2], fh, fw])?;
        for (i, lp) in w.dec_deconv.iter().enumerate() {
            let wid = g.leaf(lp.w.clone());
            let bid = g.leaf(lp.b.clone());
            weight_ids.extend([wid, bid]);
            let pre = g.deconv2d(cur, wid, bid, 2, 1, out_pads[i])?;
            cur = if i < 2 { g.relu(pre) } else { g.sigmoid(pre) };
        }

        let neg = g.mul_scalar(cur, -1.0);
        let diff = g.add(enc.obs, neg)?;
        let sq_err = g.mul(diff, diff)?;
        let sq_sum = g.reduce_sum(sq_err);

        let kl_elems = build_kl_elems(&mut g, enc.mu, enc.logvar)?;
        let kl_sum = g.reduce_sum(kl_elems);
        let kl_half = g.mul_scalar(kl_sum, 0.5);

        let inv_b = 1.0 / batch as f64;
        let mse_mean = g.mul_scalar(sq_sum, inv_b);
        let loss = if w.variational {
            let kl_term = g.mul_scalar(kl_half, beta * inv_b);
            g.add(mse_mean, kl_term)?
        } else {
            mse_mean
        };

        Ok(AeGraph {
            graph: g,
            batch,
            net,
            variational: w.variational,
            obs: enc.obs,
            eps,
            weight_ids,
            a_maps: enc.a_maps,
            sq_err,
            kl_half,
            loss,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn variational(&self) -> bool {
        self.variational
    }

    pub fn set_obs(&mut self, frames: &[f32]) -> Result<()> {
        let want = self.batch * self.net.obs_len();
        if frames.len() != want {
            return Err(Error::InvalidParameter(format!(
                "observation batch has {} values, graph expects {want}",
                frames.len()
            )));
        }
        let t = Tensor::new(
            vec![self.batch, self.net.channels, self.net.height, self.net.width],
            frames.iter().map(|&v| v as f64).collect(),
        )?;
        self.graph.set_leaf(self.obs, &t)
    }

    pub fn set_eps(&mut self, eps: &[f64]) -> Result<()> {
        let t = Tensor::new(vec![self.batch, self.net.latent], eps.to_vec())?;
        self.graph.set_leaf(self.eps, &t)
    }

    pub fn zero_eps(&mut self) -> Result<()> {
        let t = Tensor::zeros(&[self.batch, self.net.latent]);
        self.graph.set_leaf(self.eps, &t)
    }

    /// Forward pass over the whole graph; returns the loss value.
    pub fn forward(&mut self) -> Result<f64> {
        Ok(self.graph.forward(self.loss)?.item())
    }

    pub fn backward_loss(&mut self) -> Result<()> {
        self.graph.backward(self.loss)
    }

    pub fn loss_value(&self) -> f64 {
        self.graph.output(self.loss).item()
    }

    /// Summed squared pixel error over the batch.
    pub fn sq_err_sum(&self) -> f64 {
        self.graph.output(self.sq_err).data().iter().sum()
    }

    /// Summed posterior divergence over the batch, halved.
    pub fn kl_value(&self) -> f64 {
        self.graph.output(self.kl_half).item()
    }

    /// Per-pixel squared error of the most recent forward pass, channels
    /// summed, shape [H,W].  Batch must be 1.
    pub fn pixel_error_map(&self) -> Result<Tensor> {
        if self.batch != 1 {
            return Err(Error::InvalidParameter(
                "pixel error map requires a batch-1 graph".into(),
            ));
        }
        let (c, h, w) = (self.net.channels, self.net.height, self.net.width);
        let sq = self.graph.output(self.sq_err).data();
        let mut out = vec![0.0; h * w];
        for ci in 0..c {
            for (o, &e) in out.iter_mut().zip(&sq[ci * h * w..][..h * w]) {
                *o += e;
            }
        }
        Tensor::new(vec![h, w], out)
    }

    /// Attribution of the divergence score at the last encoder maps, exactly
    /// as the policy computes it.  Batch must be 1; callers gate on
    /// `variational` since the score is untrained otherwise.
    pub fn grad_cam_current(&mut self) -> Result<Heatmap> {
        if self.batch != 1 {
            return Err(Error::InvalidParameter(
                "attribution requires a batch-1 graph".into(),
            ));
        }
        self.graph.backward(self.kl_half)?;
        cam_from_maps(
            self.graph.output(self.a_maps),
            self.graph.grad(self.a_maps),
            self.net.height,
            self.net.width,
        )
    }

    pub fn weight_grad(&self, i: usize) -> &Tensor {
        self.graph.grad(self.weight_ids[i])
    }

    pub fn weight_mut(&mut self, i: usize) -> &mut [f64] {
        let id = self.weight_ids[i];
        self.graph.leaf_mut(id).expect("weight ids are leaves")
    }

    pub fn store_weights(&self, w: &mut AeWeights) {
        for (id, (_, dst)) in self.weight_ids.iter().zip(w.layers_mut()) {
            dst.data_mut()
                .copy_from_slice(self.graph.output(*id).data());
        }
    }
}

/// Trains an autoencoder on the same frames as the policy.  `variational`
/// switches on latent sampling and the `beta`-weighted divergence penalty;
/// `cfg.beta` is ignored in favor of the explicit argument.  One variational
/// run serves both the reconstruction-scored and divergence-scored
/// detectors.
pub fn train_ae(
    data: &Dataset,
    net: &NetConfig,
    variational: bool,
    beta: f64,
    cfg: &TrainConfig,
) -> Result<(AeWeights, TrainLog)> {
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
    let mut weights = AeWeights::init(net.clone(), variational, beta, cfg.seed);
    let batch = cfg.batch.max(1).min(n);
    let mut ag = AeGraph::build(&weights, batch, beta)?;
    let sizes: Vec<usize> = weights.layers().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = AdamState::new(&sizes);
    let hyper = AdamHyper {
        lr: cfg.lr,
        ..AdamHyper::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);

    let obs_len = data.obs_len();
    let latent = net.latent;
    let mut obs_buf = vec![0.0f32; batch * obs_len];
    let mut eps_buf = vec![0.0f64; batch * latent];
    let mut grad_scratch: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();

    let log = run_epochs(data, cfg.epochs, batch, &mut rng, |chunk, rng| {
        fill_obs(data, chunk, obs_len, &mut obs_buf);
        if variational {
            for e in eps_buf.iter_mut() {
                *e = rng.sample::<f64, _>(StandardNormal);
            }
        }
        ag.set_obs(&obs_buf)?;
        ag.set_eps(&eps_buf)?;
        let loss = ag.forward()?;
        ag.backward_loss()?;
        adam.begin_step();
        for i in 0..sizes.len() {
            grad_scratch[i].copy_from_slice(ag.weight_grad(i).data());
            adam.update_one(i, ag.weight_mut(i), &grad_scratch[i], &hyper)?;
        }
        Ok(loss)
    })?;
    ag.store_weights(&mut weights);
    Ok((weights, log))
}

/// Reusable single-frame scorer over a batch-1 graph with the latent held at
/// the posterior mean, so every score is deterministic.
pub struct AeEvaluator {
    ag: AeGraph,
}

impl AeEvaluator {
    pub fn new(w: &AeWeights) -> Result<AeEvaluator> {
        let mut ag = AeGraph::build(w, 1, w.beta)?;
        ag.zero_eps()?;
        Ok(AeEvaluator { ag })
    }

    pub fn variational(&self) -> bool {
        self.ag.variational
    }

    pub fn net(&self) -> &NetConfig {
        &self.ag.net
    }

    /// Runs one frame forward and returns `(mean squared pixel error,
    /// divergence from the prior)` without any attribution work.  The
    /// divergence half is only meaningful for variational weights.
    pub fn eval(&mut self, obs: &[f32]) -> Result<(f64, f64)> {
        self.ag.set_obs(obs)?;
        self.ag.forward()?;
        let mse = self.ag.sq_err_sum() / self.ag.net.obs_len() as f64;
        Ok((mse, self.ag.kl_value()))
    }

    /// Per-pixel squared-error map for the most recent `eval` frame; raw
    /// and full views coincide at image resolution.
    pub fn pixel_map(&self) -> Result<Heatmap> {
        let map = self.ag.pixel_error_map()?;
        Ok(Heatmap {
            raw: map.clone(),
            full: map,
        })
    }

    /// Divergence attribution for the most recent `eval` frame, matching
    /// the policy's detector.  Requires variational weights; a plain
    /// autoencoder never trained its log-variance head.
    pub fn grad_cam(&mut self) -> Result<Heatmap> {
        if !self.ag.variational {
            return Err(Error::NotVariational);
        }
        self.ag.grad_cam_current()
    }

    /// Reconstruction scores: mean squared pixel error plus the error map.
    /// Valid for plain and variational weights alike.
    pub fn recon(&mut self, obs: &[f32]) -> Result<(f64, Heatmap)> {
        let (mse, _) = self.eval(obs)?;
        Ok((mse, self.pixel_map()?))
    }

    /// Divergence scores: the posterior's divergence from the prior plus
    /// its attribution map.  Errors unless the weights are variational.
    pub fn kl(&mut self, obs: &[f32]) -> Result<(f64, Heatmap)> {
        if !self.ag.variational {
            return Err(Error::NotVariational);
        }
        let (_, kl) = self.eval(obs)?;
        Ok((kl, self.ag.grad_cam_current()?))
    }
}

/// One-shot reconstruction scores; loops should hold an `AeEvaluator`.
pub fn ae_scores(obs: &[f32], w: &AeWeights) -> Result<(f64, Heatmap)> {
    AeEvaluator::new(w)?.recon(obs)
}

/// One-shot divergence scores; errors unless the weights are variational.
pub fn vae_kl_scores(obs: &[f32], w: &AeWeights) -> Result<(f64, Heatmap)> {
    AeEvaluator::new(w)?.kl(obs)
}
