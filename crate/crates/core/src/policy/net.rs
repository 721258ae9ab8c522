//! Compute-graph assembly for the policy, single-frame evaluation, and the
//! attribution heatmap.
//!
//! One graph serves training and inference: the noise leaf is zero at
//! inference so the latent collapses to the posterior mean exactly, and the
//! loss subgraph is simply ignored when only scores/actions are read.

use super::weights::{EncoderWeights, NetConfig, PolicyWeights};
use super::{ActionCmd, Heatmap, LatentGaussian, PolicyStep};
use crate::conformal::PredictionBand;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Padding, Tensor};

pub(crate) const LOGVAR_CLAMP: f64 = 10.0;

/// Node handles for the shared encoder subgraph.
pub(crate) struct EncoderNodes {
    pub obs: NodeId,
    pub weight_ids: Vec<NodeId>,
    pub a_maps: NodeId,
    pub mu: NodeId,
    pub logvar: NodeId,
}

/// Conv stack, flatten, and clamped latent heads; weight leaves are created
/// here in the same order as `EncoderWeights::layers`.
pub(crate) fn build_encoder(
    g: &mut Graph,
    net: &NetConfig,
    batch: usize,
    w: &EncoderWeights,
) -> Result<EncoderNodes> {
    let obs = g.leaf(Tensor::zeros(&[batch, net.channels, net.height, net.width]));
    let mut weight_ids = Vec::with_capacity(10);
    let mut cur = obs;
    for lp in &w.conv {
        let wid = g.leaf(lp.w.clone());
        let bid = g.leaf(lp.b.clone());
        weight_ids.push(wid);
        weight_ids.push(bid);
        let pre = g.conv2d(cur, wid, bid, 2, Padding::Same)?;
        cur = g.relu(pre);
    }
    let a_maps = cur;
    let flat = g.reshape(a_maps, vec![batch, net.flat_dim()])?;
    let w_mu = g.leaf(w.mu.w.clone());
    let b_mu = g.leaf(w.mu.b.clone());
    let mu = g.linear(flat, w_mu, b_mu)?;
    let w_lv = g.leaf(w.logvar.w.clone());
    let b_lv = g.leaf(w.logvar.b.clone());
    let lv_raw = g.linear(flat, w_lv, b_lv)?;
    let logvar = g.clamp(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
    weight_ids.extend([w_mu, b_mu, w_lv, b_lv]);
    Ok(EncoderNodes {
        obs,
        weight_ids,
        a_maps,
        mu,
        logvar,
    })
}

/// Per-element KL(N(mu, e^lv) || N(0, 1)) terms: mu^2 + e^lv - lv - 1, each
/// still to be halved.  Summed and scaled by callers.
pub(crate) fn build_kl_elems(g: &mut Graph, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
    let mu2 = g.mul(mu, mu)?;
    let elv = g.exp(logvar);
    let a = g.add(mu2, elv)?;
    let neg_lv = g.mul_scalar(logvar, -1.0);
    let b = g.add(a, neg_lv)?;
    Ok(g.add_scalar(b, -1.0))
}

/// The full policy graph with its training loss.  Weights live in the graph's
/// leaves; `store_weights` copies them back out after optimization.
pub struct PolicyGraph {
    pub(crate) graph: Graph,
    batch: usize,
    net: NetConfig,
    obs: NodeId,
    eps: NodeId,
    target: NodeId,
    weight_ids: Vec<NodeId>,
    a_maps: NodeId,
    mu: NodeId,
    logvar: NodeId,
    action: NodeId,
    kl_half: NodeId,
    loss: NodeId,
}

impl PolicyGraph {
    /// Builds the graph for a fixed batch size with `beta` baked into the
    /// loss.  Leaf values start from `w`.
    pub fn build(w: &PolicyWeights, batch: usize, beta: f64) -> Result<PolicyGraph> {
        if batch == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        let net = w.net.clone();
        let mut g = Graph::new();
        let enc = build_encoder(&mut g, &net, batch, &w.enc)?;
        let mut weight_ids = enc.weight_ids;

        // Reparameterized latent: z = mu + exp(lv/2) * eps.
        let eps = g.leaf(Tensor::zeros(&[batch, net.latent]));
        let half_lv = g.mul_scalar(enc.logvar, 0.5);
        let sigma = g.exp(half_lv);
        let noise = g.mul(sigma, eps)?;
        let z = g.add(enc.mu, noise)?;

        let w_d1 = g.leaf(w.dec_hidden.w.clone());
        let b_d1 = g.leaf(w.dec_hidden.b.clone());
        let h_pre = g.linear(z, w_d1, b_d1)?;
        let h = g.relu(h_pre);
        let w_d2 = g.leaf(w.dec_out.w.clone());
        let b_d2 = g.leaf(w.dec_out.b.clone());
        let raw = g.linear(h, w_d2, b_d2)?;
        weight_ids.extend([w_d1, b_d1, w_d2, b_d2]);

        // Column 0 squashes to [0,1] (v), column 1 to [-1,1] (omega); the
        // masks route each column through its own squashing branch.
        let mask_v = g.leaf(Tensor::new(
            vec![batch, 2],
            (0..batch).flat_map(|_| [1.0, 0.0]).collect(),
        )?);
        let mask_o = g.leaf(Tensor::new(
            vec![batch, 2],
            (0..batch).flat_map(|_| [0.0, 1.0]).collect(),
        )?);
        let sig = g.sigmoid(raw);
        let th = g.tanh(raw);
        let v_part = g.mul(sig, mask_v)?;
        let o_part = g.mul(th, mask_o)?;
        let action = g.add(v_part, o_part)?;

        let target = g.leaf(Tensor::zeros(&[batch, 2]));
        let neg_a = g.mul_scalar(action, -1.0);
        let diff = g.add(target, neg_a)?;
        let sq = g.mul(diff, diff)?;
        let mse_sum = g.reduce_sum(sq);

        let kl_elems = build_kl_elems(&mut g, enc.mu, enc.logvar)?;
        let kl_sum = g.reduce_sum(kl_elems);
        let kl_half = g.mul_scalar(kl_sum, 0.5);

        let inv_b = 1.0 / batch as f64;
        let mse_mean = g.mul_scalar(mse_sum, inv_b);
        let kl_term = g.mul_scalar(kl_half, beta * inv_b);
        let loss = g.add(mse_mean, kl_term)?;

        Ok(PolicyGraph {
            graph: g,
            batch,
            net,
            obs: enc.obs,
            eps,
            target,
            weight_ids,
            a_maps: enc.a_maps,
            mu: enc.mu,
            logvar: enc.logvar,
            action,
            kl_half,
            loss,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
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

    pub fn set_target(&mut self, actions: &[f32]) -> Result<()> {
        let t = Tensor::new(
            vec![self.batch, 2],
            actions.iter().map(|&v| v as f64).collect(),
        )?;
        self.graph.set_leaf(self.target, &t)
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

    /// Summed KL over the batch, halved.  For batch 1 this is the OOD score.
    pub fn kl_value(&self) -> f64 {
        self.graph.output(self.kl_half).item()
    }

    pub fn weight_grad(&self, i: usize) -> &Tensor {
        self.graph.grad(self.weight_ids[i])
    }

    pub fn weight_mut(&mut self, i: usize) -> &mut [f64] {
        let id = self.weight_ids[i];
        self.graph.leaf_mut(id).expect("weight ids are leaves")
    }

    /// Copies current leaf values back into a weights struct.
    pub fn store_weights(&self, w: &mut PolicyWeights) {
        for (id, (_, dst)) in self.weight_ids.iter().zip(w.layers_mut()) {
            dst.data_mut()
                .copy_from_slice(self.graph.output(*id).data());
        }
    }

    pub fn latent(&self, row: usize) -> LatentGaussian {
        let d = self.net.latent;
        let mu = &self.graph.output(self.mu).data()[row * d..][..d];
        let lv = &self.graph.output(self.logvar).data()[row * d..][..d];
        LatentGaussian {
            mean: mu.to_vec(),
            log_var: lv.to_vec(),
        }
    }

    pub fn action_row(&self, row: usize) -> ActionCmd {
        let a = &self.graph.output(self.action).data()[row * 2..][..2];
        ActionCmd {
            v: a[0],
            omega: a[1],
        }
    }

    /// Post-ReLU feature maps of the last conv layer, shape [B,K,fh,fw].
    pub fn feature_maps(&self) -> &Tensor {
        self.graph.output(self.a_maps)
    }

    /// Attribution map for the current forward pass (batch must be 1):
    /// gradients of the KL score at the last conv maps are pooled per map
    /// into weights alpha_k, combined, rectified, and upsampled.
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
}

/// Attribution pooling shared by every KL-scored encoder: each map's
/// gradient is averaged into a weight alpha_k, the weighted map sum is
/// rectified, and the result is upsampled to the observation size.  `maps`
/// and `grads` are batch-1 [1,K,fh,fw] tensors from the same backward pass.
pub(crate) fn cam_from_maps(maps: &Tensor, grads: &Tensor, out_h: usize, out_w: usize) -> Result<Heatmap> {
    let s = maps.shape();
    let (k, fh, fw) = (s[1], s[2], s[3]);
    let plane = fh * fw;
    let m = maps.data();
    let g = grads.data();
    let mut raw = vec![0.0; plane];
    for ki in 0..k {
        let g_plane = &g[ki * plane..][..plane];
        let alpha = g_plane.iter().sum::<f64>() / plane as f64;
        for (r, &a) in raw.iter_mut().zip(&m[ki * plane..][..plane]) {
            *r += alpha * a;
        }
    }
    for r in &mut raw {
        *r = r.max(0.0);
    }
    let raw = Tensor::new(vec![fh, fw], raw)?;
    let full = bilinear_upsample(&raw, out_h, out_w);
    Ok(Heatmap { raw, full })
}

/// Bilinear resize with half-pixel centers; output values are convex
/// combinations of inputs, so min/max bounds are preserved.
pub fn bilinear_upsample(raw: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (h, w) = (raw.shape()[0], raw.shape()[1]);
    let src = raw.data();
    let mut out = vec![0.0; out_h * out_w];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for i in 0..out_h {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for j in 0..out_w {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out[i * out_w + j] = top * (1.0 - ty) + bot * ty;
        }
    }
    Tensor::new(vec![out_h, out_w], out).expect("shape matches buffer")
}

/// Reusable single-frame runner: one batch-1 graph, forward per frame,
/// backward only when attribution is requested.
pub struct Evaluator {
    pg: PolicyGraph,
}

impl Evaluator {
    pub fn new(w: &PolicyWeights) -> Result<Evaluator> {
        let mut pg = PolicyGraph::build(w, 1, w.beta)?;
        pg.zero_eps()?;
        Ok(Evaluator { pg })
    }

    pub fn net(&self) -> &NetConfig {
        &self.pg.net
    }

    /// Forward one frame; returns (KL score, action).  Deterministic: the
    /// latent is the posterior mean.
    pub fn eval(&mut self, obs: &[f32]) -> Result<(f64, ActionCmd)> {
        self.pg.set_obs(obs)?;
        self.pg.forward()?;
        Ok((self.pg.kl_value(), self.pg.action_row(0)))
    }

    /// Attribution for the most recent `eval` frame.
    pub fn grad_cam(&mut self) -> Result<Heatmap> {
        self.pg.grad_cam_current()
    }

    pub fn latent(&self) -> LatentGaussian {
        self.pg.latent(0)
    }

    /// Feature maps of the most recent frame, reshaped to [K, fh, fw].
    pub fn feature_maps(&self) -> Tensor {
        let t = self.pg.feature_maps();
        let s = t.shape().to_vec();
        t.reshaped(vec![s[1], s[2], s[3]]).expect("drop batch dim")
    }

    /// Full per-frame decision: action, score, band test, lazy heatmap.
    /// Without a band the score is still produced but no flag is available.
    pub fn step(&mut self, obs: &[f32], band: Option<&PredictionBand>, t: usize) -> Result<PolicyStep> {
        let (score, action) = self.eval(obs)?;
        let flagged = band.map(|b| b.is_ood(score, t));
        let heatmap = if flagged == Some(true) {
            Some(self.grad_cam()?)
        } else {
            None
        };
        Ok(PolicyStep {
            action,
            score,
            flagged,
            heatmap,
        })
    }
}
