//! Detection methods and the scoring driver that runs them over a test set.
//!
//! Every method maps a frame to one anomaly score.  Methods that carry a
//! spatial attribution also produce per-bin heatmap masses wherever their
//! recognition gate holds: the detector flag for the policy's divergence
//! score, the ground-truth label for baselines (which have no calibrated
//! band of their own, so recognition is read out at the labeled frames).

use rayon::prelude::*;

use crate::baselines::{AeEvaluator, AeWeights, RndEvaluator, RndWeights};
use crate::conformal::PredictionBand;
use crate::error::{Error, Result};
use crate::eval::roc::bin_sums;
use crate::eval::testset::{LabeledTraj, TestSet};
use crate::policy::{Evaluator, PolicyWeights};
use crate::simworld::FailureKind;
use crate::tensor::Tensor;

/// Frame-scoring methods the harness can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Policy posterior divergence with conformal flagging.
    Fare,
    /// Plain autoencoder reconstruction error.
    Ae,
    /// Variational autoencoder reconstruction error.
    VaeR,
    /// Variational autoencoder posterior divergence.
    VaeKl,
    /// Random-network-distillation prediction error.
    Rnd,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Fare,
        Method::Ae,
        Method::VaeR,
        Method::VaeKl,
        Method::Rnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fare => "fare",
            Method::Ae => "ae",
            Method::VaeR => "vae-r",
            Method::VaeKl => "vae-kl",
            Method::Rnd => "rnd",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method: {s}")))
    }

    /// Whether the method produces a spatial attribution map.
    pub fn has_heatmap(self) -> bool {
        !matches!(self, Method::Rnd)
    }
}

/// A method bundled with the weights it scores with.
pub enum MethodModel {
    Fare(PolicyWeights),
    Ae(AeWeights),
    VaeR(AeWeights),
    VaeKl(AeWeights),
    Rnd(RndWeights),
}

impl MethodModel {
    pub fn method(&self) -> Method {
        match self {
            MethodModel::Fare(_) => Method::Fare,
            MethodModel::Ae(_) => Method::Ae,
            MethodModel::VaeR(_) => Method::VaeR,
            MethodModel::VaeKl(_) => Method::VaeKl,
            MethodModel::Rnd(_) => Method::Rnd,
        }
    }

    fn frame_dims(&self) -> (usize, usize, usize) {
        match self {
            MethodModel::Fare(w) => (w.net.channels, w.net.height, w.net.width),
            MethodModel::Ae(w) | MethodModel::VaeR(w) | MethodModel::VaeKl(w) => {
                (w.net.channels, w.net.height, w.net.width)
            }
            MethodModel::Rnd(w) => (w.cfg.channels, w.cfg.height, w.cfg.width),
        }
    }

    /// Rejects weight/test-set mismatches before any scoring starts.
    pub fn validate(&self, ts: &TestSet) -> Result<()> {
        let (c, h, w) = self.frame_dims();
        if c != 1 || h != ts.height || w != ts.width {
            return Err(Error::InvalidParameter(format!(
                "{} weights expect {c}x{h}x{w} frames but the test set is 1x{}x{}",
                self.method().name(),
                ts.height,
                ts.width
            )));
        }
        match self {
            MethodModel::Ae(w) if w.variational => Err(Error::InvalidParameter(
                "reconstruction baseline needs plain autoencoder weights".into(),
            )),
            MethodModel::VaeR(w) | MethodModel::VaeKl(w) if !w.variational => {
                Err(Error::NotVariational)
            }
            _ => Ok(()),
        }
    }
}

/// Per-frame outputs of one method on one trajectory.
#[derive(Debug, Clone)]
pub struct ScoredTraj {
    pub traj: usize,
    pub scores: Vec<f64>,
    /// Conformal flag per frame; present only when a band was supplied.
    pub flagged: Option<Vec<bool>>,
    /// Heatmap mass per bin for frames where the recognition gate held.
    pub bin_sums: Vec<Option<[f64; 3]>>,
    /// Full heatmap of the first gated frame, kept for image export.
    pub snapshot: Option<(usize, Tensor)>,
}

fn score_fare(
    w: &PolicyWeights,
    traj: &LabeledTraj,
    band: Option<&PredictionBand>,
) -> Result<ScoredTraj> {
    let mut ev = Evaluator::new(w)?;
    let n = traj.frames.len();
    let mut scores = Vec::with_capacity(n);
    let mut flagged = Vec::with_capacity(n);
    let mut bins = Vec::with_capacity(n);
    let mut snapshot = None;
    for (t, frame) in traj.frames.iter().enumerate() {
        let step = ev.step(frame, band, t)?;
        scores.push(step.score);
        flagged.push(step.flagged == Some(true));
        match step.heatmap {
            Some(hm) => {
                bins.push(Some(bin_sums(&hm.full)));
                if snapshot.is_none() {
                    snapshot = Some((t, hm.full));
                }
            }
            None => bins.push(None),
        }
    }
    Ok(ScoredTraj {
        traj: traj.id,
        scores,
        flagged: band.map(|_| flagged),
        bin_sums: bins,
        snapshot,
    })
}

fn score_recon(w: &AeWeights, traj: &LabeledTraj, use_kl: bool) -> Result<ScoredTraj> {
    let mut ev = AeEvaluator::new(w)?;
    let n = traj.frames.len();
    let mut scores = Vec::with_capacity(n);
    let mut bins = Vec::with_capacity(n);
    let mut snapshot = None;
    for (t, frame) in traj.frames.iter().enumerate() {
        let (mse, kl) = ev.eval(frame)?;
        scores.push(if use_kl { kl } else { mse });
        if traj.ood[t] {
            let hm = if use_kl { ev.grad_cam()? } else { ev.pixel_map()? };
            bins.push(Some(bin_sums(&hm.full)));
            if snapshot.is_none() {
                snapshot = Some((t, hm.full));
            }
        } else {
            bins.push(None);
        }
    }
    Ok(ScoredTraj {
        traj: traj.id,
        scores,
        flagged: None,
        bin_sums: bins,
        snapshot,
    })
}

fn score_rnd(w: &RndWeights, traj: &LabeledTraj) -> Result<ScoredTraj> {
    let mut ev = RndEvaluator::new(w)?;
    let mut scores = Vec::with_capacity(traj.frames.len());
    for (frame, act) in traj.frames.iter().zip(&traj.actions) {
        scores.push(ev.score(frame, *act)?);
    }
    Ok(ScoredTraj {
        traj: traj.id,
        scores,
        flagged: None,
        bin_sums: vec![None; traj.frames.len()],
        snapshot: None,
    })
}

/// Scores every trajectory of `ts` with `model`, in parallel.
///
/// `band` applies to the policy method only; other methods score raw.  The
/// result vector is ordered by trajectory id regardless of scheduling.
pub fn score_test_set(
    ts: &TestSet,
    model: &MethodModel,
    band: Option<&PredictionBand>,
) -> Result<Vec<ScoredTraj>> {
    model.validate(ts)?;
    ts.trajs
        .par_iter()
        .map(|traj| match model {
            MethodModel::Fare(w) => score_fare(w, traj, band),
            MethodModel::Ae(w) | MethodModel::VaeR(w) => score_recon(w, traj, false),
            MethodModel::VaeKl(w) => score_recon(w, traj, true),
            MethodModel::Rnd(w) => score_rnd(w, traj),
        })
        .collect()
}

/// Flattens scores in trajectory order to pair with `TestSet::frame_labels`.
pub fn flat_scores(scored: &[ScoredTraj]) -> Vec<f64> {
    scored.iter().flat_map(|s| s.scores.iter().copied()).collect()
}

/// Trajectory-level detection: any flagged frame at or after `trigger`.
pub fn traj_detected(st: &ScoredTraj, trigger: usize) -> bool {
    st.flagged
        .as_ref()
        .map(|f| f.iter().skip(trigger).any(|&b| b))
        .unwrap_or(false)
}

/// Fraction of flagged frames across clean trajectories.
pub fn clean_fp_rate(ts: &TestSet, scored: &[ScoredTraj]) -> f64 {
    let mut flagged = 0usize;
    let mut total = 0usize;
    for st in scored {
        if ts.trajs[st.traj].failure.is_some() {
            continue;
        }
        if let Some(f) = &st.flagged {
            flagged += f.iter().filter(|&&b| b).count();
            total += f.len();
        }
    }
    if total == 0 {
        0.0
    } else {
        flagged as f64 / total as f64
    }
}

/// Per-kind trajectory detection rates `(kind, rate, n)` over failure
/// trajectories, counting a detection from `trigger` onward.
pub fn detection_by_kind(
    ts: &TestSet,
    scored: &[ScoredTraj],
    trigger: usize,
) -> Vec<(FailureKind, f64, usize)> {
    FailureKind::ALL
        .iter()
        .map(|&kind| {
            let mut hits = 0usize;
            let mut n = 0usize;
            for st in scored {
                match ts.trajs[st.traj].failure {
                    Some((k, _)) if k == kind => {
                        n += 1;
                        if traj_detected(st, trigger) {
                            hits += 1;
                        }
                    }
                    _ => continue,
                }
            }
            let rate = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
            (kind, rate, n)
        })
        .collect()
}
