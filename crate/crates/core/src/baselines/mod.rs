//! Comparison detectors trained on the same frames as the policy: plain and
//! variational autoencoders scored by reconstruction error or posterior
//! divergence, and random-network distillation scored by prediction error.
//! Each exposes the same (score, heatmap) or score surface as the policy's
//! detector so the evaluation harness can swap methods freely.

mod recon;
mod rnd;

pub use recon::{ae_scores, train_ae, vae_kl_scores, AeEvaluator, AeGraph, AeWeights};
pub use rnd::{rnd_score, train_rnd, RndConfig, RndEvaluator, RndGraph, RndWeights};
