//! Closed-loop recovery trials.
//!
//! Each trial drops the full stack into a world, lets the policy drive
//! through the recovery controller from the first frame, injects one
//! failure at the trigger step, and then watches a fixed budget of frames
//! for detection, recovery, and progress.  Informed and blind controller
//! variants share per-trial world seeds so their comparison is paired.

use rayon::prelude::*;

use crate::conformal::PredictionBand;
use crate::error::{Error, Result};
use crate::eval::testset::{FAILURE_STEP, MOVER_SPEED, SEED_STRIDE};
use crate::policy::{Evaluator, PolicyWeights};
use crate::recovery::{bin_heatmap, BinFlags, Mode, RecoveryConfig, RecoveryController};
use crate::simworld::{
    build_world, render, spawn_for_seed, FailureKind, FailureSpec, Layout, Side, DT,
};

/// Path progress beyond the trigger point that counts as moving on, in
/// world units.
pub const PROGRESS_MARGIN: f64 = 2.0;

/// Shape of a trial sweep.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    /// Trials per failure kind.
    pub n_per_kind: usize,
    pub seed: u64,
    /// Pick corrective macros at random instead of reading the heatmap.
    pub blind: bool,
    /// Step at which the failure is injected.
    pub trigger_step: usize,
    /// Frames allowed after the trigger before the trial is cut off.
    pub budget: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for TrialConfig {
    fn default() -> TrialConfig {
        TrialConfig {
            n_per_kind: 10,
            seed: 71,
            blind: false,
            trigger_step: FAILURE_STEP,
            budget: 300,
            height: 48,
            width: 64,
        }
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub kind: FailureKind,
    pub side: Side,
    pub layout: Layout,
    /// Index within the kind's sweep.
    pub trial: usize,
    /// World seed, shared between informed and blind runs.
    pub seed: u64,
    /// Whether any frame from the trigger onward was flagged.
    pub detected: bool,
    /// Whether the trial ended the way its kind demands: recovery plus
    /// renewed progress for recoverable kinds, a help request otherwise.
    pub handled: bool,
    pub detect_frame: Option<usize>,
    /// First frame after detection where the controller handed control
    /// back to the policy.
    pub recover_frame: Option<usize>,
    /// Detection-to-recovery wall time in seconds, for handled
    /// recoverable trials.
    pub recovery_time_s: Option<f64>,
}

const TRIAL_LAYOUTS: [Layout; 3] = [Layout::Corridor, Layout::Plaza, Layout::Park];

/// Side sweep per kind; dynamic and steerable-barrier trials rotate sides,
/// the rest are frontal.
fn trial_side(kind: FailureKind, j: usize) -> Side {
    match kind {
        FailureKind::Dynamic => match j % 3 {
            0 => Side::Left,
            1 => Side::Right,
            _ => Side::Front,
        },
        FailureKind::LocalMinima => {
            if j % 2 == 0 {
                Side::Left
            } else {
                Side::Right
            }
        }
        _ => Side::Front,
    }
}

fn run_one(
    w: &PolicyWeights,
    band: &PredictionBand,
    kind: FailureKind,
    j: usize,
    seed: u64,
    cfg: &TrialConfig,
) -> Result<TrialResult> {
    let side = trial_side(kind, j);
    let layout = TRIAL_LAYOUTS[j % 3];
    let mut world = build_world(layout, seed);
    spawn_for_seed(&mut world, seed);

    let mut ev = Evaluator::new(w)?;
    let mut ctl = RecoveryController::new(RecoveryConfig {
        blind: cfg.blind,
        seed,
        ..RecoveryConfig::default()
    });
    let spec = FailureSpec::new(kind, cfg.trigger_step, side, MOVER_SPEED);

    let mut detect_frame = None;
    let mut recover_frame = None;
    let mut helped = false;
    let mut s_trigger = 0.0;
    let mut max_s = f64::NEG_INFINITY;

    for t in 0..cfg.trigger_step + cfg.budget {
        if t == cfg.trigger_step {
            spec.apply(&mut world)?;
            s_trigger = world.nearest_path_s(world.x, world.y);
        }
        let frame = render(&world, cfg.height, cfg.width);
        let step = ev.step(&frame, Some(band), t)?;
        let b_t = step.flagged == Some(true);
        if b_t && t >= cfg.trigger_step && detect_frame.is_none() {
            detect_frame = Some(t);
        }
        let flags = step
            .heatmap
            .as_ref()
            .map(|hm| bin_heatmap(&hm.full))
            .unwrap_or(BinFlags::NONE);
        let was_recovering = ctl.mode() == Mode::Recovering;
        let decision = ctl.step(t, b_t, flags, step.action)?;
        if decision.help {
            helped = true;
            break;
        }
        if was_recovering
            && decision.mode == Mode::Normal
            && detect_frame.is_some()
            && recover_frame.is_none()
        {
            recover_frame = Some(t);
        }
        world.step(decision.action, DT);
        if t >= cfg.trigger_step {
            max_s = max_s.max(world.nearest_path_s(world.x, world.y));
        }
    }

    let detected = detect_frame.is_some();
    let handled = if kind.irrecoverable() {
        detected && helped
    } else {
        detected && recover_frame.is_some() && max_s >= s_trigger + PROGRESS_MARGIN
    };
    let recovery_time_s = match (detect_frame, recover_frame) {
        (Some(d), Some(r)) if handled && !kind.irrecoverable() => Some((r - d) as f64 * DT),
        _ => None,
    };

    Ok(TrialResult {
        kind,
        side,
        layout,
        trial: j,
        seed,
        detected,
        handled,
        detect_frame,
        recover_frame,
        recovery_time_s,
    })
}

/// Runs `n_per_kind` trials for every failure kind, in parallel.
///
/// Per-trial world seeds depend only on `cfg.seed` and the trial index, so
/// an informed and a blind sweep with the same seed visit identical worlds.
pub fn run_trials(
    w: &PolicyWeights,
    band: &PredictionBand,
    cfg: &TrialConfig,
) -> Result<Vec<TrialResult>> {
    if cfg.n_per_kind == 0 {
        return Err(Error::InvalidParameter("trials need n_per_kind > 0".into()));
    }
    let jobs: Vec<(usize, FailureKind, usize)> = FailureKind::ALL
        .iter()
        .enumerate()
        .flat_map(|(ki, &kind)| (0..cfg.n_per_kind).map(move |j| (ki, kind, j)))
        .collect();
    jobs.par_iter()
        .map(|&(ki, kind, j)| {
            let idx = (ki * cfg.n_per_kind + j) as u64;
            let seed = cfg.seed.wrapping_add(idx.wrapping_mul(SEED_STRIDE));
            run_one(w, band, kind, j, seed, cfg)
        })
        .collect()
}

/// Per-kind aggregate of a trial sweep: `(kind, det_sr, han_sr,
/// mean_time_s, n)` with rates in percent.
pub fn summarize_trials(
    results: &[TrialResult],
) -> Vec<(FailureKind, f64, f64, Option<f64>, usize)> {
    FailureKind::ALL
        .iter()
        .map(|&kind| {
            let of_kind: Vec<&TrialResult> = results.iter().filter(|r| r.kind == kind).collect();
            let n = of_kind.len();
            let det = of_kind.iter().filter(|r| r.detected).count();
            let han = of_kind.iter().filter(|r| r.handled).count();
            let times: Vec<f64> = of_kind.iter().filter_map(|r| r.recovery_time_s).collect();
            let mean_time = if times.is_empty() {
                None
            } else {
                Some(times.iter().sum::<f64>() / times.len() as f64)
            };
            let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
            (kind, pct(det), pct(han), mean_time, n)
        })
        .collect()
}
