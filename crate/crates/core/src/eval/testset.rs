//! Labeled benchmark rollouts for detection and recognition scoring.
//!
//! A test set mixes failure trajectories with clean ones.  Every rollout is
//! driven by the scripted expert for a fixed number of steps so that frames
//! before the trigger stay in-distribution; the injected failure alone is
//! what makes later frames anomalous.  Each frame carries an OOD label and,
//! on failure trajectories, the ground-truth hazard bins read straight from
//! world geometry.

use crate::error::{Error, Result};
use crate::simworld::{
    build_world, expert_action, gt_bins, render, spawn_for_seed, FailureKind, FailureSpec,
    Layout, Side, DT,
};

/// Steps per benchmark trajectory (10 s at the control rate).
pub const TRIAL_STEPS: usize = 100;
/// Step at which failure trajectories inject their failure.
pub const FAILURE_STEP: usize = 80;
/// Crossing speed for injected dynamic obstacles, world units per second.
pub const MOVER_SPEED: f64 = 0.5;
/// Stride between per-trajectory seeds.
pub(crate) const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Shape of a benchmark test set.
#[derive(Debug, Clone)]
pub struct TestSetConfig {
    /// Failure trajectories, spread evenly over the failure kinds.
    pub n_fail: usize,
    /// Clean trajectories with no injection.
    pub n_normal: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl Default for TestSetConfig {
    fn default() -> TestSetConfig {
        TestSetConfig {
            n_fail: 90,
            n_normal: 90,
            seed: 99,
            height: 48,
            width: 64,
        }
    }
}

/// One benchmark rollout with per-frame ground truth.
#[derive(Debug, Clone)]
pub struct LabeledTraj {
    pub id: usize,
    pub layout: Layout,
    pub seed: u64,
    /// Injected failure, or `None` for a clean rollout.
    pub failure: Option<(FailureKind, Side)>,
    /// Rendered observations, one per step.
    pub frames: Vec<Vec<f32>>,
    /// Expert action taken after each frame, as `[v, omega]`.
    pub actions: Vec<[f32; 2]>,
    /// True from the trigger step onward on failure trajectories.
    pub ood: Vec<bool>,
    /// Hazard bins per frame; all false wherever `ood` is false.
    pub gt_bins: Vec<[bool; 3]>,
}

/// A full benchmark: failure rollouts first, then clean ones.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub height: usize,
    pub width: usize,
    pub trajs: Vec<LabeledTraj>,
}

impl TestSet {
    /// Frame-level `(score index, ood)` pairs flattened over all rollouts.
    pub fn frame_labels(&self) -> Vec<bool> {
        self.trajs.iter().flat_map(|t| t.ood.iter().copied()).collect()
    }
}

/// Failure assignment for the `i`-th failure trajectory.
///
/// Kinds cycle blackout / blocked / dynamic; the blocked slot alternates
/// between the steerable barrier and the dead end so all four kinds appear.
/// Sides rotate independently of the kind cycle.
fn failure_plan(i: usize) -> (FailureKind, Side) {
    match i % 3 {
        0 => (FailureKind::Blackout, Side::Front),
        1 => {
            if (i / 3) % 2 == 0 {
                let side = if (i / 6) % 2 == 0 { Side::Left } else { Side::Right };
                (FailureKind::LocalMinima, side)
            } else {
                (FailureKind::DeadEnd, Side::Front)
            }
        }
        _ => {
            let side = match (i / 3) % 3 {
                0 => Side::Left,
                1 => Side::Right,
                _ => Side::Front,
            };
            (FailureKind::Dynamic, side)
        }
    }
}

const LAYOUTS: [Layout; 3] = [Layout::Corridor, Layout::Plaza, Layout::Park];

fn run_traj(
    id: usize,
    layout: Layout,
    seed: u64,
    failure: Option<(FailureKind, Side)>,
    height: usize,
    width: usize,
) -> Result<LabeledTraj> {
    let mut world = build_world(layout, seed);
    spawn_for_seed(&mut world, seed);

    let mut frames = Vec::with_capacity(TRIAL_STEPS);
    let mut actions = Vec::with_capacity(TRIAL_STEPS);
    let mut ood = Vec::with_capacity(TRIAL_STEPS);
    let mut bins = Vec::with_capacity(TRIAL_STEPS);

    for t in 0..TRIAL_STEPS {
        if t == FAILURE_STEP {
            if let Some((kind, side)) = failure {
                FailureSpec::new(kind, t, side, MOVER_SPEED).apply(&mut world)?;
            }
        }
        frames.push(render(&world, height, width));
        let is_ood = failure.is_some() && t >= FAILURE_STEP;
        ood.push(is_ood);
        bins.push(if is_ood { gt_bins(&world) } else { [false; 3] });

        let act = expert_action(&world);
        actions.push([act.v as f32, act.omega as f32]);
        world.step(act, DT);
    }

    Ok(LabeledTraj {
        id,
        layout,
        seed,
        failure,
        frames,
        actions,
        ood,
        gt_bins: bins,
    })
}

/// Builds the benchmark deterministically from `cfg`.
pub fn build_test_set(cfg: &TestSetConfig) -> Result<TestSet> {
    if cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidParameter(
            "test set frames need nonzero height and width".into(),
        ));
    }
    let total = cfg.n_fail + cfg.n_normal;
    let mut trajs = Vec::with_capacity(total);
    for id in 0..total {
        let seed = cfg.seed.wrapping_add((id as u64).wrapping_mul(SEED_STRIDE));
        let (layout, failure) = if id < cfg.n_fail {
            (LAYOUTS[(id / 3) % 3], Some(failure_plan(id)))
        } else {
            (LAYOUTS[(id - cfg.n_fail) % 3], None)
        };
        trajs.push(run_traj(id, layout, seed, failure, cfg.height, cfg.width)?);
    }
    Ok(TestSet {
        height: cfg.height,
        width: cfg.width,
        trajs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TestSetConfig {
        TestSetConfig {
            n_fail: 9,
            n_normal: 3,
            seed: 5,
            height: 16,
            width: 16,
        }
    }

    #[test]
    fn kinds_are_spread_evenly() {
        let mut counts = [0usize; 4];
        for i in 0..36 {
            let (kind, _) = failure_plan(i);
            let k = FailureKind::ALL.iter().position(|&x| x == kind).unwrap();
            counts[k] += 1;
        }
        // 36 trajectories: 12 blackout, 6 + 6 blocked, 12 dynamic.
        assert_eq!(counts, [12, 6, 6, 12]);
    }

    #[test]
    fn labels_follow_the_trigger() {
        let ts = build_test_set(&tiny_cfg()).unwrap();
        assert_eq!(ts.trajs.len(), 12);
        for traj in &ts.trajs {
            assert_eq!(traj.frames.len(), TRIAL_STEPS);
            assert_eq!(traj.ood.len(), TRIAL_STEPS);
            for t in 0..TRIAL_STEPS {
                let expect = traj.failure.is_some() && t >= FAILURE_STEP;
                assert_eq!(traj.ood[t], expect, "traj {} frame {t}", traj.id);
                if !traj.ood[t] {
                    assert_eq!(traj.gt_bins[t], [false; 3]);
                }
            }
        }
    }

    #[test]
    fn clean_trajectories_have_no_failure() {
        let ts = build_test_set(&tiny_cfg()).unwrap();
        for traj in ts.trajs.iter().skip(9) {
            assert!(traj.failure.is_none());
            assert!(traj.ood.iter().all(|&o| !o));
        }
    }

    #[test]
    fn blackout_frames_go_dark_and_mark_all_bins() {
        let ts = build_test_set(&tiny_cfg()).unwrap();
        let traj = ts
            .trajs
            .iter()
            .find(|t| matches!(t.failure, Some((FailureKind::Blackout, _))))
            .unwrap();
        for t in FAILURE_STEP..TRIAL_STEPS {
            assert!(traj.frames[t].iter().all(|&p| p == 0.0));
            assert_eq!(traj.gt_bins[t], [true; 3]);
        }
        // The frame just before the trigger still shows the scene.
        assert!(traj.frames[FAILURE_STEP - 1].iter().any(|&p| p > 0.0));
    }

    #[test]
    fn rebuilds_are_identical() {
        let a = build_test_set(&tiny_cfg()).unwrap();
        let b = build_test_set(&tiny_cfg()).unwrap();
        for (x, y) in a.trajs.iter().zip(&b.trajs) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.actions, y.actions);
            assert_eq!(x.gt_bins, y.gt_bins);
        }
    }
}
