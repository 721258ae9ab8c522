//! Demonstration datasets: expert rollouts on failure-free worlds,
//! recorded as (observation, action) pairs and stored in `.ftraj` files.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::io::{expect_kind, Container};

use super::expert::expert_action;
use super::layouts::build_world;
use super::render::render;
use super::world::{Layout, WorldState, DT};

/// Salt separating the spawn-point stream from world generation.
const SPAWN_SALT: u64 = 0xA5A5_5A5A_0F0F_F0F0;
/// Minimum remaining path length at the spawn point, so a recorded window
/// never runs off the end of the route.
const MIN_REMAINING: f64 = 18.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub layout: Layout,
    pub len: usize,
    /// `len * channels * height * width` pixels, frame-major.
    pub frames: Vec<f32>,
    /// `len * 2` values: (v, omega) per step.
    pub actions: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub trajs: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(channels: usize, height: usize, width: usize) -> Dataset {
        Dataset {
            channels,
            height,
            width,
            trajs: Vec::new(),
        }
    }

    pub fn obs_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn n_frames(&self) -> usize {
        self.trajs.iter().map(|t| t.len).sum()
    }

    pub fn frame(&self, ti: usize, si: usize) -> &[f32] {
        let n = self.obs_len();
        &self.trajs[ti].frames[si * n..(si + 1) * n]
    }

    pub fn action(&self, ti: usize, si: usize) -> [f32; 2] {
        let a = &self.trajs[ti].actions[si * 2..si * 2 + 2];
        [a[0], a[1]]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        c.push("kind", "trajectories");
        c.push("channels", self.channels);
        c.push("height", self.height);
        c.push("width", self.width);
        c.push("n_traj", self.trajs.len());
        c.push("lens", join(self.trajs.iter().map(|t| t.len.to_string())));
        c.push("seeds", join(self.trajs.iter().map(|t| t.seed.to_string())));
        c.push(
            "layouts",
            join(self.trajs.iter().map(|t| t.layout.name().to_string())),
        );
        for t in &self.trajs {
            c.blob.extend_from_slice(&t.frames);
            c.blob.extend_from_slice(&t.actions);
        }
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let c = Container::read(path)?;
        expect_kind(&c, path, "trajectories")?;
        let channels: usize = c.require_parsed(path, "channels")?;
        let height: usize = c.require_parsed(path, "height")?;
        let width: usize = c.require_parsed(path, "width")?;
        let n_traj: usize = c.require_parsed(path, "n_traj")?;
        let lens = split_parsed::<usize>(path, c.require(path, "lens")?, n_traj)?;
        let seeds = split_parsed::<u64>(path, c.require(path, "seeds")?, n_traj)?;
        let layout_names = c.require(path, "layouts")?;
        let mut layouts = Vec::with_capacity(n_traj);
        for name in layout_names.split(',').filter(|s| !s.is_empty()) {
            layouts.push(Layout::parse(name).ok_or_else(|| {
                Error::format(path, format!("unknown layout `{name}`"))
            })?);
        }
        if layouts.len() != n_traj {
            return Err(Error::format(
                path,
                format!("expected {n_traj} layouts, found {}", layouts.len()),
            ));
        }
        let obs = channels * height * width;
        let expected: usize = lens.iter().map(|l| l * (obs + 2)).sum();
        if c.blob.len() != expected {
            return Err(Error::format(
                path,
                format!("blob holds {} values, expected {expected}", c.blob.len()),
            ));
        }
        let mut ds = Dataset::new(channels, height, width);
        let mut off = 0;
        for i in 0..n_traj {
            let nf = lens[i] * obs;
            let na = lens[i] * 2;
            ds.trajs.push(Trajectory {
                seed: seeds[i],
                layout: layouts[i],
                len: lens[i],
                frames: c.blob[off..off + nf].to_vec(),
                actions: c.blob[off + nf..off + nf + na].to_vec(),
            });
            off += nf + na;
        }
        Ok(ds)
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(",")
}

fn split_parsed<T: std::str::FromStr>(path: &Path, s: &str, want: usize) -> Result<Vec<T>> {
    let vals: Vec<T> = s
        .split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Error::format(path, format!("bad list entry `{p}`")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != want {
        return Err(Error::format(
            path,
            format!("expected {want} entries, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub n_traj: usize,
    /// Layout cycle assigned round-robin across trajectories.
    pub layouts: Vec<Layout>,
    pub seed: u64,
    /// Steps recorded per trajectory.
    pub max_steps: usize,
    /// Fraction of trajectories (rounded) held out for calibration.
    pub calib_frac: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for CollectConfig {
    fn default() -> CollectConfig {
        CollectConfig {
            n_traj: 200,
            layouts: vec![Layout::Corridor, Layout::Plaza, Layout::Park],
            seed: 7,
            max_steps: 120,
            calib_frac: 0.2,
            height: 48,
            width: 64,
        }
    }
}

/// Records one expert trajectory: the robot spawns part-way along the
/// route and drives for `steps` control periods.
pub fn rollout_expert(world: &mut WorldState, steps: usize, h: usize, w: usize) -> Trajectory {
    let mut frames = Vec::with_capacity(steps * h * w);
    let mut actions = Vec::with_capacity(steps * 2);
    for _ in 0..steps {
        frames.extend_from_slice(&render(world, h, w));
        let a = expert_action(world);
        actions.push(a.v as f32);
        actions.push(a.omega as f32);
        world.step(a, DT);
    }
    Trajectory {
        seed: world.seed,
        layout: world.layout,
        len: steps,
        frames,
        actions,
    }
}

/// Collects failure-free demonstrations and splits them into training and
/// calibration datasets by trajectory count (`round(n_traj * calib_frac)`
/// trajectories go to calibration, taken from the end).
/// Places the robot at a seed-determined point along the path, keeping at
/// least `MIN_REMAINING` units of route ahead so a fixed-length recording
/// never runs off the end.
pub fn spawn_for_seed(world: &mut WorldState, traj_seed: u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(traj_seed ^ SPAWN_SALT);
    let span = (world.path_len() - MIN_REMAINING).max(0.1);
    world.spawn_at(rng.random_range(0.0..span));
}

pub fn collect_dataset(cfg: &CollectConfig) -> Result<(Dataset, Dataset)> {
    if cfg.n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be positive".into()));
    }
    if cfg.layouts.is_empty() {
        return Err(Error::InvalidParameter("layout mix is empty".into()));
    }
    if !(0.0..1.0).contains(&cfg.calib_frac) {
        return Err(Error::InvalidParameter(format!(
            "calibration fraction must be in [0, 1), got {}",
            cfg.calib_frac
        )));
    }
    let n_calib = (cfg.n_traj as f64 * cfg.calib_frac).round() as usize;
    let mut train = Dataset::new(1, cfg.height, cfg.width);
    let mut calib = Dataset::new(1, cfg.height, cfg.width);
    for i in 0..cfg.n_traj {
        let layout = cfg.layouts[i % cfg.layouts.len()];
        let traj_seed = cfg
            .seed
            .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut world = build_world(layout, traj_seed);
        spawn_for_seed(&mut world, traj_seed);
        let traj = rollout_expert(&mut world, cfg.max_steps, cfg.height, cfg.width);
        if i < cfg.n_traj - n_calib {
            train.trajs.push(traj);
        } else {
            calib.trajs.push(traj);
        }
    }
    Ok((train, calib))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CollectConfig {
        CollectConfig {
            n_traj: 10,
            max_steps: 30,
            height: 12,
            width: 16,
            ..CollectConfig::default()
        }
    }

    #[test]
    fn split_counts_round_to_nearest() {
        let (train, calib) = collect_dataset(&small_cfg()).unwrap();
        assert_eq!(train.trajs.len(), 8);
        assert_eq!(calib.trajs.len(), 2);
        assert_eq!(train.n_frames(), 240);
    }

    #[test]
    fn collection_is_deterministic() {
        let a = collect_dataset(&small_cfg()).unwrap();
        let b = collect_dataset(&small_cfg()).unwrap();
        assert_eq!(a, b);
        let mut other = small_cfg();
        other.seed += 1;
        let c = collect_dataset(&other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn recorded_values_stay_in_range() {
        let (train, _) = collect_dataset(&small_cfg()).unwrap();
        for t in &train.trajs {
            assert!(t.frames.iter().all(|&p| (0.0..=1.0).contains(&p)));
            for a in t.actions.chunks(2) {
                assert!((0.0..=1.0).contains(&a[0]), "v = {}", a[0]);
                assert!((-1.0..=1.0).contains(&a[1]), "omega = {}", a[1]);
            }
        }
    }

    #[test]
    fn ftraj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ftraj");
        let (train, _) = collect_dataset(&small_cfg()).unwrap();
        train.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(train, back);
    }

    #[test]
    fn load_rejects_truncated_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ftraj");
        let (train, _) = collect_dataset(&small_cfg()).unwrap();
        let mut c = Container::new();
        c.push("kind", "trajectories");
        c.push("channels", 1);
        c.push("height", train.height);
        c.push("width", train.width);
        c.push("n_traj", train.trajs.len());
        c.push("lens", join(train.trajs.iter().map(|t| t.len.to_string())));
        c.push("seeds", join(train.trajs.iter().map(|t| t.seed.to_string())));
        c.push(
            "layouts",
            join(train.trajs.iter().map(|t| t.layout.name().to_string())),
        );
        c.blob = vec![0.0; 3];
        c.write(&path).unwrap();
        assert!(Dataset::load(&path).is_err());
    }
}
