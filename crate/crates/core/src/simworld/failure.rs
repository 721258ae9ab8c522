//! Failure injection: camera blackout, path blockages, and crossing
//! obstacles, plus ground-truth projection of the injected hazard into
//! field-of-view thirds.

use crate::error::{Error, Result};

use super::render::FOV;
use super::world::{wrap_angle, Mover, Segment, WorldState, R_ROBOT};

/// Distance beyond which injected geometry stops counting toward
/// ground-truth bins.
const GT_RANGE: f64 = 8.0;
/// Arc length ahead of the robot at which blockages are centered.
const BLOCK_AHEAD: f64 = 2.5;
/// Spawn distance for crossing obstacles, three robot radii.
const SPAWN_DIST: f64 = 3.0 * R_ROBOT - 0.02;
/// Radius of a crossing obstacle.
const MOVER_RADIUS: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureKind {
    /// Camera feed drops to all-zero frames; dynamics are unaffected.
    Blackout,
    /// A barrier blocks the path but leaves a lateral gap to steer around.
    LocalMinima,
    /// A three-sided pocket seals the path with no way forward.
    DeadEnd,
    /// A moving obstacle cuts across the robot at close range.
    Dynamic,
}

impl FailureKind {
    pub const ALL: [FailureKind; 4] = [
        FailureKind::Blackout,
        FailureKind::LocalMinima,
        FailureKind::DeadEnd,
        FailureKind::Dynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailureKind::Blackout => "blackout",
            FailureKind::LocalMinima => "local_minima",
            FailureKind::DeadEnd => "dead_end",
            FailureKind::Dynamic => "dynamic",
        }
    }

    pub fn parse(s: &str) -> Option<FailureKind> {
        match s {
            "blackout" => Some(FailureKind::Blackout),
            "local_minima" => Some(FailureKind::LocalMinima),
            "dead_end" => Some(FailureKind::DeadEnd),
            "dynamic" => Some(FailureKind::Dynamic),
            _ => None,
        }
    }

    /// True when no short reactive maneuver can restore progress and the
    /// right outcome is asking for help.
    pub fn irrecoverable(self) -> bool {
        matches!(self, FailureKind::Blackout | FailureKind::DeadEnd)
    }
}

/// Side of the field of view a failure approaches from or leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Front,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Front => "front",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "front" => Some(Side::Front),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureSpec {
    pub kind: FailureKind,
    /// Step index at which the failure materializes.
    pub trigger_step: usize,
    /// For `Dynamic`: approach side.  For `LocalMinima`: the blocked side
    /// (the gap opens opposite).  Ignored for blackout and dead ends.
    pub side: Side,
    /// Crossing speed for `Dynamic`, world units per second.
    pub speed: f64,
}

impl FailureSpec {
    pub fn new(kind: FailureKind, trigger_step: usize, side: Side, speed: f64) -> FailureSpec {
        FailureSpec {
            kind,
            trigger_step,
            side,
            speed,
        }
    }

    /// Mutates the world at the trigger step.  Callers drive the loop and
    /// invoke this exactly when `world.time == trigger_step`.
    pub fn apply(&self, world: &mut WorldState) -> Result<()> {
        if world.time != self.trigger_step {
            return Err(Error::InvalidFailureSpec(format!(
                "trigger at step {} but world is at step {}",
                self.trigger_step, world.time
            )));
        }
        if self.kind == FailureKind::Dynamic && (!(self.speed > 0.0) || !self.speed.is_finite()) {
            return Err(Error::InvalidFailureSpec(format!(
                "crossing speed must be positive and finite, got {}",
                self.speed
            )));
        }
        match self.kind {
            FailureKind::Blackout => world.blackout = true,
            FailureKind::LocalMinima => {
                let (center, normal) = block_frame(world);
                // Barrier of length 2.4 shifted toward the blocked side;
                // the far side keeps a gap wide enough for the robot.
                let shift = match self.side {
                    Side::Right => -0.8,
                    _ => 0.8,
                };
                let (cx, cy) = (center.0 + shift * normal.0, center.1 + shift * normal.1);
                world.injected.push(Segment::new(
                    (cx - 1.2 * normal.0, cy - 1.2 * normal.1),
                    (cx + 1.2 * normal.0, cy + 1.2 * normal.1),
                ));
            }
            FailureKind::DeadEnd => {
                let (center, normal) = block_frame(world);
                let tangent = (-normal.1, normal.0);
                let (lx, ly) = (center.0 + 2.0 * normal.0, center.1 + 2.0 * normal.1);
                let (rx, ry) = (center.0 - 2.0 * normal.0, center.1 - 2.0 * normal.1);
                // Front barrier plus side walls running back toward the
                // robot, sealing lateral escapes.
                world.injected.push(Segment::new((lx, ly), (rx, ry)));
                world.injected.push(Segment::new(
                    (lx, ly),
                    (lx - 3.5 * tangent.0, ly - 3.5 * tangent.1),
                ));
                world.injected.push(Segment::new(
                    (rx, ry),
                    (rx - 3.5 * tangent.0, ry - 3.5 * tangent.1),
                ));
            }
            FailureKind::Dynamic => {
                let bearing = match self.side {
                    Side::Left => 0.25 * std::f64::consts::PI,
                    Side::Right => -0.25 * std::f64::consts::PI,
                    Side::Front => 0.0,
                };
                let ang = world.theta + bearing;
                let (mx, my) = (
                    world.x + SPAWN_DIST * ang.cos(),
                    world.y + SPAWN_DIST * ang.sin(),
                );
                // Crossing velocity: perpendicular to the robot's heading,
                // moving toward and across it; a frontal spawn drives
                // straight at the robot instead.
                let vel_ang = match self.side {
                    Side::Left => world.theta - std::f64::consts::FRAC_PI_2,
                    Side::Right => world.theta + std::f64::consts::FRAC_PI_2,
                    Side::Front => world.theta + std::f64::consts::PI,
                };
                world.movers.push(Mover {
                    x: mx,
                    y: my,
                    vx: self.speed * vel_ang.cos(),
                    vy: self.speed * vel_ang.sin(),
                    radius: MOVER_RADIUS,
                });
            }
        }
        Ok(())
    }
}

/// Blockage placement frame: the path point `BLOCK_AHEAD` units past the
/// robot's nearest path point, with the path's left unit normal there.
fn block_frame(world: &WorldState) -> ((f64, f64), (f64, f64)) {
    let s = world.nearest_path_s(world.x, world.y);
    let total = world.path_len();
    let (point, tangent) = world.path_point((s + BLOCK_AHEAD).min(total));
    (point, (-tangent.1, tangent.0))
}

/// Ground-truth hazard bins: which thirds of the field of view the injected
/// hazard currently occupies.  Blackouts occupy all three; geometry is
/// projected by bearing within `GT_RANGE`, ignoring occlusion.
pub fn gt_bins(world: &WorldState) -> [bool; 3] {
    if world.blackout {
        return [true, true, true];
    }
    let mut bins = [false; 3];
    for seg in &world.injected {
        // Sample along the segment so partial FoV overlap still registers.
        let steps = 16;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let px = seg.ax + t * (seg.bx - seg.ax);
            let py = seg.ay + t * (seg.by - seg.ay);
            mark_point(world, px, py, &mut bins);
        }
    }
    for m in &world.movers {
        let d = ((m.x - world.x).powi(2) + (m.y - world.y).powi(2)).sqrt();
        if d > GT_RANGE {
            continue;
        }
        let center = wrap_angle((m.y - world.y).atan2(m.x - world.x) - world.theta);
        let half = (m.radius / d.max(m.radius)).asin();
        for bearing in [center - half, center, center + half] {
            mark_bearing(bearing, &mut bins);
        }
    }
    bins
}

fn mark_point(world: &WorldState, px: f64, py: f64, bins: &mut [bool; 3]) {
    let d = ((px - world.x).powi(2) + (py - world.y).powi(2)).sqrt();
    if d > GT_RANGE {
        return;
    }
    let bearing = wrap_angle((py - world.y).atan2(px - world.x) - world.theta);
    mark_bearing(bearing, bins);
}

/// Maps a bearing to the left/middle/right third of the FoV.  Bin 0 is
/// left (positive bearings), matching image column order.
fn mark_bearing(bearing: f64, bins: &mut [bool; 3]) {
    let half = FOV / 2.0;
    if bearing.abs() > half {
        return;
    }
    let third = FOV / 3.0;
    if bearing > half - third {
        bins[0] = true;
    } else if bearing < -(half - third) {
        bins[2] = true;
    } else {
        bins[1] = true;
    }
}
