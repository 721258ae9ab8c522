//! Pure-pursuit expert used to generate demonstrations: chases a lookahead
//! point on the reference path, slowing for large heading errors.

use crate::policy::ActionCmd;

use super::world::{wrap_angle, WorldState};

/// Lookahead distance along the path, world units.
pub const LOOKAHEAD: f64 = 1.2;
/// Heading-error gain on the normalized turn rate.
const TURN_GAIN: f64 = 2.4;
/// Arc length from the path end at which the expert stops.
const END_MARGIN: f64 = 0.3;

/// Steering command toward a point `LOOKAHEAD` units farther along the path
/// than the robot's closest path point.  Past the path end the expert stops.
pub fn expert_action(world: &WorldState) -> ActionCmd {
    let s = world.nearest_path_s(world.x, world.y);
    let total = world.path_len();
    if s >= total - END_MARGIN {
        return ActionCmd::STOP;
    }
    let ((lx, ly), _) = world.path_point((s + LOOKAHEAD).min(total));
    let err = wrap_angle((ly - world.y).atan2(lx - world.x) - world.theta);
    let omega = (TURN_GAIN * err).clamp(-1.0, 1.0);
    let v = (1.0 - 1.4 * err.abs()).clamp(0.15, 1.0);
    ActionCmd { v, omega }
}

/// True once the robot is within `tol` of the final waypoint.
pub fn reached_goal(world: &WorldState, tol: f64) -> bool {
    let (gx, gy) = *world.path.last().expect("path non-empty");
    ((world.x - gx).powi(2) + (world.y - gy).powi(2)).sqrt() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::layouts::build_world;
    use crate::simworld::world::{Layout, DT};

    #[test]
    fn aligned_on_path_drives_near_full_speed() {
        let w = build_world(Layout::Corridor, 3);
        let a = expert_action(&w);
        assert!(a.v > 0.8, "v = {}", a.v);
        assert!(a.omega.abs() < 0.4, "omega = {}", a.omega);
    }

    #[test]
    fn lookahead_to_the_left_turns_left() {
        let mut w = build_world(Layout::Corridor, 3);
        // Face 90 degrees right of the path tangent: the lookahead point is
        // now on the robot's left, so the turn command must be positive.
        w.theta -= std::f64::consts::FRAC_PI_2;
        let a = expert_action(&w);
        assert!(a.omega > 0.5, "omega = {}", a.omega);
        assert!(a.v < 0.5, "v = {}", a.v);
    }

    #[test]
    fn stops_past_path_end() {
        let mut w = build_world(Layout::Corridor, 3);
        let total = w.path_len();
        w.spawn_at(total);
        assert_eq!(expert_action(&w), ActionCmd::STOP);
    }

    #[test]
    fn completes_routes_on_many_seeds() {
        for layout in [Layout::Corridor, Layout::Plaza, Layout::Park] {
            for seed in 0..10 {
                let mut w = build_world(layout, seed);
                let mut done = false;
                for _ in 0..2000 {
                    let a = expert_action(&w);
                    w.step(a, DT);
                    if reached_goal(&w, 1.5) {
                        done = true;
                        break;
                    }
                }
                assert!(done, "{layout:?} seed {seed} did not finish");
            }
        }
    }
}
