//! Raycast renderer: one depth sample per image column, drawn as a
//! vertically centered bar whose height and brightness both fall off with
//! distance.

use super::world::{WorldState, RAY_RANGE};

/// Horizontal field of view in radians (140 degrees).
pub const FOV: f64 = 140.0 * std::f64::consts::PI / 180.0;
/// Distance at which a column bar saturates to full image height.
pub const HEIGHT_GAIN: f64 = 4.0;
/// Distance at which a column bar saturates to full brightness.
pub const BRIGHT_GAIN: f64 = 3.0;
/// Background intensity for sky/floor and rays that hit nothing.
pub const BACKGROUND: f32 = 0.02;

/// Renders the robot's view as a row-major `h` x `w` grayscale image in
/// [0, 1].  Column 0 is the leftmost ray (+FOV/2 relative to heading).
/// During a camera blackout every pixel is exactly zero.
pub fn render(world: &WorldState, h: usize, w: usize) -> Vec<f32> {
    assert!(h > 0 && w > 0, "image dimensions must be positive");
    if world.blackout {
        return vec![0.0; h * w];
    }
    let mut img = vec![BACKGROUND; h * w];
    for col in 0..w {
        let angle = world.theta + FOV * (0.5 - (col as f64 + 0.5) / w as f64);
        let (dx, dy) = (angle.cos(), angle.sin());
        let mut dist = f64::INFINITY;
        for seg in world.walls.iter().chain(&world.injected) {
            if let Some(t) = seg.raycast(world.x, world.y, dx, dy) {
                dist = dist.min(t);
            }
        }
        for m in &world.movers {
            if let Some(t) = m.raycast(world.x, world.y, dx, dy) {
                dist = dist.min(t);
            }
        }
        if dist > RAY_RANGE {
            continue;
        }
        let dist = dist.max(1e-6);
        let bar = (h as f64 * (HEIGHT_GAIN / dist).min(1.0)).round() as usize;
        let bar = bar.clamp(1, h);
        let value = ((BRIGHT_GAIN / dist).min(1.0) as f32).max(BACKGROUND);
        let top = (h - bar) / 2;
        for row in top..top + bar {
            img[row * w + col] = value;
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::world::{Layout, Mover, Segment, WorldState};

    fn bare_world() -> WorldState {
        WorldState {
            layout: Layout::Park,
            seed: 0,
            walls: vec![],
            injected: vec![],
            path: vec![(0.0, 0.0), (100.0, 0.0)],
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            movers: vec![],
            blackout: false,
            time: 0,
        }
    }

    #[test]
    fn empty_world_renders_uniform_background() {
        let img = render(&bare_world(), 48, 64);
        assert!(img.iter().all(|&p| p == BACKGROUND));
    }

    #[test]
    fn blackout_renders_exact_zeros() {
        let mut w = bare_world();
        w.walls.push(Segment::new((3.0, -10.0), (3.0, 10.0)));
        w.blackout = true;
        let img = render(&w, 48, 64);
        assert!(img.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn close_wall_fills_center_columns() {
        let mut w = bare_world();
        w.walls.push(Segment::new((1.5, -10.0), (1.5, 10.0)));
        let (h, ww) = (48, 64);
        let img = render(&w, h, ww);
        // Center column: wall at 1.5 < both gains, so full height and
        // full brightness.
        let col = ww / 2;
        assert!((0..h).all(|r| img[r * ww + col] == 1.0));
    }

    #[test]
    fn farther_walls_are_shorter_and_darker() {
        let (h, w) = (48, 64);
        let at = |d: f64| {
            let mut world = bare_world();
            world.walls.push(Segment::new((d, -50.0), (d, 50.0)));
            let img = render(&world, h, w);
            let col = w / 2;
            let bar = (0..h).filter(|r| img[r * w + col] > BACKGROUND).count();
            let peak = (0..h)
                .map(|r| img[r * w + col])
                .fold(0.0f32, f32::max);
            (bar, peak)
        };
        let (bar_near, peak_near) = at(5.0);
        let (bar_far, peak_far) = at(12.0);
        assert!(bar_near > bar_far, "{bar_near} vs {bar_far}");
        assert!(peak_near > peak_far, "{peak_near} vs {peak_far}");
        // Expected bar height H * k_h / d, rounded.
        assert_eq!(bar_near, (48.0f64 * 4.0 / 5.0).round() as usize);
        assert_eq!(bar_far, (48.0f64 * 4.0 / 12.0).round() as usize);
    }

    #[test]
    fn leftmost_column_looks_left() {
        let mut w = bare_world();
        // Wall covering only bearings near +70 degrees at distance ~3.
        w.walls.push(Segment::new((0.5, 2.5), (1.6, 2.5)));
        let img = render(&w, 48, 64);
        let lit: Vec<usize> = (0..64)
            .filter(|&c| (0..48).any(|r| img[r * 64 + c] > BACKGROUND))
            .collect();
        assert!(!lit.is_empty());
        assert!(lit.iter().all(|&c| c < 16), "columns {lit:?}");
    }

    #[test]
    fn mover_occludes_wall_behind_it() {
        let mut w = bare_world();
        w.walls.push(Segment::new((10.0, -10.0), (10.0, 10.0)));
        let base = render(&w, 48, 64);
        w.movers.push(Mover {
            x: 2.0,
            y: 0.0,
            vx: 0.0,
            vy: 0.0,
            radius: 0.35,
        });
        let img = render(&w, 48, 64);
        let col = 32;
        let peak_base = (0..48).map(|r| base[r * 64 + col]).fold(0.0f32, f32::max);
        let peak = (0..48).map(|r| img[r * 64 + col]).fold(0.0f32, f32::max);
        assert!(peak > peak_base);
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn range_limit_hides_distant_walls() {
        let mut w = bare_world();
        w.walls.push(Segment::new((25.0, -50.0), (25.0, 50.0)));
        let img = render(&w, 48, 64);
        assert!(img.iter().all(|&p| p == BACKGROUND));
    }
}
