//! Deterministic world generation: three layout families built around a
//! continuously curving reference path, with structure lining the route so
//! the view always reveals where the path bends next.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::world::{Layout, Segment, WorldState};

/// Minimum reference path length in world units.
pub const MIN_PATH_LEN: f64 = 60.0;
/// Corridor width between opposing walls.
pub const CORRIDOR_WIDTH: f64 = 3.0;
/// Waypoint spacing along generated paths.
const WAYPOINT_DS: f64 = 1.0;
/// Curvature magnitude range for path arcs, radians per unit.
const CURVATURE: (f64, f64) = (0.10, 0.42);
/// Cumulative heading stays within this angle of +x, so the path always
/// makes forward progress and never self-intersects.
const HEADING_LIMIT: f64 = 1.15;

/// Builds a world for the given layout, deterministic in the seed.  The
/// robot starts at the beginning of the path, facing along it.
pub fn build_world(layout: Layout, seed: u64) -> WorldState {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (layout as u64).wrapping_mul(0x9E37_79B9));
    let path = wander_path(&mut rng);
    let walls = match layout {
        Layout::Corridor => corridor_walls(&path),
        Layout::Plaza => plaza_walls(&mut rng, &path),
        Layout::Park => park_walls(&mut rng, &path),
    };
    let mut w = WorldState {
        layout,
        seed,
        walls,
        injected: vec![],
        path,
        x: 0.0,
        y: 0.0,
        theta: 0.0,
        movers: vec![],
        blackout: false,
        time: 0,
    };
    w.spawn_at(0.0);
    w
}

/// A path of constant-curvature arcs heading broadly +x: curvature is
/// resampled every few units, so the route is almost always turning one way
/// or the other and the turn ahead is visible in the rendered view.
fn wander_path(rng: &mut ChaCha20Rng) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0)];
    let mut heading: f64 = 0.0;
    let mut len = 0.0;
    let mut kappa = 0.0;
    let mut run = 0.0;
    while len < MIN_PATH_LEN + 8.0 {
        if run <= 0.0 {
            let mag = rng.random_range(CURVATURE.0..CURVATURE.1);
            // Bias toward turning back when the heading is already off-axis,
            // and always turn back near the limit so the path never sits
            // pinned on a straight diagonal.
            let toward = if heading > 0.0 { -mag } else { mag };
            let p_toward = if heading.abs() > 0.75 * HEADING_LIMIT { 1.0 } else { 0.65 };
            kappa = if rng.random_bool(p_toward) { toward } else { -toward };
            run = rng.random_range(3.0..7.0);
        }
        heading = (heading + kappa * WAYPOINT_DS).clamp(-HEADING_LIMIT, HEADING_LIMIT);
        let (px, py) = *pts.last().unwrap();
        pts.push((
            px + WAYPOINT_DS * heading.cos(),
            py + WAYPOINT_DS * heading.sin(),
        ));
        len += WAYPOINT_DS;
        run -= WAYPOINT_DS;
    }
    pts
}

/// Left unit normal of the direction (dx, dy).
fn left_normal(dx: f64, dy: f64) -> (f64, f64) {
    let n = (dx * dx + dy * dy).sqrt().max(1e-9);
    (-dy / n, dx / n)
}

/// Unit normal at a path vertex, averaging adjacent segment directions.
fn vertex_normal(path: &[(f64, f64)], i: usize) -> (f64, f64) {
    let prev = if i == 0 { path[0] } else { path[i - 1] };
    let next = if i + 1 == path.len() { path[i] } else { path[i + 1] };
    left_normal(next.0 - prev.0, next.1 - prev.1)
}

/// Offsets the path polyline to one side by `off` (positive = left) using
/// averaged vertex normals, then chains the points into wall segments.
fn offset_polyline(path: &[(f64, f64)], off: f64) -> Vec<Segment> {
    let shifted: Vec<(f64, f64)> = (0..path.len())
        .map(|i| {
            let (nx, ny) = vertex_normal(path, i);
            (path[i].0 + off * nx, path[i].1 + off * ny)
        })
        .collect();
    shifted
        .windows(2)
        .map(|w| Segment::new(w[0], w[1]))
        .collect()
}

fn corridor_walls(path: &[(f64, f64)]) -> Vec<Segment> {
    let half = CORRIDOR_WIDTH / 2.0;
    // Extend the path 1.2 units behind the start so the side walls and the
    // back wall meet flush, sealing the entrance.
    let (sx, sy) = path[0];
    let (dx, dy) = (path[1].0 - sx, path[1].1 - sy);
    let n = (dx * dx + dy * dy).sqrt().max(1e-9);
    let mut ext = Vec::with_capacity(path.len() + 1);
    ext.push((sx - 1.2 * dx / n, sy - 1.2 * dy / n));
    ext.extend_from_slice(path);
    let left = offset_polyline(&ext, half);
    let right = offset_polyline(&ext, -half);
    let back = Segment::new((left[0].ax, left[0].ay), (right[0].ax, right[0].ay));
    let mut walls = left;
    walls.extend(right);
    walls.push(back);
    walls
}

/// Axis-aligned square obstacle as four segments.
fn box_obstacle(cx: f64, cy: f64, half: f64) -> [Segment; 4] {
    let (x0, y0, x1, y1) = (cx - half, cy - half, cx + half, cy + half);
    [
        Segment::new((x0, y0), (x1, y0)),
        Segment::new((x1, y0), (x1, y1)),
        Segment::new((x1, y1), (x0, y1)),
        Segment::new((x0, y1), (x0, y0)),
    ]
}

fn min_dist_to_path(path: &[(f64, f64)], px: f64, py: f64) -> f64 {
    path.windows(2)
        .map(|w| Segment::new(w[0], w[1]).dist(px, py))
        .fold(f64::INFINITY, f64::min)
}

/// Arc length and cumulative-length table of a polyline.
fn arc_table(path: &[(f64, f64)]) -> (f64, Vec<f64>) {
    let mut acc = vec![0.0];
    for w in path.windows(2) {
        let len = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        acc.push(acc.last().unwrap() + len);
    }
    (*acc.last().unwrap(), acc)
}

/// Point and left normal at arc length s along the polyline.
fn frame_at(path: &[(f64, f64)], acc: &[f64], s: f64) -> ((f64, f64), (f64, f64)) {
    let i = match acc.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
        Ok(i) => i.min(path.len() - 2),
        Err(i) => i.saturating_sub(1).min(path.len() - 2),
    };
    let seg_len = (acc[i + 1] - acc[i]).max(1e-9);
    let t = ((s - acc[i]) / seg_len).clamp(0.0, 1.0);
    let (ax, ay) = path[i];
    let (bx, by) = path[i + 1];
    (
        (ax + t * (bx - ax), ay + t * (by - ay)),
        left_normal(bx - ax, by - ay),
    )
}

/// Obstacles lining the route at a lateral offset, so the path's curve is
/// readable from the rendered view.  `sides` selects left (+1), right (-1),
/// or alternating placement.
fn route_liners(
    rng: &mut ChaCha20Rng,
    path: &[(f64, f64)],
    spacing: (f64, f64),
    lateral: (f64, f64),
    half_size: f64,
    alternate: bool,
) -> Vec<Segment> {
    let (total, acc) = arc_table(path);
    let mut walls = Vec::new();
    let mut s = rng.random_range(0.5..1.5);
    let mut side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    while s < total {
        let ((px, py), (nx, ny)) = frame_at(path, &acc, s);
        let off = rng.random_range(lateral.0..lateral.1);
        let (cx, cy) = (px + side * off * nx, py + side * off * ny);
        // The curve can fold the offset point back toward another stretch of
        // the route; skip placements that would crowd it.
        if min_dist_to_path(path, cx, cy) >= lateral.0 - 0.25 {
            walls.extend(box_obstacle(cx, cy, half_size));
        }
        s += rng.random_range(spacing.0..spacing.1);
        if alternate {
            side = -side;
        } else {
            side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
    walls
}

/// Scatters square obstacles near but not on the path.
fn scatter_boxes(
    rng: &mut ChaCha20Rng,
    path: &[(f64, f64)],
    count: usize,
    half_size: f64,
    clearance: f64,
) -> Vec<Segment> {
    let (mut min_x, mut min_y, mut max_x, mut max_y) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in path {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let mut walls = Vec::new();
    let mut placed = 0;
    let mut attempts = 0;
    while placed < count && attempts < count * 40 {
        attempts += 1;
        let cx = rng.random_range(min_x - 4.0..max_x + 4.0);
        let cy = rng.random_range(min_y - 6.0..max_y + 6.0);
        if min_dist_to_path(path, cx, cy) < clearance + half_size {
            continue;
        }
        walls.extend(box_obstacle(cx, cy, half_size));
        placed += 1;
    }
    walls
}

/// Enclosed hall with pillars staked alternately along the route.
fn plaza_walls(rng: &mut ChaCha20Rng, path: &[(f64, f64)]) -> Vec<Segment> {
    let (mut min_x, mut min_y, mut max_x, mut max_y) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in path {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let (x0, y0, x1, y1) = (min_x - 6.0, min_y - 8.0, max_x + 6.0, max_y + 8.0);
    let mut walls = vec![
        Segment::new((x0, y0), (x1, y0)),
        Segment::new((x1, y0), (x1, y1)),
        Segment::new((x1, y1), (x0, y1)),
        Segment::new((x0, y0), (x0, y1)),
    ];
    walls.extend(route_liners(rng, path, (3.2, 4.4), (2.3, 2.8), 0.5, true));
    walls.extend(scatter_boxes(rng, path, 4, 1.0, 3.4));
    walls
}

/// Open ground with tree rows flanking the route plus scattered extras.
fn park_walls(rng: &mut ChaCha20Rng, path: &[(f64, f64)]) -> Vec<Segment> {
    let mut walls = route_liners(rng, path, (2.4, 3.6), (2.0, 2.9), 0.42, true);
    walls.extend(route_liners(rng, path, (2.8, 4.0), (2.1, 2.9), 0.42, true));
    walls.extend(scatter_boxes(rng, path, 6, 0.45, 3.4));
    walls
}
