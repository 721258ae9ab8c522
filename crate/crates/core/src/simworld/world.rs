//! World state, segment geometry, and the unicycle step with collision
//! clamping.

use crate::policy::ActionCmd;

/// Control period in seconds: 10 steps per second.
pub const DT: f64 = 0.1;
/// Linear velocity at v = 1, world-units per second.
pub const V_MAX: f64 = 1.0;
/// Angular velocity at omega = 1, radians per second.
pub const OMEGA_MAX: f64 = 1.5;
/// Robot body radius in world units.
pub const R_ROBOT: f64 = 0.3;
/// Raycast range; everything farther renders as background.
pub const RAY_RANGE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub ax: f64,
    pub ay: f64,
    pub bx: f64,
    pub by: f64,
}

impl Segment {
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Segment {
        Segment {
            ax: a.0,
            ay: a.1,
            bx: b.0,
            by: b.1,
        }
    }

    /// Distance from a point to this segment.
    pub fn dist(&self, px: f64, py: f64) -> f64 {
        let (dx, dy) = (self.bx - self.ax, self.by - self.ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((px - self.ax) * dx + (py - self.ay) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (self.ax + t * dx, self.ay + t * dy);
        ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
    }

    /// Ray-segment intersection: distance along the unit ray (ox,oy)+(dx,dy)t,
    /// or None when the ray misses.
    pub fn raycast(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        let (sx, sy) = (self.bx - self.ax, self.by - self.ay);
        let denom = dx * sy - dy * sx;
        if denom.abs() < 1e-12 {
            return None;
        }
        let (qx, qy) = (self.ax - ox, self.ay - oy);
        let t = (qx * sy - qy * sx) / denom;
        let u = (qx * dy - qy * dx) / denom;
        if t >= 0.0 && (0.0..=1.0).contains(&u) {
            Some(t)
        } else {
            None
        }
    }
}

/// A moving circular obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mover {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
}

impl Mover {
    /// Ray-circle intersection distance, if any.
    pub fn raycast(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        let (cx, cy) = (self.x - ox, self.y - oy);
        let proj = cx * dx + cy * dy;
        let d2 = cx * cx + cy * cy - proj * proj;
        let r2 = self.radius * self.radius;
        if d2 > r2 {
            return None;
        }
        let off = (r2 - d2).sqrt();
        let t = proj - off;
        if t >= 0.0 {
            Some(t)
        } else if proj + off >= 0.0 {
            Some(0.0)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Corridor,
    Plaza,
    Park,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Corridor => "corridor",
            Layout::Plaza => "plaza",
            Layout::Park => "park",
        }
    }

    pub fn parse(s: &str) -> Option<Layout> {
        match s {
            "corridor" => Some(Layout::Corridor),
            "plaza" => Some(Layout::Plaza),
            "park" => Some(Layout::Park),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub layout: Layout,
    pub seed: u64,
    /// Static geometry from the layout generator.
    pub walls: Vec<Segment>,
    /// Geometry added by failure injection; rendered and collided like
    /// walls but labeled separately for ground truth.
    pub injected: Vec<Segment>,
    /// Reference path the expert follows.
    pub path: Vec<(f64, f64)>,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub movers: Vec<Mover>,
    pub blackout: bool,
    pub time: usize,
}

impl WorldState {
    /// Total polyline length.
    pub fn path_len(&self) -> f64 {
        self.path
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
            .sum()
    }

    /// Point and unit tangent at arc length s along the path, clamped to the
    /// ends.
    pub fn path_point(&self, s: f64) -> ((f64, f64), (f64, f64)) {
        let mut remaining = s.max(0.0);
        for w in self.path.windows(2) {
            let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            let len = (dx * dx + dy * dy).sqrt();
            if remaining <= len && len > 0.0 {
                let t = remaining / len;
                return (
                    (w[0].0 + t * dx, w[0].1 + t * dy),
                    (dx / len, dy / len),
                );
            }
            remaining -= len;
        }
        let last = *self.path.last().expect("path non-empty");
        let w = &self.path[self.path.len() - 2..];
        let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        (last, (dx / len, dy / len))
    }

    /// Arc length of the path point closest to (px, py).
    pub fn nearest_path_s(&self, px: f64, py: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut acc = 0.0;
        for w in self.path.windows(2) {
            let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            let len2 = dx * dx + dy * dy;
            let len = len2.sqrt();
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((px - w[0].0) * dx + (py - w[0].1) * dy) / len2).clamp(0.0, 1.0)
            };
            let (cx, cy) = (w[0].0 + t * dx, w[0].1 + t * dy);
            let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            if d < best.0 {
                best = (d, acc + t * len);
            }
            acc += len;
        }
        best.1
    }

    /// Places the robot on the path at arc length s, facing along it.
    pub fn spawn_at(&mut self, s: f64) {
        let ((x, y), (tx, ty)) = self.path_point(s);
        self.x = x;
        self.y = y;
        self.theta = ty.atan2(tx);
    }

    fn position_free(&self, px: f64, py: f64) -> bool {
        let hits_wall = self
            .walls
            .iter()
            .chain(&self.injected)
            .any(|s| s.dist(px, py) < R_ROBOT);
        let hits_mover = self.movers.iter().any(|m| {
            let d = ((px - m.x).powi(2) + (py - m.y).powi(2)).sqrt();
            d < R_ROBOT + m.radius
        });
        !hits_wall && !hits_mover
    }

    /// Advances one control period: translation with the pre-update heading,
    /// then rotation; movers advance unconditionally.  Motion is resolved in
    /// quarter substeps, each allowed to slide along one axis when the full
    /// move would collide.
    pub fn step(&mut self, action: ActionCmd, dt: f64) {
        assert!(dt > 0.0, "time step must be positive");
        let a = action.clamped();
        let dx = a.v * self.theta.cos() * dt * V_MAX;
        let dy = a.v * self.theta.sin() * dt * V_MAX;
        for _ in 0..4 {
            let (nx, ny) = (self.x + dx / 4.0, self.y + dy / 4.0);
            if self.position_free(nx, ny) {
                self.x = nx;
                self.y = ny;
            } else if self.position_free(nx, self.y) {
                self.x = nx;
            } else if self.position_free(self.x, ny) {
                self.y = ny;
            } else {
                break;
            }
        }
        self.theta = wrap_angle(self.theta + a.omega * dt * OMEGA_MAX);
        for m in &mut self.movers {
            m.x += m.vx * dt;
            m.y += m.vy * dt;
        }
        self.time += 1;
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    } else if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}
