//! Waypoint tracks, built-in generators and nearest-waypoint queries.
//!
//! Frame convention: `x` forward, `y` to the right, heading measured from
//! `+x` toward `+y`. A positive steering angle therefore turns right and a
//! positive bearing points right of the vehicle.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point,
    pub radius: f64,
}

/// Declarative description of a track, as stored in track files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub name: String,
    pub waypoints: Vec<Point>,
    pub half_width: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub closed: bool,
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

impl TrackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::Config(format!(
                "track '{}' needs at least 2 waypoints, has {}",
                self.name,
                self.waypoints.len()
            )));
        }
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(Error::Config(format!(
                "track '{}' half_width must be positive, got {}",
                self.name, self.half_width
            )));
        }
        let n = self.waypoints.len();
        let segments = if self.closed { n } else { n - 1 };
        for i in 0..segments {
            let a = self.waypoints[i];
            let b = self.waypoints[(i + 1) % n];
            if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(Error::Config(format!("non-finite waypoint near index {i}")));
            }
            let d = dist(a, b);
            if d == 0.0 {
                return Err(Error::Config(format!("waypoints {i} and {} coincide", (i + 1) % n)));
            }
            if d > self.half_width {
                return Err(Error::Config(format!(
                    "waypoint spacing {d:.3} between {i} and {} exceeds half_width {}",
                    (i + 1) % n,
                    self.half_width
                )));
            }
        }
        let start = self.waypoints[0];
        for (k, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) {
                return Err(Error::Config(format!("obstacle {k} has non-positive radius")));
            }
            if dist(o.center, start) <= o.radius {
                return Err(Error::Config(format!("obstacle {k} overlaps the start pose")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        let spec: TrackSpec = serde_json::from_str(&text).map_err(|e| Error::storage(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::storage(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::storage(path, e))
    }

    /// Track length along the centerline (meters).
    pub fn length(&self) -> f64 {
        let n = self.waypoints.len();
        let mut total: f64 = self.waypoints.windows(2).map(|w| dist(w[0], w[1])).sum();
        if self.closed && n > 1 {
            total += dist(self.waypoints[n - 1], self.waypoints[0]);
        }
        total
    }
}

/// Brute-force nearest waypoint: linear scan, lowest index wins ties.
pub fn nearest_waypoint_scan(position: Point, waypoints: &[Point]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &w) in waypoints.iter().enumerate() {
        let d = dist(position, w);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best
}

/// A validated track with a uniform grid over its waypoints.
#[derive(Clone, Debug)]
pub struct Track {
    spec: TrackSpec,
    cell: f64,
    origin: Point,
    cols: i64,
    rows: i64,
    cells: Vec<Vec<u32>>,
}

const RAY_STEP: f64 = 0.25;
const RAY_BISECT: usize = 6;

impl Track {
    pub fn new(spec: TrackSpec) -> Result<Self> {
        spec.validate()?;
        let cell = spec.half_width;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for w in &spec.waypoints {
            for k in 0..2 {
                lo[k] = lo[k].min(w[k]);
                hi[k] = hi[k].max(w[k]);
            }
        }
        let origin = [lo[0] - cell, lo[1] - cell];
        let cols = ((hi[0] - origin[0]) / cell).floor() as i64 + 2;
        let rows = ((hi[1] - origin[1]) / cell).floor() as i64 + 2;
        let mut cells = vec![Vec::new(); (cols * rows) as usize];
        for (i, w) in spec.waypoints.iter().enumerate() {
            let (cx, cy) = Self::cell_of(origin, cell, *w);
            cells[(cy * cols + cx) as usize].push(i as u32);
        }
        Ok(Self {
            spec,
            cell,
            origin,
            cols,
            rows,
            cells,
        })
    }

    fn cell_of(origin: Point, cell: f64, p: Point) -> (i64, i64) {
        (
            ((p[0] - origin[0]) / cell).floor() as i64,
            ((p[1] - origin[1]) / cell).floor() as i64,
        )
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.spec.waypoints
    }

    fn in_grid(&self, cx: i64, cy: i64) -> bool {
        cx >= 0 && cy >= 0 && cx < self.cols && cy < self.rows
    }

    /// Nearest waypoint `(index, distance)`; lowest index wins ties.
    pub fn nearest(&self, p: Point) -> (usize, f64) {
        let (cx, cy) = Self::cell_of(self.origin, self.cell, p);
        if !self.in_grid(cx, cy) {
            return nearest_waypoint_scan(p, &self.spec.waypoints).expect("validated track");
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = self.cols.max(self.rows);
        for r in 0..=max_ring {
            for gy in (cy - r)..=(cy + r) {
                for gx in (cx - r)..=(cx + r) {
                    if (gx - cx).abs() != r && (gy - cy).abs() != r {
                        continue;
                    }
                    if !self.in_grid(gx, gy) {
                        continue;
                    }
                    for &i in &self.cells[(gy * self.cols + gx) as usize] {
                        let i = i as usize;
                        let d = dist(p, self.spec.waypoints[i]);
                        if d < best.1 || (d == best.1 && i < best.0) {
                            best = (i, d);
                        }
                    }
                }
            }
            // anything in ring r + 1 or beyond is at least r * cell away
            if best.1 < r as f64 * self.cell {
                break;
            }
        }
        best
    }

    pub fn nearest_distance(&self, p: Point) -> f64 {
        self.nearest(p).1
    }

    /// True when some waypoint lies within `half_width` of `p`.
    fn within_corridor(&self, p: Point) -> bool {
        let (cx, cy) = Self::cell_of(self.origin, self.cell, p);
        let hw = self.spec.half_width;
        for gy in (cy - 1)..=(cy + 1) {
            for gx in (cx - 1)..=(cx + 1) {
                if !self.in_grid(gx, gy) {
                    continue;
                }
                for &i in &self.cells[(gy * self.cols + gx) as usize] {
                    if dist(p, self.spec.waypoints[i as usize]) <= hw {
                        return true;
                    }
                }
            }
        }
        false
    }

    pub fn hits_obstacle(&self, p: Point) -> bool {
        self.spec.obstacles.iter().any(|o| dist(p, o.center) < o.radius)
    }

    pub fn is_free(&self, p: Point) -> bool {
        self.within_corridor(p) && !self.hits_obstacle(p)
    }

    /// Distance along a ray to the first non-drivable point, capped at `max_range`.
    pub fn ray_distance(&self, origin: Point, angle: f64, max_range: f64) -> f64 {
        let (s, c) = angle.sin_cos();
        let at = |t: f64| [origin[0] + c * t, origin[1] + s * t];
        if !self.is_free(origin) {
            return 0.0;
        }
        let mut free_t = 0.0;
        let mut t = RAY_STEP;
        while t <= max_range {
            if !self.is_free(at(t)) {
                let mut lo = free_t;
                let mut hi = t;
                for _ in 0..RAY_BISECT {
                    let mid = 0.5 * (lo + hi);
                    if self.is_free(at(mid)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return lo;
            }
            free_t = t;
            t += RAY_STEP;
        }
        max_range
    }

    /// Unit tangent of the centerline at waypoint `i`.
    pub fn tangent(&self, i: usize) -> Point {
        let w = &self.spec.waypoints;
        let n = w.len();
        let (a, b) = if self.spec.closed {
            (w[(i + n - 1) % n], w[(i + 1) % n])
        } else if i == 0 {
            (w[0], w[1])
        } else if i == n - 1 {
            (w[n - 2], w[n - 1])
        } else {
            (w[i - 1], w[i + 1])
        };
        let d = dist(a, b);
        [(b[0] - a[0]) / d, (b[1] - a[1]) / d]
    }

    /// Signed lateral offset from the centerline (positive = right) and the
    /// local tangent heading, both measured at the nearest waypoint.
    pub fn frenet(&self, p: Point) -> (f64, f64, usize) {
        let (i, _) = self.nearest(p);
        let t = self.tangent(i);
        let w = self.spec.waypoints[i];
        let d = [p[0] - w[0], p[1] - w[1]];
        let offset = t[0] * d[1] - t[1] * d[0];
        (offset, t[1].atan2(t[0]), i)
    }

    /// Start pose: first waypoint, facing along the track.
    pub fn start_pose(&self) -> (Point, f64) {
        let t = self.tangent(0);
        (self.spec.waypoints[0], t[1].atan2(t[0]))
    }
}

/// Built-in procedural tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinTrack {
    Straight,
    Loop,
    SCurve,
    CoastalLike,
}

impl BuiltinTrack {
    pub const ALL: [BuiltinTrack; 4] = [
        BuiltinTrack::Straight,
        BuiltinTrack::Loop,
        BuiltinTrack::SCurve,
        BuiltinTrack::CoastalLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinTrack::Straight => "straight",
            BuiltinTrack::Loop => "loop",
            BuiltinTrack::SCurve => "s-curve",
            BuiltinTrack::CoastalLike => "coastal-like",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn generate(self, seed: u64) -> TrackSpec {
        match self {
            BuiltinTrack::Straight => straight(seed),
            BuiltinTrack::Loop => loop_track(seed),
            BuiltinTrack::SCurve => s_curve(seed),
            BuiltinTrack::CoastalLike => coastal_like(seed),
        }
    }
}

pub const DEFAULT_HALF_WIDTH: f64 = 3.0;
const SPACING: f64 = 1.0;

/// Resample a densely sampled polyline at uniform arc-length spacing.
fn resample(dense: &[Point], spacing: f64, closed: bool) -> Vec<Point> {
    let mut out = vec![dense[0]];
    let mut carried = 0.0;
    for w in dense.windows(2) {
        let seg = dist(w[0], w[1]);
        let mut along = spacing - carried;
        while along <= seg {
            let f = along / seg;
            out.push([
                w[0][0] + f * (w[1][0] - w[0][0]),
                w[0][1] + f * (w[1][1] - w[0][1]),
            ]);
            along += spacing;
        }
        carried = seg - (along - spacing);
    }
    if closed {
        // drop a tail point that would sit too close to the start
        while out.len() > 2 && dist(out[out.len() - 1], out[0]) < 0.5 * spacing {
            out.pop();
        }
    }
    out
}

fn sample<F: Fn(f64) -> Point>(f: F, t0: f64, t1: f64, n: usize) -> Vec<Point> {
    (0..=n)
        .map(|k| f(t0 + (t1 - t0) * k as f64 / n as f64))
        .collect()
}

pub fn straight(_seed: u64) -> TrackSpec {
    let waypoints = (0..=400).map(|i| [i as f64 * SPACING, 0.0]).collect();
    TrackSpec {
        name: "straight".into(),
        waypoints,
        half_width: DEFAULT_HALF_WIDTH,
        obstacles: vec![],
        closed: false,
    }
}

/// Closed loop, roughly 45 m mean radius with seeded lobes.
pub fn loop_track(seed: u64) -> TrackSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x100f);
    let r0 = 45.0;
    let a2 = rng.gen_range(0.10..0.18);
    let a3 = rng.gen_range(0.04..0.08);
    let p2 = rng.gen_range(0.0..std::f64::consts::TAU);
    let p3 = rng.gen_range(0.0..std::f64::consts::TAU);
    let curve = |th: f64| {
        let r = r0 * (1.0 + a2 * (2.0 * th + p2).cos() + a3 * (3.0 * th + p3).cos());
        [r * th.cos(), r * th.sin()]
    };
    let mut dense = sample(curve, 0.0, std::f64::consts::TAU, 20_000);
    dense.pop();
    dense.push(dense[0]);
    TrackSpec {
        name: "loop".into(),
        waypoints: resample(&dense, SPACING, true),
        half_width: DEFAULT_HALF_WIDTH,
        obstacles: vec![],
        closed: true,
    }
}

/// Open sinusoidal road, 600 m long.
pub fn s_curve(seed: u64) -> TrackSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c5c);
    let amp = rng.gen_range(12.0..18.0);
    let wavelength = rng.gen_range(100.0..140.0);
    let curve = |x: f64| [x, amp * (std::f64::consts::TAU * x / wavelength).sin()];
    let dense = sample(curve, 0.0, 600.0, 60_000);
    TrackSpec {
        name: "s-curve".into(),
        waypoints: resample(&dense, SPACING, false),
        half_width: DEFAULT_HALF_WIDTH,
        obstacles: vec![],
        closed: false,
    }
}

/// Open winding road with roadside obstacles narrowing the corridor.
pub fn coastal_like(seed: u64) -> TrackSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0a5);
    let a1 = rng.gen_range(10.0..16.0);
    let a2 = rng.gen_range(3.0..6.0);
    let l1 = rng.gen_range(150.0..200.0);
    let l2 = rng.gen_range(50.0..70.0);
    let curve = |x: f64| {
        [
            x,
            a1 * (std::f64::consts::TAU * x / l1).sin() + a2 * (std::f64::consts::TAU * x / l2).sin(),
        ]
    };
    let dense = sample(curve, 0.0, 600.0, 60_000);
    let waypoints = resample(&dense, SPACING, false);
    let mut spec = TrackSpec {
        name: "coastal-like".into(),
        waypoints,
        half_width: DEFAULT_HALF_WIDTH,
        obstacles: vec![],
        closed: false,
    };
    let track = Track::new(spec.clone()).expect("generated track is valid");
    let mut at = 60;
    while at + 10 < spec.waypoints.len() {
        let t = track.tangent(at);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let offset = side * rng.gen_range(1.8..2.4);
        let w = spec.waypoints[at];
        // normal pointing right of travel is (-t.y, t.x)
        spec.obstacles.push(Obstacle {
            center: [w[0] - t[1] * offset, w[1] + t[0] * offset],
            radius: 0.8,
        });
        at += rng.gen_range(50..90);
    }
    spec
}
