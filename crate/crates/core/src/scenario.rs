//! Arena geometry, target trajectories and simulated camera ground truth.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::TICK_MS;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Room with a centered rectangular arena, an access point and four fixed
/// nodes on the arena corners. Coordinates are meters from the room's
/// lower-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct Arena {
    pub room: (f64, f64),
    pub inner: (f64, f64),
    pub wap: Point,
    pub fixed_nodes: [Point; 4],
}

impl Default for Arena {
    fn default() -> Self {
        Arena::centered((8.46, 6.98), (4.14, 2.86), None)
    }
}

impl Arena {
    /// Arena centered in the room, fixed nodes on its corners, and the WAP at
    /// `wap` (defaults to the arena center).
    pub fn centered(room: (f64, f64), inner: (f64, f64), wap: Option<Point>) -> Self {
        let x0 = (room.0 - inner.0) / 2.0;
        let y0 = (room.1 - inner.1) / 2.0;
        let (x1, y1) = (x0 + inner.0, y0 + inner.1);
        Self {
            room,
            inner,
            wap: wap.unwrap_or(Point::new(x0 + inner.0 / 2.0, y0 + inner.1 / 2.0)),
            fixed_nodes: [
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
        }
    }

    /// Lower-left and upper-right corners of the arena.
    pub fn inner_bounds(&self) -> (Point, Point) {
        let x0 = (self.room.0 - self.inner.0) / 2.0;
        let y0 = (self.room.1 - self.inner.1) / 2.0;
        (Point::new(x0, y0), Point::new(x0 + self.inner.0, y0 + self.inner.1))
    }

    pub fn center(&self) -> Point {
        let (lo, hi) = self.inner_bounds();
        Point::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0)
    }

    pub fn contains(&self, p: Point) -> bool {
        let (lo, hi) = self.inner_bounds();
        const EPS: f64 = 1e-9;
        p.x >= lo.x - EPS && p.x <= hi.x + EPS && p.y >= lo.y - EPS && p.y <= hi.y + EPS
    }

    pub fn validate(&self) -> Result<()> {
        let (rw, rd) = self.room;
        let (iw, id) = self.inner;
        if !(rw > 0.0 && rd > 0.0 && iw > 0.0 && id > 0.0) {
            return Err(Error::Config("arena and room dimensions must be positive".into()));
        }
        if iw > rw || id > rd {
            return Err(Error::Config(format!(
                "arena {iw} x {id} does not fit in room {rw} x {rd}"
            )));
        }
        if !self.contains(self.wap) {
            return Err(Error::Config(format!(
                "WAP at ({}, {}) is outside the arena",
                self.wap.x, self.wap.y
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Constant-speed loop through the four arena corners.
    WaypointLoop,
    /// 3:2 Lissajous figure filling the arena.
    Lissajous,
    /// Smoothed random walk reflecting off the arena walls.
    RandomWalk,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "waypoint-loop" => Ok(Self::WaypointLoop),
            "lissajous" => Ok(Self::Lissajous),
            "random-walk" => Ok(Self::RandomWalk),
            other => Err(Error::Config(format!(
                "unknown trajectory kind `{other}` (expected waypoint-loop, lissajous or random-walk)"
            ))),
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::WaypointLoop => "waypoint-loop",
            Self::Lissajous => "lissajous",
            Self::RandomWalk => "random-walk",
        })
    }
}

/// Motion parameters shared by all trajectory kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionParams {
    /// Upper bound on speed between consecutive ticks, m/s.
    pub max_speed: f64,
    /// Cruise speed of the waypoint loop and mean speed of the random walk, m/s.
    pub speed: f64,
    /// Period of the Lissajous figure, seconds.
    pub lissajous_period_s: f64,
    /// The random walk is kept at least this far from the WAP, meters.
    pub min_wap_distance: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            max_speed: 1.0,
            speed: 0.5,
            lissajous_period_s: 60.0,
            min_wap_distance: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `(timestamp_ms, position)`, one per tick.
    pub samples: Vec<(u64, Point)>,
    pub tick_ms: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks tick spacing, containment and the speed bound.
    pub fn validate(&self, arena: &Arena, max_speed: f64) -> Result<()> {
        let dt = self.tick_ms as f64 / 1000.0;
        for (i, &(t, p)) in self.samples.iter().enumerate() {
            if t != i as u64 * self.tick_ms {
                return Err(Error::Config(format!("tick {i} has timestamp {t}")));
            }
            if !arena.contains(p) {
                return Err(Error::Config(format!("tick {i} leaves the arena")));
            }
        }
        for w in self.samples.windows(2) {
            let v = w[0].1.dist(&w[1].1) / dt;
            if v > max_speed * (1.0 + 1e-9) {
                return Err(Error::Config(format!("speed {v:.3} m/s exceeds {max_speed}")));
            }
        }
        Ok(())
    }
}

/// Number of ticks in `duration_s` seconds.
pub fn tick_count(duration_s: f64) -> usize {
    (duration_s * 1000.0 / TICK_MS as f64).round() as usize
}

/// Generates a trajectory of `duration_s` seconds sampled every tick.
pub fn make_trajectory(
    arena: &Arena,
    kind: TrajectoryKind,
    duration_s: f64,
    motion: &MotionParams,
    seed: u64,
) -> Result<Trajectory> {
    if !(duration_s > 0.0) {
        return Err(Error::Config(format!("duration must be > 0, got {duration_s}")));
    }
    arena.validate()?;
    if !(motion.max_speed > 0.0) {
        return Err(Error::Config("max_speed must be > 0".into()));
    }
    let n = tick_count(duration_s);
    let dt = TICK_MS as f64 / 1000.0;
    let mut rng = rng::stream_rng(seed, stream::TRAJECTORY);
    let positions = match kind {
        TrajectoryKind::WaypointLoop => waypoint_loop(arena, n, dt, motion, &mut rng)?,
        TrajectoryKind::Lissajous => lissajous(arena, n, dt, motion, &mut rng)?,
        TrajectoryKind::RandomWalk => random_walk(arena, n, dt, motion, &mut rng)?,
    };
    let traj = Trajectory {
        samples: positions
            .into_iter()
            .enumerate()
            .map(|(i, p)| (i as u64 * TICK_MS, p))
            .collect(),
        tick_ms: TICK_MS,
    };
    traj.validate(arena, motion.max_speed)?;
    Ok(traj)
}

fn clamp_to(arena: &Arena, p: Point) -> Point {
    let (lo, hi) = arena.inner_bounds();
    Point::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y))
}

fn waypoint_loop<R: Rng>(
    arena: &Arena,
    n: usize,
    dt: f64,
    motion: &MotionParams,
    rng: &mut R,
) -> Result<Vec<Point>> {
    if !(motion.speed > 0.0) || motion.speed > motion.max_speed {
        return Err(Error::Config(format!(
            "waypoint speed {} must be in (0, max_speed={}]",
            motion.speed, motion.max_speed
        )));
    }
    let corners = arena.fixed_nodes;
    let perimeter = 2.0 * (arena.inner.0 + arena.inner.1);
    // The start point along the loop is the only random choice.
    let start = rng.random::<f64>() * perimeter;
    Ok((0..n)
        .map(|i| {
            let mut s = (start + motion.speed * dt * i as f64) % perimeter;
            let mut k = 0;
            loop {
                let (a, b) = (corners[k], corners[(k + 1) % 4]);
                let len = a.dist(&b);
                if s <= len || k == 3 {
                    let f = (s / len).min(1.0);
                    return clamp_to(arena, Point::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)));
                }
                s -= len;
                k += 1;
            }
        })
        .collect())
}

fn lissajous<R: Rng>(
    arena: &Arena,
    n: usize,
    dt: f64,
    motion: &MotionParams,
    rng: &mut R,
) -> Result<Vec<Point>> {
    const FX: f64 = 3.0;
    const FY: f64 = 2.0;
    const PHASE: f64 = PI / 8.0;
    let c = arena.center();
    let (ax, ay) = (arena.inner.0 / 2.0, arena.inner.1 / 2.0);
    let period = motion.lissajous_period_s;
    if !(period > 0.0) {
        return Err(Error::Config("lissajous period must be > 0".into()));
    }
    let omega = 2.0 * PI / period;
    // Peak speed of the figure; the speed bound is the only way the requested
    // path can be unrealizable in a given arena.
    let peak = omega * ((FX * ax).powi(2) + (FY * ay).powi(2)).sqrt();
    if peak > motion.max_speed {
        return Err(Error::Config(format!(
            "lissajous period {period} s is too short for this arena: peak speed {peak:.3} m/s exceeds {}",
            motion.max_speed
        )));
    }
    let t0 = rng.random::<f64>() * period;
    Ok((0..n)
        .map(|i| {
            let t = t0 + dt * i as f64;
            clamp_to(
                arena,
                Point::new(
                    c.x + ax * (FX * omega * t + PHASE).sin(),
                    c.y + ay * (FY * omega * t).sin(),
                ),
            )
        })
        .collect())
}

fn random_walk<R: Rng>(
    arena: &Arena,
    n: usize,
    dt: f64,
    motion: &MotionParams,
    rng: &mut R,
) -> Result<Vec<Point>> {
    let (lo, hi) = arena.inner_bounds();
    let keep_out = motion.min_wap_distance;
    if keep_out * 2.0 >= arena.inner.0.min(arena.inner.1) {
        return Err(Error::Config("arena too small for the WAP keep-out radius".into()));
    }
    // Heading follows a slow Gauss-Markov process; speed is constant.
    let speed = motion.speed.min(motion.max_speed);
    let turn_sigma = 0.35;
    let mut heading = rng.random::<f64>() * 2.0 * PI;
    let mut p;
    loop {
        p = Point::new(
            lo.x + rng.random::<f64>() * arena.inner.0,
            lo.y + rng.random::<f64>() * arena.inner.1,
        );
        if p.dist(&arena.wap) > keep_out {
            break;
        }
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(p);
        let z: f64 = rng.sample(StandardNormal);
        heading += turn_sigma * z;
        let mut next = Point::new(p.x + speed * dt * heading.cos(), p.y + speed * dt * heading.sin());
        if next.x < lo.x || next.x > hi.x {
            heading = PI - heading;
            next.x = p.x;
        }
        if next.y < lo.y || next.y > hi.y {
            heading = -heading;
            next.y = p.y;
        }
        if next.dist(&arena.wap) <= keep_out {
            // Turn away from the WAP and hold position for this tick.
            heading = (p.y - arena.wap.y).atan2(p.x - arena.wap.x);
            next = p;
        }
        p = clamp_to(arena, next);
    }
    Ok(out)
}

/// Camera-derived distance to the WAP per tick.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// `(timestamp_ms, distance_m)`.
    pub samples: Vec<(u64, f64)>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.samples.iter().map(|&(_, d)| d).collect()
    }
}

/// Euclidean distance to `wap` per tick plus uniform noise in
/// `[-noise_mm, +noise_mm]`, floored at zero.
pub fn sample_ground_truth(traj: &Trajectory, wap: Point, noise_mm: f64, seed: u64) -> GroundTruth {
    let mut rng = rng::stream_rng(seed, stream::TRUTH);
    let noise = noise_mm.max(0.0) / 1000.0;
    GroundTruth {
        samples: traj
            .samples
            .iter()
            .map(|&(t, p)| {
                let d = p.dist(&wap);
                let e = if noise > 0.0 {
                    rng.random_range(-noise..=noise)
                } else {
                    0.0
                };
                (t, (d + e).max(0.0))
            })
            .collect(),
    }
}
