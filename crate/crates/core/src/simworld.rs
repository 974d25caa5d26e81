//! Synthetic indoor world: a chain of rooms and corridors with landmark
//! appearance, point-robot collision geometry, nominal paths and perturbed
//! trajectories, and a descriptor observation model with a fixed
//! sim → real-like domain shift.
//!
//! Corridors covered by the repetition count share one appearance, so
//! corresponding poses in them render identical descriptors.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topo_graph::{pose_distance, wrap_deg, MapError, Pose2D, TopoMap};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("disconnected layout: {0}")]
    Layout(String),
    #[error("pose ({0:.3}, {1:.3}) is outside the world")]
    OutOfBounds(f64, f64),
    #[error("path position {0:.3} m is beyond the path ({1:.3} m)")]
    Unreachable(f64, f64),
    #[error("trajectory collides at ({0:.3}, {1:.3})")]
    Collision(f64, f64),
    #[error("observation model: {0}")]
    Model(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Map(#[from] MapError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SegmentKind {
    Corridor { length: f64, width: f64 },
    /// Square room; the path may turn by ±90° at its centre.
    Room { size: f64, turn_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub segments: Vec<SegmentKind>,
    /// The first `repetition_count` corridors share one appearance.
    pub repetition_count: usize,
    /// Landmark feature dimension.
    pub d_feat: usize,
    pub corridor_landmark_spacing: f64,
    pub room_landmarks: usize,
    /// Range scale of landmark visibility [m].
    pub sigma_r: f64,
    pub turn_radius: f64,
    pub robot_radius: f64,
    pub pillar_radius: f64,
    pub seed: u64,
}

impl WorldSpec {
    /// Rooms joined by `corridors` corridors of `corridor_length` m, turning left and right alternately.
    pub fn chain(corridors: usize, corridor_length: f64, repetition_count: usize, seed: u64) -> Self {
        let mut segments = vec![SegmentKind::Room { size: 4.0, turn_deg: 0.0 }];
        for k in 0..corridors {
            segments.push(SegmentKind::Corridor {
                length: corridor_length,
                width: 2.0,
            });
            let turn_deg = if k + 1 == corridors {
                0.0
            } else if k % 2 == 0 {
                90.0
            } else {
                -90.0
            };
            segments.push(SegmentKind::Room { size: 4.0, turn_deg });
        }
        Self {
            segments,
            repetition_count,
            d_feat: 12,
            corridor_landmark_spacing: 1.5,
            room_landmarks: 6,
            sigma_r: 2.0,
            turn_radius: 1.0,
            robot_radius: 0.2,
            pillar_radius: 0.25,
            seed,
        }
    }

    /// Three identical 12 m corridors joined by four distinct rooms (~51 m path).
    pub fn benchmark(seed: u64) -> Self {
        Self::chain(3, 12.0, 3, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }
}

pub(crate) fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SimError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| SimError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let err = |message: String| SimError::File {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    /// Position in the segment frame.
    pub x: f64,
    pub y: f64,
    pub feature: Vec<f64>,
}

/// Segment entry point and heading (radians); local x runs along the entry heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Frame {
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.x, y - self.y);
        let (s, c) = self.heading.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn to_world(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.x + c * x - s * y, self.y + s * x + c * y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub frame: Frame,
    pub appearance: usize,
    pub landmarks: Vec<Landmark>,
    /// Path arc length at which the segment starts and ends.
    pub s_start: f64,
    pub s_end: f64,
}

impl Segment {
    fn extent(&self) -> (f64, f64) {
        match self.kind {
            SegmentKind::Corridor { length, width } => (length, width / 2.0),
            SegmentKind::Room { size, .. } => (size, size / 2.0),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (lx, ly) = self.frame.to_local(x, y);
        let (len, half) = self.extent();
        (0.0..=len).contains(&lx) && ly.abs() <= half
    }

    /// Free for a disc of radius `r`; corridors reach `r` into their neighbours.
    fn free_for(&self, x: f64, y: f64, r: f64) -> bool {
        let (lx, ly) = self.frame.to_local(x, y);
        let (len, half) = self.extent();
        match self.kind {
            SegmentKind::Corridor { .. } => lx >= -r && lx <= len + r && ly.abs() <= half - r,
            SegmentKind::Room { .. } => (0.0..=len).contains(&lx) && ly.abs() <= half - r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum PathPiece {
    Line { x: f64, y: f64, heading: f64, length: f64 },
    /// `sign` +1 turns left, −1 right; `phi0` is the start angle about the centre.
    Arc { cx: f64, cy: f64, radius: f64, phi0: f64, sign: f64 },
}

impl PathPiece {
    fn length(&self) -> f64 {
        match *self {
            PathPiece::Line { length, .. } => length,
            PathPiece::Arc { radius, .. } => radius * FRAC_PI_2,
        }
    }

    /// Position and heading (radians) at `u` metres into the piece.
    fn at(&self, u: f64) -> (f64, f64, f64) {
        match *self {
            PathPiece::Line { x, y, heading, .. } => (x + u * heading.cos(), y + u * heading.sin(), heading),
            PathPiece::Arc { cx, cy, radius, phi0, sign } => {
                let phi = phi0 + sign * u / radius;
                (cx + radius * phi.cos(), cy + radius * phi.sin(), phi + sign * FRAC_PI_2)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub segments: Vec<Segment>,
    pub pillars: Vec<Circle>,
    pieces: Vec<(f64, PathPiece)>,
    length: f64,
}

/// Builds geometry, nominal path, landmarks and pillars. Deterministic in `spec.seed`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    if spec.segments.is_empty() {
        return Err(SimError::Layout("no segments".into()));
    }
    if spec.repetition_count == 0 {
        return Err(SimError::Layout("repetition_count must be at least 1".into()));
    }
    if spec.d_feat == 0 || spec.sigma_r <= 0.0 || spec.corridor_landmark_spacing <= 0.0 {
        return Err(SimError::Layout("d_feat, sigma_r and landmark spacing must be positive".into()));
    }
    let corridors = spec
        .segments
        .iter()
        .filter(|s| matches!(s, SegmentKind::Corridor { .. }))
        .count();
    if spec.repetition_count > corridors.max(1) {
        return Err(SimError::Layout(format!(
            "repetition_count {} exceeds the {corridors} corridors",
            spec.repetition_count
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.turn_radius;
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    let mut s = 0.0;
    let mut pieces = Vec::new();
    let mut segments = Vec::new();
    let mut pillars = Vec::new();
    let mut corridor_seen = 0;
    let mut next_appearance = 1;
    let mut prev_width: Option<f64> = None;

    for (k, kind) in spec.segments.iter().enumerate() {
        let frame = Frame { x, y, heading };
        let s_start = s;
        let appearance;
        let mut local_landmarks = Vec::new();
        match *kind {
            SegmentKind::Corridor { length, width } => {
                if length <= 0.0 || width <= 2.0 * spec.robot_radius {
                    return Err(SimError::Layout(format!("segment {k}: corridor too small")));
                }
                if let Some(w) = prev_width {
                    if w < width {
                        return Err(SimError::Layout(format!("segment {k}: corridor wider than the room before it")));
                    }
                }
                appearance = if corridor_seen < spec.repetition_count { 0 } else { take(&mut next_appearance) };
                corridor_seen += 1;
                let n = (length / spec.corridor_landmark_spacing).floor().max(1.0) as usize;
                for i in 0..n {
                    let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                    local_landmarks.push((spec.corridor_landmark_spacing * (i as f64 + 0.5), side * width / 2.0));
                }
                push_line(&mut pieces, &mut x, &mut y, heading, length, &mut s);
                prev_width = Some(width);
            }
            SegmentKind::Room { size, turn_deg } => {
                let sign = if turn_deg == 0.0 {
                    0.0
                } else if turn_deg == 90.0 {
                    1.0
                } else if turn_deg == -90.0 {
                    -1.0
                } else {
                    return Err(SimError::Layout(format!("segment {k}: room turn must be 0 or ±90°")));
                };
                if size < 2.0 * r + 1.0 {
                    return Err(SimError::Layout(format!("segment {k}: room too small for its turn")));
                }
                if let Some(w) = prev_width {
                    if w > size {
                        return Err(SimError::Layout(format!("segment {k}: room narrower than the corridor before it")));
                    }
                }
                appearance = take(&mut next_appearance);
                for _ in 0..spec.room_landmarks {
                    // on one of the walls, away from the openings
                    let along = rng.gen_range(0.15..0.85) * size;
                    let lm = match rng.gen_range(0..3) {
                        0 => (along, size / 2.0),
                        1 => (along, -size / 2.0),
                        _ => (size, along - size / 2.0),
                    };
                    local_landmarks.push(lm);
                }
                let inset = 0.8;
                let corner = size / 2.0 - inset;
                let local_pillars: Vec<(f64, f64)> = if sign == 0.0 {
                    vec![(size / 2.0, corner), (size / 2.0, -corner)]
                } else {
                    vec![(inset, -sign * corner), (size - inset, -sign * corner), (size - inset, sign * corner)]
                };
                for (px, py) in local_pillars {
                    let (wx, wy) = frame.to_world(px, py);
                    pillars.push(Circle {
                        x: wx,
                        y: wy,
                        radius: spec.pillar_radius,
                    });
                }
                if sign == 0.0 {
                    push_line(&mut pieces, &mut x, &mut y, heading, size, &mut s);
                } else {
                    push_line(&mut pieces, &mut x, &mut y, heading, size / 2.0 - r, &mut s);
                    let (nx, ny) = (-heading.sin(), heading.cos());
                    let (cx, cy) = (x + sign * r * nx, y + sign * r * ny);
                    let phi0 = heading - sign * FRAC_PI_2;
                    let arc = PathPiece::Arc { cx, cy, radius: r, phi0, sign };
                    let (ex, ey, eh) = arc.at(arc.length());
                    pieces.push((s, arc));
                    s += arc.length();
                    x = ex;
                    y = ey;
                    heading = eh;
                    push_line(&mut pieces, &mut x, &mut y, heading, size / 2.0 - r, &mut s);
                }
                prev_width = Some(size);
            }
        }
        segments.push(Segment {
            kind: *kind,
            frame,
            appearance,
            landmarks: local_landmarks
                .into_iter()
                .map(|(lx, ly)| Landmark { x: lx, y: ly, feature: Vec::new() })
                .collect(),
            s_start,
            s_end: s,
        });
    }

    // features per appearance, drawn in appearance order so repeated segments share them
    let n_app = segments.iter().map(|s| s.appearance).max().unwrap_or(0) + 1;
    let mut features: Vec<Option<Vec<Vec<f64>>>> = vec![None; n_app];
    for seg in &mut segments {
        let count = seg.landmarks.len();
        let feats = features[seg.appearance]
            .get_or_insert_with(|| {
                (0..count)
                    .map(|_| (0..spec.d_feat).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .collect()
            })
            .clone();
        for (lm, f) in seg.landmarks.iter_mut().zip(feats) {
            lm.feature = f;
        }
    }

    let world = World {
        spec: spec.clone(),
        segments,
        pillars,
        pieces,
        length: s,
    };
    // the nominal path must be traversable
    let steps = (world.length / 0.05).ceil() as usize;
    for i in 0..=steps {
        let p = world.nominal_pose(world.length * i as f64 / steps as f64)?;
        if !world.is_free(p.x, p.y) {
            return Err(SimError::Layout(format!("nominal path blocked at ({:.2}, {:.2})", p.x, p.y)));
        }
    }
    Ok(world)
}

fn push_line(pieces: &mut Vec<(f64, PathPiece)>, x: &mut f64, y: &mut f64, heading: f64, length: f64, s: &mut f64) {
    if length > 0.0 {
        pieces.push((*s, PathPiece::Line { x: *x, y: *y, heading, length }));
        *x += length * heading.cos();
        *y += length * heading.sin();
        *s += length;
    }
}

fn take(counter: &mut usize) -> usize {
    let v = *counter;
    *counter += 1;
    v
}

impl World {
    pub fn path_length(&self) -> f64 {
        self.length
    }

    pub fn d_feat(&self) -> usize {
        self.spec.d_feat
    }

    fn nominal_raw(&self, s: f64) -> Result<(f64, f64, f64)> {
        if !(-1e-9..=self.length + 1e-9).contains(&s) {
            return Err(SimError::Unreachable(s, self.length));
        }
        let idx = self.pieces.partition_point(|(s0, _)| *s0 <= s).saturating_sub(1);
        let (s0, piece) = self.pieces[idx];
        let u = (s - s0).clamp(0.0, piece.length());
        Ok(piece.at(u))
    }

    /// Pose on the centre line at arc length `s`.
    pub fn nominal_pose(&self, s: f64) -> Result<Pose2D> {
        let (x, y, h) = self.nominal_raw(s)?;
        Ok(Pose2D::new(x, y, h.to_degrees()))
    }

    /// Index of the first segment containing the point.
    pub fn segment_at(&self, x: f64, y: f64) -> Option<usize> {
        self.segments.iter().position(|s| s.contains(x, y))
    }

    /// Segment along the path at arc length `s`.
    pub fn segment_for_arc(&self, s: f64) -> usize {
        self.segments
            .iter()
            .position(|seg| s < seg.s_end)
            .unwrap_or(self.segments.len() - 1)
    }

    /// Whether a robot disc centred here is collision-free.
    pub fn is_free(&self, x: f64, y: f64) -> bool {
        let r = self.spec.robot_radius;
        self.segments.iter().any(|s| s.free_for(x, y, r))
            && self
                .pillars
                .iter()
                .all(|c| (x - c.x).hypot(y - c.y) > c.radius + r)
    }

    /// Last free point when moving straight from `a` to `b`, and whether the motion was blocked.
    pub fn sweep(&self, a: (f64, f64), b: (f64, f64)) -> ((f64, f64), bool) {
        let dist = (b.0 - a.0).hypot(b.1 - a.1);
        let n = (dist / 0.02).ceil().max(1.0) as usize;
        let mut last = a;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            let p = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            if !self.is_free(p.0, p.1) {
                return (last, true);
            }
            last = p;
        }
        (b, false)
    }

    /// Noise-free landmark descriptor (length `d_feat`).
    pub fn landmark_descriptor(&self, pose: &Pose2D) -> Result<Vec<f64>> {
        let seg = self
            .segment_at(pose.x, pose.y)
            .ok_or(SimError::OutOfBounds(pose.x, pose.y))?;
        let seg = &self.segments[seg];
        let (lx, ly) = seg.frame.to_local(pose.x, pose.y);
        let heading = pose.theta.to_radians() - seg.frame.heading;
        let two_s2 = 2.0 * self.spec.sigma_r * self.spec.sigma_r;
        let mut out = vec![0.0; self.spec.d_feat];
        for lm in &seg.landmarks {
            let (dx, dy) = (lm.x - lx, lm.y - ly);
            let bearing = dy.atan2(dx) - heading;
            let w = (-(dx * dx + dy * dy) / two_s2).exp() * (0.5 + 0.5 * bearing.cos());
            for (o, f) in out.iter_mut().zip(&lm.feature) {
                *o += w * f;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Sim,
    RealLike,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Sim => "sim",
            Domain::RealLike => "real_like",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
    pub extra_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub d_obs: usize,
    /// Trailing dimensions carrying only clutter (scene content unrelated to place).
    pub d_clutter: usize,
    pub noise_sigma: f64,
    pub clutter_sigma: f64,
    pub domain_shift: DomainShift,
}

impl ObservationModel {
    /// Default noise levels with a domain shift drawn from `seed`.
    pub fn standard(d_feat: usize, d_clutter: usize, seed: u64) -> Self {
        let d_obs = d_feat + d_clutter;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d0a1);
        Self {
            d_obs,
            d_clutter,
            noise_sigma: 0.05,
            clutter_sigma: 0.5,
            domain_shift: DomainShift {
                scale: (0..d_obs).map(|_| rng.gen_range(0.5..1.5)).collect(),
                bias: (0..d_obs).map(|_| rng.gen_range(-0.6..0.6)).collect(),
                extra_noise: 0.05,
            },
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.clutter_sigma = 0.0;
        self.domain_shift.extra_noise = 0.0;
        self
    }

    pub fn validate(&self, world: &World) -> Result<()> {
        if self.d_obs < 2 {
            return Err(SimError::Model("d_obs must be at least 2".into()));
        }
        if self.d_obs != world.d_feat() + self.d_clutter {
            return Err(SimError::Model(format!(
                "d_obs {} != landmark dims {} + clutter dims {}",
                self.d_obs,
                world.d_feat(),
                self.d_clutter
            )));
        }
        if self.noise_sigma < 0.0 || self.clutter_sigma < 0.0 || self.domain_shift.extra_noise < 0.0 {
            return Err(SimError::Model("noise levels must be non-negative".into()));
        }
        if self.domain_shift.scale.len() != self.d_obs || self.domain_shift.bias.len() != self.d_obs {
            return Err(SimError::Model("domain shift length differs from d_obs".into()));
        }
        Ok(())
    }
}

/// Descriptor seen at `pose`; the real-like domain applies the affine shift and extra noise.
pub fn render_observation<R: Rng>(
    world: &World,
    pose: &Pose2D,
    model: &ObservationModel,
    domain: Domain,
    rng: &mut R,
) -> Result<Vec<f64>> {
    model.validate(world)?;
    let mut out = world.landmark_descriptor(pose)?;
    if model.noise_sigma > 0.0 {
        let n = Normal::new(0.0, model.noise_sigma).expect("valid sigma");
        out.iter_mut().for_each(|v| *v += n.sample(rng));
    }
    if model.clutter_sigma > 0.0 {
        let n = Normal::new(0.0, model.clutter_sigma).expect("valid sigma");
        out.extend((0..model.d_clutter).map(|_| n.sample(rng)));
    } else {
        out.extend(std::iter::repeat(0.0).take(model.d_clutter));
    }
    if domain == Domain::RealLike {
        let shift = &model.domain_shift;
        for ((v, a), b) in out.iter_mut().zip(&shift.scale).zip(&shift.bias) {
            *v = a * *v + b;
        }
        if shift.extra_noise > 0.0 {
            let n = Normal::new(0.0, shift.extra_noise).expect("valid sigma");
            out.iter_mut().for_each(|v| *v += n.sample(rng));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// Start and end arc length along the nominal path [m].
    pub s_start: f64,
    pub s_end: f64,
    /// Arc length advanced per sample [m].
    pub step: f64,
    /// Pose distance from the nominal pose at the same arc length.
    pub deviation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub spec: TrajectorySpec,
    pub poses: Vec<Pose2D>,
    /// Arc length of the nominal pose each sample perturbs.
    pub arc: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Path-following trajectory. Each pose sits at pose distance `deviation`
/// from the nominal pose at the same arc length: a smooth lateral offset of
/// at most `min(deviation/2, 0.6)` m plus a yaw offset making up the rest.
pub fn generate_trajectory(world: &World, spec: &TrajectorySpec, omega_m: f64) -> Result<Trajectory> {
    if spec.s_start < 0.0 || spec.s_start > world.length {
        return Err(SimError::Unreachable(spec.s_start, world.length));
    }
    if spec.s_end > world.length + 1e-9 || spec.s_end < spec.s_start {
        return Err(SimError::Unreachable(spec.s_end, world.length));
    }
    if spec.step <= 0.0 || spec.deviation < 0.0 || omega_m <= 0.0 {
        return Err(SimError::Model("step and omega_m must be positive, deviation non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lat_amp = (spec.deviation / 2.0).min(0.6);
    let wavelength = rng.gen_range(6.0..12.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let yaw_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };

    let count = ((spec.s_end - spec.s_start) / spec.step + 1e-9).floor() as usize + 1;
    let mut poses = Vec::with_capacity(count);
    let mut arc = Vec::with_capacity(count);
    for i in 0..count {
        let s = (spec.s_start + i as f64 * spec.step).min(world.length);
        let (x, y, h) = world.nominal_raw(s)?;
        let e = lat_amp * (std::f64::consts::TAU * s / wavelength + phase).sin();
        let yaw = yaw_sign * (spec.deviation - e.abs()) / omega_m;
        let (px, py) = (x - e * h.sin(), y + e * h.cos());
        if !world.is_free(px, py) {
            return Err(SimError::Collision(px, py));
        }
        poses.push(Pose2D::new(px, py, wrap_deg(h.to_degrees() + yaw)));
        arc.push(s);
    }
    // consecutive samples must not cut through obstacles either
    for w in poses.windows(2) {
        let (_, blocked) = world.sweep((w[0].x, w[0].y), (w[1].x, w[1].y));
        if blocked {
            return Err(SimError::Collision(w[1].x, w[1].y));
        }
    }
    Ok(Trajectory {
        spec: *spec,
        poses,
        arc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationCategory {
    NotDeviated,
    DeviatedLe1,
    Deviated1To2,
}

impl DeviationCategory {
    pub const ALL: [DeviationCategory; 3] = [Self::NotDeviated, Self::DeviatedLe1, Self::Deviated1To2];

    pub fn name(self) -> &'static str {
        match self {
            Self::NotDeviated => "not_deviated",
            Self::DeviatedLe1 => "deviated_le_1",
            Self::Deviated1To2 => "deviated_1_to_2",
        }
    }

    /// Band of a pose distance; `None` beyond 2.
    pub fn of_distance(d: f64) -> Option<Self> {
        if d <= 1e-9 {
            Some(Self::NotDeviated)
        } else if d <= 1.0 {
            Some(Self::DeviatedLe1)
        } else if d <= 2.0 {
            Some(Self::Deviated1To2)
        } else {
            None
        }
    }
}

/// Band of the pose distance to the nearest map node.
pub fn classify_deviation(pose: &Pose2D, map: &TopoMap, omega_m: f64) -> Result<Option<DeviationCategory>> {
    let node = map.nearest_node(pose, omega_m)?;
    let np = map.pose(node).ok_or(MapError::PoselessMap)?;
    Ok(DeviationCategory::of_distance(pose_distance(pose, &np, omega_m)))
}

/// Poses with the descriptors observed along them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub domain: Domain,
    pub trajectory: Trajectory,
    pub observations: Vec<Vec<f64>>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn samples(&self) -> Vec<(Vec<f64>, Pose2D)> {
        self.observations
            .iter()
            .cloned()
            .zip(self.trajectory.poses.iter().copied())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }
}

/// Renders every pose of a trajectory with noise drawn from `seed`.
pub fn record(world: &World, trajectory: &Trajectory, model: &ObservationModel, domain: Domain, seed: u64) -> Result<Recording> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observations = trajectory
        .poses
        .iter()
        .map(|p| render_observation(world, p, model, domain, &mut rng))
        .collect::<Result<_>>()?;
    Ok(Recording {
        domain,
        trajectory: trajectory.clone(),
        observations,
    })
}
