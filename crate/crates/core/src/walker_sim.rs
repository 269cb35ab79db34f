//! Synthetic walking tracks with anticipatory head yaw.
//!
//! Body heading follows the route (constant, or a smoothstep ramp through a
//! turn). Head yaw at time `t` equals body heading at `t + head_lead_s`, plus
//! an optional overshoot bump during the head turn. The walker moves at
//! constant speed along the heading. Observations are ground truth plus
//! independent Gaussian noise.
//!
//! Randomness comes from ChaCha8 seeded with `SimConfig::seed`. Each track
//! draws from its own stream: stream 0 holds the per-subject speeds and
//! track `(subject_index, route)` uses stream `1 + 16·subject_index + route`.
//! Within a frame, draws happen in the order nose xyz, waist xyz, nose yaw,
//! waist yaw.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_track, Frame, RouteId, Track};
use crate::error::{Error, Result};
use crate::geometry::{UnitQuaternion, Vec3};

/// Room footprint: the camera sits at the middle of one wall, looking into
/// the room along +z.
pub const ROOM_HALF_WIDTH: f64 = 3.65;
pub const ROOM_DEPTH: f64 = 9.0;
/// Vertical camera-frame coordinates (y down) of the nose and waist.
pub const NOSE_Y: f64 = -0.45;
pub const WAIST_Y: f64 = 0.15;

const SIMPSON_INTERVALS: usize = 8;
const SPEED_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteKind {
    Straight,
    Turn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub route_id: RouteId,
    pub kind: RouteKind,
    /// Start position on the floor (camera-frame x and z, metres).
    pub start_x: f64,
    pub start_z: f64,
    /// Initial body heading (rad).
    pub initial_heading: f64,
    /// Walking stops once this distance is covered.
    pub path_length: f64,
    pub turn_angle: f64,
    pub turn_start_s: f64,
    pub turn_duration_s: f64,
}

impl RouteSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.start_x,
            self.start_z,
            self.initial_heading,
            self.path_length,
            self.turn_angle,
            self.turn_start_s,
            self.turn_duration_s,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.path_length <= 0.0 {
            return Err(Error::Config(format!("bad route {}: {self:?}", self.route_id)));
        }
        if self.kind == RouteKind::Turn && self.turn_duration_s <= 0.0 {
            return Err(Error::Config(format!("route {}: turn_duration_s must be > 0", self.route_id)));
        }
        Ok(())
    }

    pub fn heading_at(&self, t: f64) -> f64 {
        match self.kind {
            RouteKind::Straight => self.initial_heading,
            RouteKind::Turn => {
                let u = (t - self.turn_start_s) / self.turn_duration_s;
                self.initial_heading + self.turn_angle * smoothstep(u)
            }
        }
    }

    fn overshoot_at(&self, t: f64) -> f64 {
        match self.kind {
            RouteKind::Straight => 0.0,
            RouteKind::Turn => {
                let u = (t - self.turn_start_s) / self.turn_duration_s;
                if (0.0..=1.0).contains(&u) {
                    self.turn_angle.signum() * (std::f64::consts::PI * u).sin().powi(2)
                } else {
                    0.0
                }
            }
        }
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// The six routes: R1/R2 straight approaches, R3/R4 quarter turns toward the
/// camera, R5/R6 three-quarter turns toward the camera. Odd routes go to the
/// right, even routes mirror them.
pub fn default_routes() -> Vec<RouteSpec> {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    let straight_heading = 2.0f64.atan2(-4.5);
    let base = [
        (RouteId::R1, RouteKind::Straight, -1.6, 5.4, straight_heading, 0.0),
        (RouteId::R3, RouteKind::Turn, -2.6, 5.0, FRAC_PI_2, FRAC_PI_2),
        (RouteId::R5, RouteKind::Turn, -2.4, 3.4, FRAC_PI_4, 3.0 * FRAC_PI_4),
    ];
    let mut routes = Vec::with_capacity(6);
    for (id, kind, x, z, heading, turn) in base {
        let spec = RouteSpec {
            route_id: id,
            kind,
            start_x: x,
            start_z: z,
            initial_heading: heading,
            path_length: if kind == RouteKind::Straight { 4.9 } else { 6.0 },
            turn_angle: turn,
            turn_start_s: 1.2,
            turn_duration_s: 1.0,
        };
        let mirrored_id = RouteId::ALL[RouteId::ALL.iter().position(|r| *r == id).unwrap_or(0) + 1];
        let mirrored = RouteSpec {
            route_id: mirrored_id,
            start_x: -x,
            initial_heading: -heading,
            turn_angle: -turn,
            ..spec
        };
        routes.push(spec);
        routes.push(mirrored);
    }
    // the mirrored straight heading lands on −atan2(2, −4.5), still within (−π, π]
    debug_assert!(routes.iter().all(|r| r.initial_heading.abs() <= PI));
    routes
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Walking speed (m/s).
    pub speed: f64,
    /// Time by which head yaw leads body heading (s).
    pub head_lead_s: f64,
    /// Peak extra head yaw in the turn direction (rad).
    pub head_overshoot: f64,
    /// Position noise std per axis (m).
    pub noise_pos: f64,
    /// Noise std on each observed yaw (rad).
    pub noise_yaw: f64,
    pub fps: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            speed: 1.2,
            head_lead_s: 0.2,
            head_overshoot: 0.0,
            noise_pos: 0.02,
            noise_yaw: 0.05,
            fps: 30.0,
            duration_s: 5.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn noiseless(self) -> Self {
        SimConfig {
            noise_pos: 0.0,
            noise_yaw: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !pos(self.speed) || !pos(self.fps) || !pos(self.duration_s) {
            return Err(Error::Config("speed, fps and duration_s must be > 0".into()));
        }
        if !nonneg(self.noise_pos) || !nonneg(self.noise_yaw) || !nonneg(self.head_lead_s) {
            return Err(Error::Config("noise stds and head_lead_s must be >= 0".into()));
        }
        if !self.head_overshoot.is_finite() {
            return Err(Error::Config("head_overshoot must be finite".into()));
        }
        Ok(())
    }
}

/// Noise-free quantities behind a simulated track.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    route: RouteSpec,
    speed: f64,
    head_lead_s: f64,
    head_overshoot: f64,
    frame_dt: f64,
    /// Nose position at each frame time.
    pub nose_positions: Vec<Vec3>,
    pub body_heading: Vec<f64>,
    pub head_yaw: Vec<f64>,
}

impl GroundTruth {
    pub fn body_heading_at(&self, t: f64) -> f64 {
        self.route.heading_at(t)
    }

    pub fn head_yaw_at(&self, t: f64) -> f64 {
        self.route.heading_at(t + self.head_lead_s) + self.head_overshoot * self.route.overshoot_at(t + self.head_lead_s)
    }

    /// Nose position at any `t ≥ 0`, including times past the last frame.
    pub fn position_at(&self, t: f64) -> Vec3 {
        let t = t.max(0.0);
        let last = self.nose_positions.len().saturating_sub(1);
        let k = ((t / self.frame_dt).floor() as usize).min(last);
        let t0 = k as f64 * self.frame_dt;
        self.nose_positions[k] + self.floor_displacement(t0, t)
    }

    fn floor_displacement(&self, t0: f64, t1: f64) -> Vec3 {
        let dir = |t: f64| {
            let h = self.route.heading_at(t);
            Vec3::new(h.sin(), 0.0, h.cos())
        };
        let h = (t1 - t0) / SIMPSON_INTERVALS as f64;
        if h == 0.0 {
            return Vec3::ZERO;
        }
        let mut acc = dir(t0) + dir(t1);
        for i in 1..SIMPSON_INTERVALS {
            let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc = acc + weight * dir(t0 + i as f64 * h);
        }
        (self.speed * h / 3.0) * acc
    }

    pub fn route(&self) -> &RouteSpec {
        &self.route
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrack {
    pub track: Track,
    pub truth: GroundTruth,
    /// RNG stream this track drew its noise from.
    pub stream: u64,
}

pub fn simulate_route(route: &RouteSpec, cfg: &SimConfig) -> Result<SimulatedTrack> {
    simulate_route_stream(route, cfg, "01", 1)
}

/// Simulates one recording, drawing noise from `stream` of the seeded generator.
pub fn simulate_route_stream(
    route: &RouteSpec,
    cfg: &SimConfig,
    subject_id: &str,
    stream: u64,
) -> Result<SimulatedTrack> {
    route.validate()?;
    cfg.validate()?;
    let duration = cfg.duration_s.min(route.path_length / cfg.speed);
    let n_frames = (duration * cfg.fps + 1e-9).floor() as usize + 1;
    let frame_dt = 1.0 / cfg.fps;

    let mut truth = GroundTruth {
        route: *route,
        speed: cfg.speed,
        head_lead_s: cfg.head_lead_s,
        head_overshoot: cfg.head_overshoot,
        frame_dt,
        nose_positions: Vec::with_capacity(n_frames),
        body_heading: Vec::with_capacity(n_frames),
        head_yaw: Vec::with_capacity(n_frames),
    };
    let mut pos = Vec3::new(route.start_x, NOSE_Y, route.start_z);
    for k in 0..n_frames {
        let t = k as f64 * frame_dt;
        if k > 0 {
            pos = pos + truth.floor_displacement((k - 1) as f64 * frame_dt, t);
        }
        if pos.x.abs() > ROOM_HALF_WIDTH || pos.z < 0.0 || pos.z > ROOM_DEPTH {
            return Err(Error::Config(format!(
                "route {} leaves the room at t = {t:.3} s ({:.3}, {:.3})",
                route.route_id, pos.x, pos.z
            )));
        }
        truth.nose_positions.push(pos);
        truth.body_heading.push(truth.body_heading_at(t));
        truth.head_yaw.push(truth.head_yaw_at(t));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let pos_noise = Gaussian::new(cfg.noise_pos)?;
    let yaw_noise = Gaussian::new(cfg.noise_yaw)?;
    let waist_offset = Vec3::new(0.0, WAIST_Y - NOSE_Y, 0.0);

    let frames = (0..n_frames)
        .map(|k| {
            let nose = truth.nose_positions[k];
            let nose_obs = nose + pos_noise.vec3(&mut rng);
            let waist_obs = nose + waist_offset + pos_noise.vec3(&mut rng);
            let head = truth.head_yaw[k] + yaw_noise.sample(&mut rng);
            let body = truth.body_heading[k] + yaw_noise.sample(&mut rng);
            Frame {
                t: k as f64 * frame_dt,
                nose_pos: nose_obs,
                nose_q: UnitQuaternion::from_yaw(head),
                waist_pos: waist_obs,
                waist_q: UnitQuaternion::from_yaw(body),
                valid: true,
            }
        })
        .collect();

    let track = Track::new(subject_id, route.route_id, cfg.fps, frames)?;
    Ok(SimulatedTrack { track, truth, stream })
}

struct Gaussian(Option<Normal<f64>>);

impl Gaussian {
    fn new(std: f64) -> Result<Self> {
        if std == 0.0 {
            return Ok(Gaussian(None));
        }
        Normal::new(0.0, std)
            .map(|n| Gaussian(Some(n)))
            .map_err(|e| Error::Config(format!("noise std {std}: {e}")))
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.0.as_ref().map_or(0.0, |n| n.sample(rng))
    }

    fn vec3(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let x = self.sample(rng);
        let y = self.sample(rng);
        let z = self.sample(rng);
        Vec3::new(x, y, z)
    }
}

/// Per-subject walking speeds are drawn uniformly from this interval.
pub const SUBJECT_SPEED_RANGE: (f64, f64) = (1.0, 1.4);

pub fn subject_speeds(n_subjects: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPEED_STREAM);
    let (lo, hi) = SUBJECT_SPEED_RANGE;
    (0..n_subjects).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn subject_label(index: usize) -> String {
    format!("{:02}", index + 1)
}

pub fn track_stream(subject_index: usize, route: RouteId) -> u64 {
    1 + 16 * subject_index as u64 + route.index()
}

/// One track per (subject, route), ordered by subject then route.
pub fn generate_dataset(n_subjects: usize, routes: &[RouteSpec], cfg: &SimConfig) -> Result<Vec<SimulatedTrack>> {
    if n_subjects < 2 {
        return Err(Error::Config(format!(
            "need at least 2 subjects for leave-one-subject-out, got {n_subjects}"
        )));
    }
    if routes.is_empty() {
        return Err(Error::Config("no routes given".into()));
    }
    let speeds = subject_speeds(n_subjects, cfg.seed);
    let mut out = Vec::with_capacity(n_subjects * routes.len());
    for (s, &speed) in speeds.iter().enumerate() {
        let subject_cfg = SimConfig { speed, ..*cfg };
        let label = subject_label(s);
        for route in routes {
            out.push(simulate_route_stream(
                route,
                &subject_cfg,
                &label,
                track_stream(s, route.route_id),
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub subject_id: String,
    pub route_id: RouteId,
    pub speed: f64,
    pub stream: u64,
    pub frames: usize,
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub rng: String,
    pub seed: u64,
    pub n_subjects: usize,
    pub speed_range: (f64, f64),
    pub sim_config: SimConfig,
    pub routes: Vec<RouteSpec>,
    pub tracks: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `s{subject}_R{route}.csv` files plus `manifest.json` into `dir`.
pub fn write_dataset(
    dir: &Path,
    tracks: &[SimulatedTrack],
    n_subjects: usize,
    routes: &[RouteSpec],
    cfg: &SimConfig,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(tracks.len());
    for sim in tracks {
        let file = format!("{}.csv", sim.track.label());
        write_track(&dir.join(&file), &sim.track)?;
        entries.push(ManifestEntry {
            file,
            subject_id: sim.track.subject_id.clone(),
            route_id: sim.track.route_id,
            speed: sim.truth.speed(),
            stream: sim.stream,
            frames: sim.track.frames.len(),
        });
    }
    let manifest = Manifest {
        generator: format!("headpose {}", env!("CARGO_PKG_VERSION")),
        rng: "ChaCha8 (rand_chacha), seed_from_u64(seed), one stream per track".into(),
        seed: cfg.seed,
        n_subjects,
        speed_range: SUBJECT_SPEED_RANGE,
        sim_config: *cfg,
        routes: routes.to_vec(),
        tracks: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}
