//! Gauss-Markov node mobility with reflecting area boundaries.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A 2-D point or displacement, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Vec2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Rectangular simulation area `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }
}

/// Per-episode mobility configuration shared by all nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityParams {
    /// Asymptotic mean speed, m/slot.
    pub mean_speed: f64,
    /// Memory level in `[0, 1]`; 1 keeps the previous velocity, 0 jumps to the mean.
    pub memory: f64,
    /// Std-dev of the speed noise term.
    pub sigma_speed: f64,
    /// Std-dev of the heading noise term, radians.
    pub sigma_heading: f64,
    pub area: Area,
}

/// Kinematic state of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub position: Vec2,
    /// Current speed, m/slot; never negative.
    pub speed: f64,
    /// Current heading, radians.
    pub heading: f64,
    /// Per-node asymptotic mean heading, radians.
    pub mean_heading: f64,
}

/// One Gauss-Markov step:
///
/// ```text
/// s' = m*s + (1-m)*s_mean + sqrt(1-m^2) * sigma_s * w1
/// h' = m*h + (1-m)*h_mean + sqrt(1-m^2) * sigma_h * w2
/// ```
///
/// with `w1, w2` independent standard normal draws, followed by a position
/// advance of `(s'*cos h', s'*sin h')` and reflection at the area walls
/// (both the position and the heading are mirrored). Speed is clamped at 0.
pub fn step_mobility<R: Rng>(
    state: &MobilityState,
    params: &MobilityParams,
    rng: &mut R,
) -> MobilityState {
    let w1: f64 = rng.sample(StandardNormal);
    let w2: f64 = rng.sample(StandardNormal);
    step_mobility_with_noise(state, params, w1, w2)
}

/// Deterministic core of [`step_mobility`]; the noise draws are explicit so
/// tests can pin them.
pub fn step_mobility_with_noise(
    state: &MobilityState,
    params: &MobilityParams,
    w1: f64,
    w2: f64,
) -> MobilityState {
    let m = params.memory;
    let noise_scale = (1.0 - m * m).max(0.0).sqrt();

    let speed = (m * state.speed
        + (1.0 - m) * params.mean_speed
        + noise_scale * params.sigma_speed * w1)
        .max(0.0);
    let mut heading = m * state.heading
        + (1.0 - m) * state.mean_heading
        + noise_scale * params.sigma_heading * w2;

    let mut x = state.position.x + speed * heading.cos();
    let mut y = state.position.y + speed * heading.sin();

    // Reflect at the walls; mirroring x flips cos (h -> pi - h) and
    // mirroring y flips sin (h -> -h). The mean heading is mirrored too,
    // otherwise its pull pins reflected nodes against the boundary.
    let mut mean_heading = state.mean_heading;
    let (w, h) = (params.area.width, params.area.height);
    loop {
        if x < 0.0 {
            x = -x;
            heading = std::f64::consts::PI - heading;
            mean_heading = std::f64::consts::PI - mean_heading;
        } else if x > w {
            x = 2.0 * w - x;
            heading = std::f64::consts::PI - heading;
            mean_heading = std::f64::consts::PI - mean_heading;
        } else if y < 0.0 {
            y = -y;
            heading = -heading;
            mean_heading = -mean_heading;
        } else if y > h {
            y = 2.0 * h - y;
            heading = -heading;
            mean_heading = -mean_heading;
        } else {
            break;
        }
    }

    // Angles stay unwrapped so the memory blend never crosses a branch cut
    // (reflections move heading and mean together). Re-center both by whole
    // turns when they drift, which changes nothing modulo 2*pi.
    let two_pi = 2.0 * std::f64::consts::PI;
    if mean_heading.abs() > 2.0 * two_pi {
        let turns = (mean_heading / two_pi).round() * two_pi;
        heading -= turns;
        mean_heading -= turns;
    }

    MobilityState {
        position: Vec2::new(x, y),
        speed,
        heading,
        mean_heading,
    }
}
