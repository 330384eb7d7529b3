//! Tracking-action composition and a kinematic end-effector.
//!
//! The effector is a speed- and acceleration-limited point mass with
//! proportional position feedback plus velocity feedforward. The closed
//! loop couples it to the GP state estimator to reproduce the moving-target
//! tracking dynamics: stable below the actuator speed limit, diverging
//! above it.

use crate::geom::{self, Vec3};
use crate::state_estimation::{estimate_velocity, gp_fit, gp_predict, CentroidSample,
    GpHyperparams, HistoryBuffer};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Preset pose the effector keeps relative to the tracked centroid.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingOffsets {
    pub position_offset: Vec3,
    pub orientation_preset: Vec3,
}

impl Default for TrackingOffsets {
    fn default() -> Self {
        Self {
            position_offset: [0.0, 0.0, 0.15],
            orientation_preset: [0.0, 0.0, 0.0],
        }
    }
}

/// The three-part tracking command: position, orientation, feedforward velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackAction {
    pub position: Vec3,
    pub orientation: Vec3,
    pub velocity: Vec3,
}

/// Manipulation-phase offset added on top of the tracking action.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ManipulationOffset {
    pub delta_position: Vec3,
    pub delta_orientation: Vec3,
}

impl ManipulationOffset {
    pub fn combined(&self, other: &ManipulationOffset) -> ManipulationOffset {
        ManipulationOffset {
            delta_position: geom::add(self.delta_position, other.delta_position),
            delta_orientation: geom::add(self.delta_orientation, other.delta_orientation),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectorTarget {
    pub position: Vec3,
    pub orientation: Vec3,
    pub feedforward_velocity: Vec3,
}

#[derive(Clone, Copy, Debug)]
pub struct EffectorState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub orientation: Vec3,
    pub max_speed: f64,
    pub max_accel: f64,
}

impl Default for EffectorState {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            velocity: [0.0; 3],
            orientation: [0.0; 3],
            max_speed: 0.3,
            max_accel: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlGains {
    /// Proportional position gain, 1/s.
    pub kp: f64,
    /// Orientation slew rate limit, rad/s.
    pub max_slew: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self { kp: 4.0, max_slew: 2.0 }
    }
}

/// Summary point of an object's observed 3D points: mean x, mean y, max z.
pub fn top_centroid(points: &[Vec3]) -> Result<Vec3> {
    if points.is_empty() {
        return Err(Error::Input("top_centroid of an empty point set".into()));
    }
    let n = points.len() as f64;
    let sum_x: f64 = points.iter().map(|p| p[0]).sum();
    let sum_y: f64 = points.iter().map(|p| p[1]).sum();
    let max_z = points.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
    Ok([sum_x / n, sum_y / n, max_z])
}

/// Tracking command: hold the preset offsets from the centroid, feed the
/// estimated target velocity forward.
pub fn tracking_action(centroid: Vec3, velocity: Vec3, offsets: &TrackingOffsets) -> TrackAction {
    TrackAction {
        position: geom::add(centroid, offsets.position_offset),
        orientation: offsets.orientation_preset,
        velocity,
    }
}

/// Sums the tracking action with the manipulation offsets into the final
/// effector control target. Orientations add componentwise and wrap into
/// (-pi, pi].
pub fn compose_target(track: &TrackAction, manip: &ManipulationOffset) -> EffectorTarget {
    EffectorTarget {
        position: geom::add(track.position, manip.delta_position),
        orientation: geom::wrap_euler(geom::add(track.orientation, manip.delta_orientation)),
        feedforward_velocity: track.velocity,
    }
}

/// One explicit-Euler step of the effector kinematics.
///
/// Commanded velocity is feedforward plus proportional error feedback,
/// clamped to `max_speed` in norm; the velocity change per step is clamped
/// to `max_accel * dt`; orientation slews toward the target at `max_slew`.
pub fn step_effector(
    state: &EffectorState,
    target: &EffectorTarget,
    gains: &ControlGains,
    dt: f64,
) -> EffectorState {
    assert!(dt > 0.0, "dt must be > 0");
    let error = geom::sub(target.position, state.position);
    let commanded = geom::clamp_norm(
        geom::add(target.feedforward_velocity, geom::scale(error, gains.kp)),
        state.max_speed,
    );
    let dv = geom::clamp_norm(geom::sub(commanded, state.velocity), state.max_accel * dt);
    let velocity = geom::clamp_norm(geom::add(state.velocity, dv), state.max_speed);
    let position = geom::add(state.position, geom::scale(velocity, dt));

    let mut orientation = [0.0; 3];
    for axis in 0..3 {
        let diff = geom::wrap_angle(target.orientation[axis] - state.orientation[axis]);
        let step = diff.clamp(-gains.max_slew * dt, gains.max_slew * dt);
        orientation[axis] = geom::wrap_angle(state.orientation[axis] + step);
    }

    EffectorState {
        position,
        velocity,
        orientation,
        max_speed: state.max_speed,
        max_accel: state.max_accel,
    }
}

/// True iff the most recent contiguous span of duration >= `hold` has all
/// position errors below `tol`.
pub fn is_stable_tracking(error_history: &[(f64, f64)], tol: f64, hold: f64) -> bool {
    assert!(tol > 0.0 && hold > 0.0);
    let Some(&(t_last, _)) = error_history.last() else {
        return false;
    };
    let mut span_start = t_last;
    for &(t, err) in error_history.iter().rev() {
        if err >= tol {
            return false;
        }
        span_start = t;
        if t_last - span_start >= hold {
            return true;
        }
    }
    t_last - span_start >= hold
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingSimConfig {
    pub belt_speed: f64,
    pub duration: f64,
    pub dt: f64,
    /// Standard deviation of the centroid measurement noise, meters.
    pub noise_std: f64,
    pub seed: u64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub gains: ControlGains,
    pub offsets: TrackingOffsets,
    pub gp: GpHyperparams,
    /// GP history window, seconds.
    pub window: f64,
    pub stability_tol: f64,
    pub stability_hold: f64,
}

impl Default for TrackingSimConfig {
    fn default() -> Self {
        Self {
            belt_speed: 0.1,
            duration: 10.0,
            dt: 0.05,
            noise_std: 5e-4,
            seed: 0,
            max_speed: 0.3,
            max_accel: 2.0,
            gains: ControlGains::default(),
            offsets: TrackingOffsets::default(),
            gp: GpHyperparams::default(),
            window: 1.0,
            stability_tol: 5e-3,
            stability_hold: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingTracePoint {
    pub t: f64,
    pub target: Vec3,
    pub position: Vec3,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingTrace {
    pub points: Vec<TrackingTracePoint>,
    pub stable: bool,
    /// First time at which stable tracking was detected, if any.
    pub settle_time: Option<f64>,
    pub steady_error: f64,
}

/// Closed-loop tracking of an object on a straight belt along +x.
///
/// The estimator only sees noisy centroids; the tracking action uses the GP
/// posterior position and its analytic velocity.
pub fn simulate_tracking(config: &TrackingSimConfig) -> TrackingTrace {
    assert!(config.dt > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let object_start: Vec3 = [0.4, 0.0, 0.05];
    // Effector starts at the ideal offset pose for speed 0.
    let mut effector = EffectorState {
        position: geom::add([0.25, 0.1, 0.05], config.offsets.position_offset),
        max_speed: config.max_speed,
        max_accel: config.max_accel,
        ..Default::default()
    };
    let mut history = HistoryBuffer::new();
    let mut errors: Vec<(f64, f64)> = Vec::new();
    let mut points = Vec::new();
    let mut settle_time = None;

    let steps = (config.duration / config.dt).round() as usize;
    for step in 0..steps {
        let t = step as f64 * config.dt;
        let object_pos: Vec3 = [
            object_start[0] + config.belt_speed * t,
            object_start[1],
            object_start[2],
        ];
        let measured: Vec3 = [
            object_pos[0] + config.noise_std * normal(&mut rng),
            object_pos[1] + config.noise_std * normal(&mut rng),
            object_pos[2] + config.noise_std * normal(&mut rng),
        ];
        history
            .push(CentroidSample { time: t, position: measured }, config.window)
            .expect("monotone time base");
        let model = gp_fit(history.samples(), &config.gp).expect("GP fit");
        let (est_pos, _) = gp_predict(&model, t);
        let est_vel = if history.len() >= 2 {
            estimate_velocity(&model, t).expect("velocity")
        } else {
            [0.0; 3]
        };
        let action = tracking_action(est_pos, est_vel, &config.offsets);
        let target = compose_target(&action, &ManipulationOffset::default());

        // Error against the true tracking pose, not the estimate.
        let ideal = geom::add(object_pos, config.offsets.position_offset);
        let error = geom::norm(geom::sub(ideal, effector.position));
        errors.push((t, error));
        if settle_time.is_none()
            && is_stable_tracking(&errors, config.stability_tol, config.stability_hold)
        {
            settle_time = Some(t);
        }
        points.push(TrackingTracePoint { t, target: target.position, position: effector.position, error });

        effector = step_effector(&effector, &target, &config.gains, config.dt);
    }

    let stable = is_stable_tracking(&errors, config.stability_tol, config.stability_hold);
    let steady_error = points.last().map(|p| p.error).unwrap_or(f64::NAN);
    TrackingTrace { points, stable, settle_time, steady_error }
}

/// Box-Muller standard normal draw.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Largest belt speed (0.01 m/s resolution) that still reaches stable
/// tracking within the fixed horizon, found by bisection up to the
/// effector's own speed limit.
pub fn max_stable_speed(base: &TrackingSimConfig) -> f64 {
    let stable_at = |speed: f64| {
        let config = TrackingSimConfig { belt_speed: speed, ..*base };
        simulate_tracking(&config).stable
    };
    if !stable_at(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = base.max_speed;
    if stable_at(hi) {
        return hi;
    }
    while hi - lo > 0.01 {
        let mid = 0.5 * (lo + hi);
        if stable_at(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
