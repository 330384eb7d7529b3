//! Kinematic conveyor-belt world and the track-then-manipulate episode loop.
//!
//! Objects ride parametric belt trajectories; observations are noisy point
//! sets with optional external-view occlusion windows; skills are scripted
//! waypoint sequences in the tracking frame. An episode first reaches
//! stable tracking (phase A), then runs the skill script on top of the
//! tracking action (phase B).

use crate::geom::{self, Vec3};
use crate::seed;
use crate::state_estimation::{estimate_velocity, gp_fit, gp_predict, CentroidSample,
    GpHyperparams, HistoryBuffer};
use crate::tracking_control::{compose_target, is_stable_tracking, normal, step_effector,
    top_centroid, tracking_action, ControlGains, EffectorState, ManipulationOffset,
    TrackingOffsets};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum BeltTrajectory {
    Linear {
        speed: f64,
        direction: [f64; 2],
    },
    SCurve {
        speed: f64,
        amplitude: f64,
        wavelength: f64,
    },
    RandomCurve {
        seed: u64,
        speed: f64,
        /// Correlation length of the lateral displacement, meters of travel.
        smoothness: f64,
    },
}

impl BeltTrajectory {
    pub fn linear(speed: f64) -> Self {
        BeltTrajectory::Linear { speed, direction: [1.0, 0.0] }
    }

    pub fn speed(&self) -> f64 {
        match self {
            BeltTrajectory::Linear { speed, .. }
            | BeltTrajectory::SCurve { speed, .. }
            | BeltTrajectory::RandomCurve { speed, .. } => *speed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speed() < 0.0 {
            return Err(Error::Config("belt speed must be >= 0".into()));
        }
        match self {
            BeltTrajectory::SCurve { amplitude, wavelength, .. } => {
                if *amplitude <= 0.0 || *wavelength <= 0.0 {
                    return Err(Error::Config("S-curve amplitude and wavelength must be > 0".into()));
                }
            }
            BeltTrajectory::RandomCurve { smoothness, .. } => {
                if *smoothness <= 0.0 {
                    return Err(Error::Config("random-curve smoothness must be > 0".into()));
                }
            }
            BeltTrajectory::Linear { direction, .. } => {
                let n = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::Config("linear direction must be a unit vector".into()));
                }
            }
        }
        Ok(())
    }
}

/// Seeded lateral displacement: Catmull-Rom interpolation of knots drawn at
/// `smoothness` spacing along the forward distance.
fn random_curve_lateral(seed: u64, forward: f64, smoothness: f64) -> f64 {
    let cell = (forward / smoothness).floor() as i64;
    let frac = forward / smoothness - cell as f64;
    let knot = |i: i64| -> f64 {
        if i < 0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[i as u64]));
        0.05 * normal(&mut rng)
    };
    let (p0, p1, p2, p3) = (knot(cell - 1), knot(cell), knot(cell + 1), knot(cell + 2));
    let t = frac;
    0.5 * ((2.0 * p1)
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t)
}

/// World position of a point riding `trajectory` from `start` at time `t`.
/// Belt motion does not rotate objects, so the returned yaw is 0.
pub fn object_pose(trajectory: &BeltTrajectory, start: Vec3, t: f64) -> (Vec3, f64) {
    assert!(t >= 0.0);
    let position = match trajectory {
        BeltTrajectory::Linear { speed, direction } => [
            start[0] + speed * t * direction[0],
            start[1] + speed * t * direction[1],
            start[2],
        ],
        BeltTrajectory::SCurve { speed, amplitude, wavelength } => {
            let forward = speed * t;
            [
                start[0] + forward,
                start[1] + amplitude * (2.0 * std::f64::consts::PI * forward / wavelength).sin(),
                start[2],
            ]
        }
        BeltTrajectory::RandomCurve { seed, speed, smoothness } => {
            let forward = speed * t;
            [
                start[0] + forward,
                start[1] + random_curve_lateral(*seed, forward, *smoothness)
                    - random_curve_lateral(*seed, 0.0, *smoothness),
                start[2],
            ]
        }
    };
    (position, 0.0)
}

#[derive(Clone, Debug)]
pub struct SceneObject {
    pub id: u32,
    /// Grasp point in the object frame, relative to the pose position.
    pub grasp_point: Vec3,
    /// Height of the top surface above the pose position.
    pub top_height: f64,
    pub start: Vec3,
    pub yaw: f64,
    pub trajectory: BeltTrajectory,
    /// Non-overlapping, ordered (t_start, t_end) spans where the external
    /// view loses this object.
    pub occlusion_windows: Vec<(f64, f64)>,
}

impl SceneObject {
    fn occluded_at(&self, t: f64) -> bool {
        self.occlusion_windows
            .iter()
            .any(|&(a, b)| t >= a && t < b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gripper {
    Open,
    Closed,
    Holding(u32),
}

#[derive(Clone, Debug)]
pub struct ObjectPoints {
    pub id: u32,
    pub points: Vec<Vec3>,
}

#[derive(Clone, Debug)]
pub struct Observation {
    /// Per object: points, or `None` while occluded.
    pub external: Vec<(u32, Option<Vec<Vec3>>)>,
    /// Wrist view in effector-relative coordinates; never occluded.
    pub wrist: Vec<ObjectPoints>,
}

/// Sampling pattern on an object's top surface: center plus the corners of
/// a 4 cm square.
const TOP_PATTERN: [[f64; 2]; 5] = [
    [0.0, 0.0],
    [0.02, 0.02],
    [0.02, -0.02],
    [-0.02, 0.02],
    [-0.02, -0.02],
];

/// Current world state of the simulation.
pub struct SimState {
    pub time: f64,
    pub objects: Vec<SceneObject>,
    /// World position per object, updated every step.
    pub object_positions: Vec<Vec3>,
    pub object_yaws: Vec<f64>,
    pub effector: EffectorState,
    pub gripper: Gripper,
    pub rng: ChaCha8Rng,
}

/// Noisy top-surface point sets for every object, tagged with instance ids.
pub fn synth_observation(state: &mut SimState, noise_std: f64) -> Observation {
    assert!(noise_std >= 0.0);
    let mut external = Vec::with_capacity(state.objects.len());
    let mut wrist = Vec::with_capacity(state.objects.len());
    for (object, position) in state.objects.iter().zip(&state.object_positions) {
        let top = [position[0], position[1], position[2] + object.top_height];
        let points: Vec<Vec3> = TOP_PATTERN
            .iter()
            .map(|offset| {
                [
                    top[0] + offset[0] + noise_std * normal(&mut state.rng),
                    top[1] + offset[1] + noise_std * normal(&mut state.rng),
                    top[2] + noise_std * normal(&mut state.rng),
                ]
            })
            .collect();
        let visible = !object.occluded_at(state.time);
        external.push((object.id, visible.then(|| points.clone())));
        wrist.push(ObjectPoints {
            id: object.id,
            points: points
                .iter()
                .map(|p| geom::sub(*p, state.effector.position))
                .collect(),
        });
    }
    Observation { external, wrist }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Pick,
    Put,
    Rotate,
    Insert,
}

impl std::fmt::Display for Skill {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Skill::Pick => "pick",
            Skill::Put => "put",
            Skill::Rotate => "rotate",
            Skill::Insert => "insert",
        };
        f.write_str(name)
    }
}

/// One phase of a skill script, holding a manipulation offset in the
/// tracking frame until its completion predicate fires.
#[derive(Clone, Debug)]
pub enum Phase {
    /// Hold `offset` until the effector is within `tol` of the composed
    /// target (and within 0.02 rad of the target yaw when the offset
    /// rotates).
    Move { offset: ManipulationOffset, tol: f64 },
    /// Hold `offset`; close the gripper once the grasp-point error and
    /// relative speed drop below the configured tolerances.
    Grasp { offset: ManipulationOffset },
    /// Hold `offset`; release the held object once within `tol` of the
    /// composed target.
    Release { offset: ManipulationOffset, tol: f64 },
}

impl Phase {
    fn offset(&self) -> &ManipulationOffset {
        match self {
            Phase::Move { offset, .. } | Phase::Grasp { offset } | Phase::Release { offset, .. } => {
                offset
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkillScript {
    pub skill: Skill,
    /// Object the tracking loop follows.
    pub track_target: u32,
    pub phases: Vec<Phase>,
}

/// Maximum manipulation-offset magnitude accepted by script validation.
pub const WORKSPACE_RADIUS: f64 = 0.5;

impl SkillScript {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::InfeasibleScript("script has no phases".into()));
        }
        for (i, phase) in self.phases.iter().enumerate() {
            let magnitude = geom::norm(phase.offset().delta_position);
            if magnitude > WORKSPACE_RADIUS {
                return Err(Error::InfeasibleScript(format!(
                    "phase {i} offset magnitude {magnitude:.3} m exceeds workspace radius"
                )));
            }
            if !geom::is_finite(phase.offset().delta_position) {
                return Err(Error::InfeasibleScript(format!("phase {i} offset not finite")));
            }
        }
        Ok(())
    }
}

/// Success tolerances; the Insert bound is the tight one.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub grasp_pos: f64,
    pub grasp_speed: f64,
    pub lift_height: f64,
    pub put_horizontal: f64,
    pub insert_horizontal: f64,
    /// Yaw error bound for Rotate, radians.
    pub rotate_yaw: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            grasp_pos: 0.01,
            grasp_speed: 0.05,
            lift_height: 0.1,
            put_horizontal: 0.02,
            insert_horizontal: 0.002,
            rotate_yaw: 5.0_f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub trajectory: BeltTrajectory,
    pub noise_std: f64,
    pub dt: f64,
    pub timeout: f64,
    /// Phase A must reach stable tracking before this deadline.
    pub phase_a_timeout: f64,
    /// Objects drifting past this x coordinate leave the workspace.
    pub workspace_x: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub gains: ControlGains,
    pub offsets: TrackingOffsets,
    pub gp: GpHyperparams,
    pub gp_window: f64,
    pub stability_tol: f64,
    pub stability_hold: f64,
    pub tolerances: Tolerances,
    /// Systematic lateral miscalibration applied to manipulation offsets.
    pub lateral_bias: f64,
    /// Goal yaw for the Rotate skill, radians.
    pub target_yaw: f64,
    /// External-view occlusion windows for the tracked object.
    pub occlusion_windows: Vec<(f64, f64)>,
    /// Magnitude of the per-episode start-position jitter.
    pub start_jitter: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            trajectory: BeltTrajectory::linear(0.1),
            noise_std: 0.002,
            dt: 0.05,
            timeout: 20.0,
            phase_a_timeout: 8.0,
            workspace_x: 3.0,
            max_speed: 0.3,
            max_accel: 2.0,
            gains: ControlGains::default(),
            offsets: TrackingOffsets::default(),
            gp: GpHyperparams::default(),
            gp_window: 1.0,
            stability_tol: 5e-3,
            stability_hold: 1.0,
            tolerances: Tolerances::default(),
            lateral_bias: 0.0,
            target_yaw: 45.0_f64.to_radians(),
            occlusion_windows: Vec::new(),
            start_jitter: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    TrackingNeverStable,
    Timeout,
    GraspMissed,
    PlacementMissed,
    RotationMissed,
    ObjectLeftWorkspace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub effector: Vec3,
    pub target: Vec3,
    pub error: f64,
    /// None during phase A, else the active script phase index.
    pub phase: Option<usize>,
    pub holding: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub skill: Skill,
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    pub trace: Vec<TraceRow>,
}

impl EpisodeResult {
    fn failure(skill: Skill, reason: FailureReason, trace: Vec<TraceRow>) -> Self {
        EpisodeResult { skill, success: false, failure_reason: Some(reason), trace }
    }
}

/// Built-in script for a skill, phrased in the tracking frame (the origin
/// sits `position_offset` above the tracked top centroid).
pub fn builtin_script(skill: Skill, world: &WorldConfig) -> SkillScript {
    let down = |z: f64| ManipulationOffset {
        delta_position: [0.0, 0.0, z],
        delta_orientation: [0.0; 3],
    };
    let hover = world.offsets.position_offset[2];
    match skill {
        Skill::Pick => SkillScript {
            skill,
            track_target: 0,
            phases: vec![
                Phase::Move { offset: down(-(hover - 0.05)), tol: 0.01 },
                Phase::Grasp { offset: down(-hover) },
                Phase::Move { offset: down(0.0), tol: 0.01 },
            ],
        },
        Skill::Put => SkillScript {
            skill,
            track_target: 1,
            phases: vec![
                Phase::Move { offset: down(-0.05), tol: 0.01 },
                Phase::Release { offset: down(-0.05), tol: 0.008 },
                Phase::Move { offset: down(0.0), tol: 0.01 },
            ],
        },
        Skill::Insert => SkillScript {
            skill,
            track_target: 1,
            phases: vec![
                Phase::Move { offset: down(-0.05), tol: 0.005 },
                Phase::Release { offset: down(-0.05), tol: 0.003 },
                Phase::Move { offset: down(0.0), tol: 0.01 },
            ],
        },
        Skill::Rotate => SkillScript {
            skill,
            track_target: 0,
            phases: vec![
                Phase::Move { offset: down(-(hover - 0.05)), tol: 0.01 },
                Phase::Grasp { offset: down(-hover) },
                Phase::Move {
                    offset: ManipulationOffset {
                        delta_position: [0.0, 0.0, -(hover - 0.05)],
                        delta_orientation: [0.0, 0.0, world.target_yaw],
                    },
                    tol: 0.01,
                },
                Phase::Release {
                    offset: ManipulationOffset {
                        delta_position: [0.0, 0.0, -(hover - 0.05)],
                        delta_orientation: [0.0, 0.0, world.target_yaw],
                    },
                    tol: 0.01,
                },
            ],
        },
    }
}

fn build_objects(skill: Skill, world: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<SceneObject> {
    let jitter = |rng: &mut ChaCha8Rng| world.start_jitter * (2.0 * rng.gen::<f64>() - 1.0);
    let base: Vec3 = [0.4 + jitter(rng), jitter(rng), 0.05];
    let target = SceneObject {
        id: 0,
        grasp_point: [0.0, 0.0, 0.04],
        top_height: 0.04,
        start: base,
        yaw: 0.0,
        trajectory: world.trajectory.clone(),
        occlusion_windows: world.occlusion_windows.clone(),
    };
    match skill {
        Skill::Pick | Skill::Rotate => vec![target],
        Skill::Put | Skill::Insert => {
            // Held object (id 0) plus the moving container (id 1).
            let container = SceneObject {
                id: 1,
                grasp_point: [0.0; 3],
                top_height: 0.03,
                start: [base[0] + 0.05, base[1], 0.02],
                yaw: 0.0,
                trajectory: world.trajectory.clone(),
                occlusion_windows: world.occlusion_windows.clone(),
            };
            vec![target, container]
        }
    }
}

/// Runs one full episode of `script` in the configured world.
pub fn run_episode(script: &SkillScript, world: &WorldConfig, episode_seed: u64) -> Result<EpisodeResult> {
    script.validate()?;
    world.trajectory.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let objects = build_objects(script.skill, world, &mut rng);
    let track_idx = objects
        .iter()
        .position(|o| o.id == script.track_target)
        .ok_or_else(|| Error::InfeasibleScript("track target not in scene".into()))?;

    let starts_holding = matches!(script.skill, Skill::Put | Skill::Insert);
    let mut state = SimState {
        time: 0.0,
        object_positions: objects.iter().map(|o| o.start).collect(),
        object_yaws: objects.iter().map(|o| o.yaw).collect(),
        objects,
        effector: EffectorState {
            position: geom::add([0.25, 0.1, 0.05], world.offsets.position_offset),
            max_speed: world.max_speed,
            max_accel: world.max_accel,
            ..Default::default()
        },
        gripper: if starts_holding { Gripper::Holding(0) } else { Gripper::Open },
        rng,
    };

    let mut history = HistoryBuffer::new();
    let mut errors: Vec<(f64, f64)> = Vec::new();
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut stable_reached = false;
    let mut phase_idx: Option<usize> = None;
    let mut grasp_z: Option<f64> = None;
    let mut placement_err: Option<f64> = None;
    let mut finished = false;

    let steps = (world.timeout / world.dt).ceil() as usize;
    for step in 0..steps {
        let t = step as f64 * world.dt;
        state.time = t;

        // Belt kinematics; a held object rides the effector grasp frame.
        for i in 0..state.objects.len() {
            if state.gripper == Gripper::Holding(state.objects[i].id) {
                state.object_positions[i] =
                    geom::sub(state.effector.position, state.objects[i].grasp_point);
                state.object_yaws[i] = state.effector.orientation[2];
            } else {
                let (position, _) = object_pose(&state.objects[i].trajectory, state.objects[i].start, t);
                state.object_positions[i] = position;
            }
        }

        if state.object_positions[track_idx][0] > world.workspace_x {
            let reason = if stable_reached {
                FailureReason::ObjectLeftWorkspace
            } else {
                FailureReason::TrackingNeverStable
            };
            return Ok(EpisodeResult::failure(script.skill, reason, trace));
        }

        // Observe and estimate the tracked object.
        let observation = synth_observation(&mut state, world.noise_std);
        let external = &observation.external[track_idx].1;
        let holding_tracked = state.gripper == Gripper::Holding(script.track_target);
        if let Some(points) = external {
            // While holding the tracked object its observed pose just mirrors
            // the effector, so freeze the history and extrapolate instead.
            if !holding_tracked {
                let centroid = top_centroid(points)?;
                history.push(CentroidSample { time: t, position: centroid }, world.gp_window)?;
            }
        }
        if history.is_empty() {
            continue;
        }
        let model = gp_fit(history.samples(), &world.gp)?;
        let first_time = history.samples()[0].time;
        let last_time = history.samples().last().unwrap().time;
        let (estimated, _) = gp_predict(&model, last_time);
        let extrapolating = t - last_time > 0.5 * world.dt;
        // The analytic derivative at the window edge is noise-sensitive, so
        // when coasting through an occlusion (or a grasp, when the tracked
        // object's observations mirror the effector) extrapolate with the
        // secant of the smoothed mean across the window instead.
        let velocity = if history.len() < 2 {
            [0.0; 3]
        } else if extrapolating {
            let (first, _) = gp_predict(&model, first_time);
            geom::scale(geom::sub(estimated, first), 1.0 / (last_time - first_time))
        } else {
            estimate_velocity(&model, last_time)?
        };
        let estimated = geom::add(estimated, geom::scale(velocity, t - last_time));

        let action = tracking_action(estimated, velocity, &world.offsets);
        let mut manip = match phase_idx {
            Some(i) => *script.phases[i].offset(),
            None => ManipulationOffset::default(),
        };
        if phase_idx.is_some() {
            // Lateral = perpendicular to belt travel.
            manip.delta_position[1] += world.lateral_bias;
        }
        let target = compose_target(&action, &manip);

        // True tracking error drives the stability detector.
        let tracked_top = [
            state.object_positions[track_idx][0],
            state.object_positions[track_idx][1],
            state.object_positions[track_idx][2] + state.objects[track_idx].top_height,
        ];
        let ideal = geom::add(tracked_top, world.offsets.position_offset);
        let error = geom::norm(geom::sub(ideal, state.effector.position));
        errors.push((t, error));
        if !stable_reached && is_stable_tracking(&errors, world.stability_tol, world.stability_hold) {
            stable_reached = true;
            phase_idx = Some(0);
        }
        if !stable_reached && t > world.phase_a_timeout {
            return Ok(EpisodeResult::failure(
                script.skill,
                FailureReason::TrackingNeverStable,
                trace,
            ));
        }

        trace.push(TraceRow {
            t,
            effector: state.effector.position,
            target: target.position,
            error,
            phase: phase_idx,
            holding: matches!(state.gripper, Gripper::Holding(_)),
        });

        // Phase progression.
        if let Some(i) = phase_idx {
            if !finished {
                let reach_err = geom::norm(geom::sub(target.position, state.effector.position));
                let yaw_err = geom::wrap_angle(
                    target.orientation[2] - state.effector.orientation[2],
                )
                .abs();
                let advance = match &script.phases[i] {
                    Phase::Move { tol, offset } => {
                        reach_err < *tol
                            && (offset.delta_orientation[2] == 0.0 || yaw_err < 0.02)
                    }
                    Phase::Grasp { .. } => {
                        let object = &state.objects[track_idx];
                        let grasp_world = geom::add(
                            state.object_positions[track_idx],
                            object.grasp_point,
                        );
                        let pos_err =
                            geom::norm(geom::sub(grasp_world, state.effector.position));
                        let object_velocity = velocity_of(
                            &object.trajectory,
                            object.start,
                            t,
                            world.dt,
                        );
                        let rel_speed = geom::norm(geom::sub(
                            state.effector.velocity,
                            object_velocity,
                        ));
                        if pos_err < world.tolerances.grasp_pos
                            && rel_speed < world.tolerances.grasp_speed
                        {
                            state.gripper = Gripper::Holding(object.id);
                            grasp_z = Some(state.effector.position[2]);
                            true
                        } else {
                            false
                        }
                    }
                    Phase::Release { tol, .. } => {
                        if reach_err < *tol {
                            if let Gripper::Holding(id) = state.gripper {
                                let held_idx = state
                                    .objects
                                    .iter()
                                    .position(|o| o.id == id)
                                    .expect("held object in scene");
                                let held = state.object_positions[held_idx];
                                let container = state.object_positions[track_idx];
                                placement_err = Some(
                                    ((held[0] - container[0]).powi(2)
                                        + (held[1] - container[1]).powi(2))
                                    .sqrt(),
                                );
                                // Let the released object ride the belt onward
                                // from its drop point: shift its start so the
                                // trajectory passes through `held` at time t.
                                let (current, _) = object_pose(
                                    &state.objects[held_idx].trajectory,
                                    state.objects[held_idx].start,
                                    t,
                                );
                                let displacement =
                                    geom::sub(current, state.objects[held_idx].start);
                                state.objects[held_idx].start =
                                    geom::sub(held, displacement);
                                state.gripper = Gripper::Open;
                            }
                            true
                        } else {
                            false
                        }
                    }
                };
                if advance {
                    if i + 1 < script.phases.len() {
                        phase_idx = Some(i + 1);
                    } else {
                        finished = true;
                    }
                }
            }
        }

        if finished {
            return Ok(judge(script.skill, world, &state, grasp_z, placement_err, trace));
        }

        state.effector = step_effector(&state.effector, &target, &world.gains, world.dt);
    }

    let reason = if stable_reached {
        FailureReason::Timeout
    } else {
        FailureReason::TrackingNeverStable
    };
    Ok(EpisodeResult::failure(script.skill, reason, trace))
}

fn velocity_of(trajectory: &BeltTrajectory, start: Vec3, t: f64, dt: f64) -> Vec3 {
    let h = dt.min(1e-3);
    let (ahead, _) = object_pose(trajectory, start, t + h);
    let (here, _) = object_pose(trajectory, start, t);
    geom::scale(geom::sub(ahead, here), 1.0 / h)
}

fn judge(
    skill: Skill,
    world: &WorldConfig,
    state: &SimState,
    grasp_z: Option<f64>,
    placement_err: Option<f64>,
    trace: Vec<TraceRow>,
) -> EpisodeResult {
    match skill {
        Skill::Pick => {
            let held = matches!(state.gripper, Gripper::Holding(_));
            let lifted = grasp_z
                .map(|z| state.effector.position[2] - z >= world.tolerances.lift_height)
                .unwrap_or(false);
            if held && lifted {
                EpisodeResult { skill, success: true, failure_reason: None, trace }
            } else {
                EpisodeResult::failure(skill, FailureReason::GraspMissed, trace)
            }
        }
        Skill::Put | Skill::Insert => {
            let tol = if skill == Skill::Put {
                world.tolerances.put_horizontal
            } else {
                world.tolerances.insert_horizontal
            };
            match placement_err {
                Some(err) if err < tol => {
                    EpisodeResult { skill, success: true, failure_reason: None, trace }
                }
                _ => EpisodeResult::failure(skill, FailureReason::PlacementMissed, trace),
            }
        }
        Skill::Rotate => {
            let yaw = state.object_yaws[0];
            let err = geom::wrap_angle(yaw - world.target_yaw).abs();
            if err < world.tolerances.rotate_yaw && state.gripper == Gripper::Open {
                EpisodeResult { skill, success: true, failure_reason: None, trace }
            } else {
                EpisodeResult::failure(skill, FailureReason::RotationMissed, trace)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRateRow {
    pub skill: Skill,
    pub variant: String,
    pub speed: f64,
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
}

/// Success rate of a skill across belt speeds, with per-episode seeds
/// derived from (base seed, speed index, episode index).
pub fn speed_sweep(
    skill: Skill,
    base_world: &WorldConfig,
    speeds: &[f64],
    episodes: usize,
    base_seed: u64,
) -> Result<Vec<SweepRateRow>> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    speeds
        .iter()
        .enumerate()
        .map(|(speed_idx, &speed)| {
            let world = WorldConfig {
                trajectory: BeltTrajectory::linear(speed),
                ..base_world.clone()
            };
            let script = builtin_script(skill, &world);
            let successes = (0..episodes)
                .into_par_iter()
                .map(|episode| {
                    let episode_seed =
                        seed::derive(base_seed, &[speed_idx as u64, episode as u64]);
                    run_episode(&script, &world, episode_seed).map(|r| r.success as usize)
                })
                .try_reduce(|| 0, |a, b| Ok(a + b))?;
            Ok(SweepRateRow {
                skill,
                variant: "linear".into(),
                speed,
                episodes,
                successes,
                rate: successes as f64 / episodes as f64,
            })
        })
        .collect()
}

/// Success rate per trajectory variant at the variants' own speeds.
pub fn trajectory_generalization(
    skill: Skill,
    base_world: &WorldConfig,
    trajectories: &[(String, BeltTrajectory)],
    episodes: usize,
    base_seed: u64,
) -> Result<Vec<SweepRateRow>> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    trajectories
        .iter()
        .enumerate()
        .map(|(variant_idx, (name, trajectory))| {
            let world = WorldConfig {
                trajectory: trajectory.clone(),
                ..base_world.clone()
            };
            let script = builtin_script(skill, &world);
            let successes = (0..episodes)
                .into_par_iter()
                .map(|episode| {
                    let episode_seed =
                        seed::derive(base_seed, &[100 + variant_idx as u64, episode as u64]);
                    run_episode(&script, &world, episode_seed).map(|r| r.success as usize)
                })
                .try_reduce(|| 0, |a, b| Ok(a + b))?;
            Ok(SweepRateRow {
                skill,
                variant: name.clone(),
                speed: trajectory.speed(),
                episodes,
                successes,
                rate: successes as f64 / episodes as f64,
            })
        })
        .collect()
}
