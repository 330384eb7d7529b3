//! Per-subcommand config schemas. Every field has a default, so a missing
//! config file (or an empty one) runs the built-in preset; the `--seed`
//! flag overrides the file value.

use beltkit::conveyor_sim::{BeltTrajectory, Skill, WorldConfig};
use beltkit::memory_cell::ReciteConfig;
use beltkit::tracking_control::TrackingSimConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Loads a TOML config, or the type's defaults when no path is given.
pub fn load<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T, String> {
    match path {
        None => Ok(T::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MazeSweepConfig {
    pub seed: u64,
    pub n_m_values: Vec<u32>,
    pub eta_values: Vec<f64>,
    pub demo_counts: Vec<usize>,
    pub seeds_per_cell: usize,
    pub smoothing: f64,
    pub max_steps: usize,
    /// Action-noise level of the KL reference; 0 is the point-mass expert.
    pub kl_reference_eta: f64,
}

impl Default for MazeSweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_m_values: vec![1, 3, 5],
            eta_values: vec![0.0, 0.3, 0.6],
            demo_counts: vec![10, 20, 30, 40, 50],
            seeds_per_cell: 5,
            smoothing: 1e-3,
            max_steps: 200,
            kl_reference_eta: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GpDemoConfig {
    pub seed: u64,
    /// Observation interval, s.
    pub dt: f64,
    pub duration: f64,
    pub noise_std: f64,
    /// Prediction grid refinement relative to the observation interval.
    pub refine: usize,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for GpDemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dt: 0.05,
            duration: 2.0,
            noise_std: 0.0,
            refine: 4,
            length_scale: 0.5,
            signal_variance: 1.0,
            noise_variance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingSweepConfig {
    pub speeds: Vec<f64>,
    pub sim: TrackingSimConfig,
    /// Also bisect for the maximum stable belt speed.
    pub report_max_stable_speed: bool,
}

impl Default for TrackingSweepConfig {
    fn default() -> Self {
        Self {
            speeds: vec![0.2, 0.6],
            sim: TrackingSimConfig::default(),
            report_max_stable_speed: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedSweepConfig {
    pub seed: u64,
    pub skill: Skill,
    pub speeds: Vec<f64>,
    pub episodes: usize,
    pub world: WorldConfig,
}

impl Default for SpeedSweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            skill: Skill::Pick,
            speeds: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            episodes: 100,
            world: WorldConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedTrajectory {
    pub name: String,
    #[serde(flatten)]
    pub trajectory: BeltTrajectory,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionSweepConfig {
    pub seed: u64,
    pub skill: Skill,
    pub episodes: usize,
    pub world: WorldConfig,
    pub trajectories: Vec<NamedTrajectory>,
}

impl Default for MotionSweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            skill: Skill::Pick,
            episodes: 100,
            world: WorldConfig::default(),
            trajectories: vec![
                NamedTrajectory {
                    name: "linear".into(),
                    trajectory: BeltTrajectory::linear(0.1),
                },
                NamedTrajectory {
                    name: "s_curve".into(),
                    trajectory: BeltTrajectory::SCurve {
                        speed: 0.1,
                        amplitude: 0.03,
                        wavelength: 0.5,
                    },
                },
                NamedTrajectory {
                    name: "random_curve".into(),
                    trajectory: BeltTrajectory::RandomCurve {
                        seed: 5,
                        speed: 0.1,
                        smoothness: 0.3,
                    },
                },
            ],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmDemoConfig {
    pub seed: u64,
    pub separation: f64,
    pub noise: f64,
    pub episodes: usize,
}

impl Default for GmmDemoConfig {
    fn default() -> Self {
        Self { seed: 0, separation: 0.2, noise: 0.01, episodes: 200 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryReciteConfig {
    pub recite: ReciteConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub skill: Skill,
    pub world: WorldConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { seed: 0, skill: Skill::Pick, world: WorldConfig::default() }
    }
}
