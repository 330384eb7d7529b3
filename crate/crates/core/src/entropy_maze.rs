//! The MazeNav grid task: a 5x5 maze with a fixed bottom-right goal, a
//! deterministic expert, demonstration generation under two entropy knobs
//! (the nuisance range `n_m_max` and the action-noise rate `eta`), a
//! frequency-count student policy, KL-divergence estimation, and the
//! closed-form entropy calculators.

use crate::seed;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;

pub const GRID: usize = 5;
pub const GOAL: (usize, usize) = (4, 4);
/// Non-goal cells in the grid.
pub const NON_GOAL_CELLS: usize = GRID * GRID - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MazeAction {
    Up,
    Down,
    Left,
    Right,
}

impl MazeAction {
    /// Fixed iteration / tie-break order.
    pub const ALL: [MazeAction; 4] = [
        MazeAction::Up,
        MazeAction::Down,
        MazeAction::Left,
        MazeAction::Right,
    ];

    pub fn index(self) -> usize {
        match self {
            MazeAction::Up => 0,
            MazeAction::Down => 1,
            MazeAction::Left => 2,
            MazeAction::Right => 3,
        }
    }

    fn delta(self) -> (i32, i32) {
        match self {
            MazeAction::Up => (-1, 0),
            MazeAction::Down => (1, 0),
            MazeAction::Left => (0, -1),
            MazeAction::Right => (0, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MazeState {
    pub row: usize,
    pub col: usize,
    /// Action-irrelevant observation variable in `[1, n_m_max]`.
    pub nuisance: u32,
}

/// Deterministic cell-to-action map; the goal cell carries no action.
#[derive(Clone, Debug)]
pub struct ExpertPolicy {
    actions: [[Option<MazeAction>; GRID]; GRID],
}

impl ExpertPolicy {
    pub fn action(&self, row: usize, col: usize) -> Option<MazeAction> {
        self.actions[row][col]
    }
}

/// The fixed expert: Down until the bottom row, then Right.
pub fn canonical_expert() -> ExpertPolicy {
    let mut actions = [[None; GRID]; GRID];
    for (row, row_actions) in actions.iter_mut().enumerate() {
        for (col, slot) in row_actions.iter_mut().enumerate() {
            if (row, col) == GOAL {
                continue;
            }
            *slot = Some(if row < GRID - 1 {
                MazeAction::Down
            } else {
                MazeAction::Right
            });
        }
    }
    ExpertPolicy { actions }
}

#[derive(Clone, Debug)]
pub struct DemoConfig {
    pub n_m_max: u32,
    pub eta: f64,
    pub num_trajectories: usize,
    pub seed: u64,
    pub max_steps: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            n_m_max: 1,
            eta: 0.0,
            num_trajectories: 10,
            seed: 0,
            max_steps: 200,
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must be in [0, 1), got {}", self.eta)));
        }
        if self.n_m_max < 1 {
            return Err(Error::Config("n_m_max must be >= 1".into()));
        }
        if self.num_trajectories < 1 {
            return Err(Error::Config("num_trajectories must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be > 0".into()));
        }
        Ok(())
    }
}

pub type Trajectory = Vec<(MazeState, MazeAction)>;

#[derive(Clone, Debug)]
pub struct MazeDemoSet {
    pub trajectories: Vec<Trajectory>,
    pub config: DemoConfig,
}

/// Rolls out `num_trajectories` demonstrations from uniformly random
/// non-goal start cells. The nuisance variable is resampled every step;
/// with probability `eta` the recorded action is uniform over all four
/// actions instead of the expert's. Moves that would leave the maze are
/// recorded as taken but do not change the position.
///
/// The RNG consumption per trajectory is fixed, so for one seed a run with
/// more trajectories extends a run with fewer (prefix property).
pub fn generate_demos(expert: &ExpertPolicy, config: &DemoConfig) -> Result<MazeDemoSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trajectories = Vec::with_capacity(config.num_trajectories);
    for _ in 0..config.num_trajectories {
        let start = rng.gen_range(0..NON_GOAL_CELLS);
        let (mut row, mut col) = (start / GRID, start % GRID);
        debug_assert!((row, col) != GOAL);
        let mut steps: Trajectory = Vec::new();
        while (row, col) != GOAL && steps.len() < config.max_steps {
            let nuisance = rng.gen_range(1..=config.n_m_max);
            let noise_draw: f64 = rng.gen();
            let action = if noise_draw < config.eta {
                MazeAction::ALL[rng.gen_range(0..4)]
            } else {
                expert.action(row, col).expect("non-goal cell has an expert action")
            };
            steps.push((MazeState { row, col, nuisance }, action));
            let (dr, dc) = action.delta();
            let (nr, nc) = (row as i32 + dr, col as i32 + dc);
            if (0..GRID as i32).contains(&nr) && (0..GRID as i32).contains(&nc) {
                row = nr as usize;
                col = nc as usize;
            }
        }
        trajectories.push(steps);
    }
    Ok(MazeDemoSet {
        trajectories,
        config: config.clone(),
    })
}

/// Frequency-count policy over full observations (cell + nuisance).
/// Unseen observations fall back to the uniform distribution.
#[derive(Clone, Debug, Default)]
pub struct StudentPolicy {
    counts: HashMap<MazeState, [u64; 4]>,
}

impl StudentPolicy {
    /// Raw per-action visit counts for one observation.
    pub fn counts(&self, state: &MazeState) -> [u64; 4] {
        self.counts.get(state).copied().unwrap_or([0; 4])
    }

    /// Action probabilities with additive pseudocount `smoothing` per
    /// action. Unseen observations are exactly uniform regardless of
    /// smoothing.
    pub fn probs(&self, state: &MazeState, smoothing: f64) -> [f64; 4] {
        match self.counts.get(state) {
            None => [0.25; 4],
            Some(counts) => {
                let total: u64 = counts.iter().sum();
                let denom = total as f64 + 4.0 * smoothing;
                [
                    (counts[0] as f64 + smoothing) / denom,
                    (counts[1] as f64 + smoothing) / denom,
                    (counts[2] as f64 + smoothing) / denom,
                    (counts[3] as f64 + smoothing) / denom,
                ]
            }
        }
    }

    /// Per-cell counts marginalized over the nuisance variable.
    pub fn cell_counts(&self, row: usize, col: usize) -> [u64; 4] {
        let mut acc = [0u64; 4];
        for (state, counts) in &self.counts {
            if state.row == row && state.col == col {
                for (a, c) in acc.iter_mut().zip(counts) {
                    *a += c;
                }
            }
        }
        acc
    }
}

pub fn fit_student(demos: &MazeDemoSet) -> Result<StudentPolicy> {
    if demos.trajectories.is_empty() {
        return Err(Error::Input("demo set is empty".into()));
    }
    let mut counts: HashMap<MazeState, [u64; 4]> = HashMap::new();
    for trajectory in &demos.trajectories {
        for (state, action) in trajectory {
            counts.entry(*state).or_default()[action.index()] += 1;
        }
    }
    Ok(StudentPolicy { counts })
}

/// The distribution the demonstrations are drawn from at one state:
/// `p(a) = eta/4 + (1 - eta) * [a == expert(state)]`.
pub fn generating_distribution(expert: &ExpertPolicy, eta: f64, state: &MazeState) -> [f64; 4] {
    let expert_action = expert
        .action(state.row, state.col)
        .expect("generating distribution queried at the goal cell");
    let mut p = [eta / 4.0; 4];
    p[expert_action.index()] += 1.0 - eta;
    // Force exact normalization against floating-point slack.
    let sum: f64 = p.iter().sum();
    p[expert_action.index()] += 1.0 - sum;
    p
}

/// Mean KL divergence, over all non-goal (cell, nuisance) observations
/// weighted uniformly, between the eta-mixed reference distribution
/// (`eta_ref = 0` gives the point-mass expert) and the smoothed student.
pub fn kl_to_student(
    expert: &ExpertPolicy,
    eta_ref: f64,
    n_m_max: u32,
    student: &StudentPolicy,
    smoothing: f64,
) -> Result<f64> {
    if smoothing <= 0.0 {
        return Err(Error::Input("smoothing must be > 0".into()));
    }
    let mut total = 0.0;
    let mut states = 0usize;
    for row in 0..GRID {
        for col in 0..GRID {
            if (row, col) == GOAL {
                continue;
            }
            for nuisance in 1..=n_m_max {
                let state = MazeState { row, col, nuisance };
                let p = generating_distribution(expert, eta_ref, &state);
                let q = student.probs(&state, smoothing);
                let mut kl = 0.0;
                for (pi, qi) in p.iter().zip(&q) {
                    if *pi > 0.0 {
                        kl += pi * (pi / qi).ln();
                    }
                }
                total += kl;
                states += 1;
            }
        }
    }
    Ok(total / states as f64)
}

/// Fraction of the 24 non-goal cells whose nuisance-marginalized argmax
/// action matches the expert. Ties break toward the first action in the
/// fixed order.
pub fn argmax_match_fraction(expert: &ExpertPolicy, student: &StudentPolicy) -> f64 {
    let mut matches = 0usize;
    for row in 0..GRID {
        for col in 0..GRID {
            if (row, col) == GOAL {
                continue;
            }
            let counts = student.cell_counts(row, col);
            // First action in the fixed order wins ties.
            let mut argmax = MazeAction::Up;
            for action in MazeAction::ALL {
                if counts[action.index()] > counts[argmax.index()] {
                    argmax = action;
                }
            }
            if Some(argmax) == expert.action(row, col) {
                matches += 1;
            }
        }
    }
    matches as f64 / NON_GOAL_CELLS as f64
}

/// Entropy (nats) of the uniform observation distribution over the 24
/// non-goal cells crossed with the nuisance range.
pub fn observation_entropy(n_m_max: u32) -> f64 {
    assert!(n_m_max >= 1);
    ((NON_GOAL_CELLS as f64) * n_m_max as f64).ln()
}

/// Entropy (nats) of the eta-mixed action distribution at any state.
pub fn action_entropy_given_obs(eta: f64) -> f64 {
    assert!((0.0..=1.0).contains(&eta));
    let p_expert = 1.0 - 3.0 * eta / 4.0;
    let p_other = eta / 4.0;
    let mut h = 0.0;
    if p_expert > 0.0 {
        h -= p_expert * p_expert.ln();
    }
    if p_other > 0.0 {
        h -= 3.0 * p_other * p_other.ln();
    }
    h
}

/// One sweep cell: a (n_m_max, eta, demo_count) combination.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub n_m_values: Vec<u32>,
    pub eta_values: Vec<f64>,
    pub demo_counts: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub seeds: usize,
    pub base_seed: u64,
    pub smoothing: f64,
    pub max_steps: usize,
    /// Reference distribution for the KL: `eta` of the mixture. 0 compares
    /// against the point-mass expert.
    pub kl_reference_eta: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            seeds: 5,
            base_seed: 0,
            smoothing: 1e-3,
            max_steps: 200,
            kl_reference_eta: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n_m_max: u32,
    pub eta: f64,
    pub demo_count: usize,
    pub seed: u64,
    pub kl_nats: f64,
    pub match_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepAggRow {
    pub n_m_max: u32,
    pub eta: f64,
    pub demo_count: usize,
    pub kl_mean: f64,
    pub kl_std: f64,
    pub match_mean: f64,
    pub match_std: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SweepResults {
    pub raw: Vec<SweepRow>,
    pub agg: Vec<SweepAggRow>,
    /// Human-readable descriptions of cells that failed validation.
    pub errors: Vec<String>,
}

/// Runs the full grid. The per-run seed depends on (base seed, n_m index,
/// eta index, seed index) but not on the demo count, so demo sets at
/// increasing counts are nested per seed (common random numbers); this
/// makes the KL-vs-demo-count curves strictly monotone per seed instead of
/// only in expectation.
pub fn run_entropy_sweep(grid: &SweepGrid, opts: &SweepOptions) -> SweepResults {
    let expert = canonical_expert();
    let mut cells = Vec::new();
    for (i_nm, &n_m_max) in grid.n_m_values.iter().enumerate() {
        for (i_eta, &eta) in grid.eta_values.iter().enumerate() {
            for &demo_count in &grid.demo_counts {
                cells.push((i_nm, n_m_max, i_eta, eta, demo_count));
            }
        }
    }

    let per_cell: Vec<std::result::Result<Vec<SweepRow>, String>> = cells
        .par_iter()
        .map(|&(i_nm, n_m_max, i_eta, eta, demo_count)| {
            let mut rows = Vec::with_capacity(opts.seeds);
            for seed_idx in 0..opts.seeds {
                let run_seed =
                    seed::derive(opts.base_seed, &[i_nm as u64, i_eta as u64, seed_idx as u64]);
                let config = DemoConfig {
                    n_m_max,
                    eta,
                    num_trajectories: demo_count,
                    seed: run_seed,
                    max_steps: opts.max_steps,
                };
                let demos = generate_demos(&expert, &config).map_err(|e| {
                    format!("cell (n_m={n_m_max}, eta={eta}, demos={demo_count}): {e}")
                })?;
                let student = fit_student(&demos).map_err(|e| e.to_string())?;
                let kl = kl_to_student(
                    &expert,
                    opts.kl_reference_eta,
                    n_m_max,
                    &student,
                    opts.smoothing,
                )
                .map_err(|e| e.to_string())?;
                let match_fraction = argmax_match_fraction(&expert, &student);
                rows.push(SweepRow {
                    n_m_max,
                    eta,
                    demo_count,
                    seed: run_seed,
                    kl_nats: kl,
                    match_fraction,
                });
            }
            Ok(rows)
        })
        .collect();

    let mut results = SweepResults::default();
    for cell in per_cell {
        match cell {
            Ok(rows) => {
                let (kl_mean, kl_std) = mean_std(rows.iter().map(|r| r.kl_nats));
                let (match_mean, match_std) = mean_std(rows.iter().map(|r| r.match_fraction));
                let first = &rows[0];
                results.agg.push(SweepAggRow {
                    n_m_max: first.n_m_max,
                    eta: first.eta,
                    demo_count: first.demo_count,
                    kl_mean,
                    kl_std,
                    match_mean,
                    match_std,
                });
                results.raw.extend(rows);
            }
            Err(msg) => results.errors.push(msg),
        }
    }
    results
}

/// Mean and sample standard deviation (n-1 denominator; 0 for n < 2).
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let values: Vec<f64> = values.collect();
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
