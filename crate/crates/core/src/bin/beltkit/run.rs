//! Subcommand execution: resolve the config, write the run manifest, run the
//! experiment on the requested worker pool, and emit CSV artifacts.

use crate::config::{self, EpisodeConfig, GmmDemoConfig, GpDemoConfig, MazeSweepConfig,
    MemoryReciteConfig, MotionSweepConfig, SpeedSweepConfig, TrackingSweepConfig};
use crate::{CommonArgs, SubcommandKind};
use beltkit::conveyor_sim::{self, builtin_script, run_episode, BeltTrajectory, WorldConfig};
use beltkit::entropy_maze::{run_entropy_sweep, SweepGrid, SweepOptions};
use beltkit::memory_cell::train_recite;
use beltkit::mixture_policy::{mode_action, two_target_demo};
use beltkit::state_estimation::{estimate_velocity, gp_fit, gp_predict, CentroidSample,
    GpHyperparams};
use beltkit::tracking_control::{max_stable_speed, normal, simulate_tracking, TrackingSimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

type RunResult = Result<(), String>;

pub fn dispatch(kind: SubcommandKind, args: &CommonArgs) -> RunResult {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| format!("cannot build worker pool: {e}"))?;
    pool.install(|| match kind {
        SubcommandKind::MazeSweep => maze_sweep(args),
        SubcommandKind::GpDemo => gp_demo(args),
        SubcommandKind::TrackingSweep => tracking_sweep(args),
        SubcommandKind::SpeedSweep => speed_sweep(args),
        SubcommandKind::MotionSweep => motion_sweep(args),
        SubcommandKind::GmmDemo => gmm_demo(args),
        SubcommandKind::MemoryRecite => memory_recite(args),
        SubcommandKind::Episode => episode(args),
    })
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    subcommand: &'a str,
    version: &'a str,
    base_seed: u64,
    out_dir: String,
    started_unix_s: u64,
    config: &'a C,
}

/// Writes `manifest.json` into the output directory; called before any
/// result file so a run can always be reproduced from its manifest.
fn write_manifest<C: Serialize>(args: &CommonArgs, name: &str, base_seed: u64, cfg: &C) -> RunResult {
    std::fs::create_dir_all(&args.out)
        .map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    let manifest = RunManifest {
        subcommand: name,
        version: env!("CARGO_PKG_VERSION"),
        base_seed,
        out_dir: args.out.display().to_string(),
        started_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())?;
    write_file(&args.out, "manifest.json", &json)
}

fn write_file(out: &Path, name: &str, content: &str) -> RunResult {
    let path = out.join(name);
    std::fs::write(&path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn maze_sweep(args: &CommonArgs) -> RunResult {
    let mut cfg: MazeSweepConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    write_manifest(args, "maze-sweep", cfg.seed, &cfg)?;

    let grid = SweepGrid {
        n_m_values: cfg.n_m_values.clone(),
        eta_values: cfg.eta_values.clone(),
        demo_counts: cfg.demo_counts.clone(),
    };
    let opts = SweepOptions {
        seeds: cfg.seeds_per_cell,
        base_seed: cfg.seed,
        smoothing: cfg.smoothing,
        max_steps: cfg.max_steps,
        kl_reference_eta: cfg.kl_reference_eta,
    };
    let results = run_entropy_sweep(&grid, &opts);

    let mut raw = String::from("n_m_max,eta,demo_count,seed,kl_nats,match_fraction\n");
    for r in &results.raw {
        writeln!(raw, "{},{},{},{},{},{}", r.n_m_max, r.eta, r.demo_count, r.seed, r.kl_nats, r.match_fraction).unwrap();
    }
    write_file(&args.out, "maze_raw.csv", &raw)?;

    let mut agg = String::from("n_m_max,eta,demo_count,kl_mean,kl_std,match_mean,match_std\n");
    for r in &results.agg {
        writeln!(agg, "{},{},{},{},{},{},{}", r.n_m_max, r.eta, r.demo_count, r.kl_mean, r.kl_std, r.match_mean, r.match_std).unwrap();
    }
    write_file(&args.out, "maze_agg.csv", &agg)?;

    if !results.errors.is_empty() {
        for error in &results.errors {
            eprintln!("cell failed: {error}");
        }
        return Err(format!("{} sweep cell(s) failed", results.errors.len()));
    }
    Ok(())
}

fn gp_demo(args: &CommonArgs) -> RunResult {
    let mut cfg: GpDemoConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.refine == 0 || cfg.dt <= 0.0 || cfg.duration <= cfg.dt {
        return Err("gp-demo needs refine >= 1 and 0 < dt < duration".into());
    }
    write_manifest(args, "gp-demo", cfg.seed, &cfg)?;

    // Smooth 1-D benchmark path: linear drift plus a sine ripple.
    let x_true = |t: f64| 0.4 + 0.05 * t + 0.02 * (2.0 * std::f64::consts::PI * t / 1.3).sin();
    let vx_true = |t: f64| {
        0.05 + 0.02 * (2.0 * std::f64::consts::PI / 1.3)
            * (2.0 * std::f64::consts::PI * t / 1.3).cos()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = (cfg.duration / cfg.dt).floor() as usize + 1;
    let samples: Vec<CentroidSample> = (0..n)
        .map(|i| {
            let t = i as f64 * cfg.dt;
            CentroidSample {
                time: t,
                position: [x_true(t) + cfg.noise_std * normal(&mut rng), 0.0, 0.0],
            }
        })
        .collect();
    let hyper = GpHyperparams {
        length_scale: cfg.length_scale,
        signal_variance: cfg.signal_variance,
        noise_variance: cfg.noise_variance,
    };
    let model = gp_fit(&samples, &hyper).map_err(|e| e.to_string())?;

    let mut csv = String::from("t,x_true,x_pred,x_var,vx_true,vx_pred\n");
    let fine = (n - 1) * cfg.refine;
    for i in 0..=fine {
        let t = i as f64 * cfg.dt / cfg.refine as f64;
        let (mean, var) = gp_predict(&model, t);
        let velocity = estimate_velocity(&model, t).map_err(|e| e.to_string())?;
        writeln!(csv, "{},{},{},{},{},{}", t, x_true(t), mean[0], var[0], vx_true(t), velocity[0]).unwrap();
    }
    write_file(&args.out, "gp_demo.csv", &csv)
}

fn tracking_sweep(args: &CommonArgs) -> RunResult {
    let mut cfg: TrackingSweepConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if cfg.speeds.is_empty() {
        return Err("tracking-sweep needs at least one belt speed".into());
    }
    write_manifest(args, "tracking-sweep", cfg.sim.seed, &cfg)?;

    let mut sweep = String::from("belt_speed,stable,settle_time_s,steady_err_m\n");
    for (i, &speed) in cfg.speeds.iter().enumerate() {
        let sim = TrackingSimConfig { belt_speed: speed, ..cfg.sim };
        let trace = simulate_tracking(&sim);
        let settle = trace.settle_time.map(|t| t.to_string()).unwrap_or_default();
        writeln!(sweep, "{},{},{},{}", speed, trace.stable, settle, trace.steady_error).unwrap();

        let mut rows = String::from("t,target_x,target_y,target_z,pos_x,pos_y,pos_z,err_norm\n");
        for p in &trace.points {
            writeln!(rows, "{},{},{},{},{},{},{},{}", p.t, p.target[0], p.target[1], p.target[2], p.position[0], p.position[1], p.position[2], p.error).unwrap();
        }
        write_file(&args.out, &format!("tracking_trace_{i}.csv"), &rows)?;
    }
    write_file(&args.out, "tracking_sweep.csv", &sweep)?;

    if cfg.report_max_stable_speed {
        let best = max_stable_speed(&cfg.sim);
        write_file(&args.out, "max_stable_speed.csv", &format!("max_stable_speed_mps\n{best}\n"))?;
    }
    Ok(())
}

fn rate_csv(rows: &[conveyor_sim::SweepRateRow]) -> String {
    let mut csv = String::from("skill,variant,speed,episodes,successes,rate\n");
    for r in rows {
        writeln!(csv, "{},{},{},{},{},{}", r.skill, r.variant, r.speed, r.episodes, r.successes, r.rate).unwrap();
    }
    csv
}

fn speed_sweep(args: &CommonArgs) -> RunResult {
    let mut cfg: SpeedSweepConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.speeds.is_empty() {
        return Err("speed-sweep needs at least one belt speed".into());
    }
    write_manifest(args, "speed-sweep", cfg.seed, &cfg)?;
    let rows = conveyor_sim::speed_sweep(cfg.skill, &cfg.world, &cfg.speeds, cfg.episodes, cfg.seed)
        .map_err(|e| e.to_string())?;
    write_file(&args.out, "speed_sweep.csv", &rate_csv(&rows))
}

fn motion_sweep(args: &CommonArgs) -> RunResult {
    let mut cfg: MotionSweepConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.trajectories.is_empty() {
        return Err("motion-sweep needs at least one trajectory".into());
    }
    write_manifest(args, "motion-sweep", cfg.seed, &cfg)?;
    let variants: Vec<(String, BeltTrajectory)> = cfg
        .trajectories
        .iter()
        .map(|t| (t.name.clone(), t.trajectory.clone()))
        .collect();
    let rows = conveyor_sim::trajectory_generalization(cfg.skill, &cfg.world, &variants, cfg.episodes, cfg.seed)
        .map_err(|e| e.to_string())?;
    write_file(&args.out, "motion_sweep.csv", &rate_csv(&rows))
}

fn gmm_demo(args: &CommonArgs) -> RunResult {
    let mut cfg: GmmDemoConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    write_manifest(args, "gmm-demo", cfg.seed, &cfg)?;
    let report = two_target_demo(cfg.separation, cfg.noise, cfg.episodes, cfg.seed)
        .map_err(|e| e.to_string())?;

    // Offset column: distance from the commanded endpoint to the nearest
    // true target (the unimodal command sits at the midpoint).
    let nearest = |command: f64| {
        (command - cfg.separation / 2.0)
            .abs()
            .min((command + cfg.separation / 2.0).abs())
    };
    let mode = mode_action(&report.mixture)[0];
    let mut csv = String::from("model,success_rate,mean_offset_m\n");
    writeln!(csv, "unimodal,{},{}", report.unimodal_success_rate, nearest(report.unimodal_mean_offset)).unwrap();
    writeln!(csv, "mixture,{},{}", report.mixture_success_rate, nearest(mode)).unwrap();
    write_file(&args.out, "gmm_report.csv", &csv)?;

    let json = serde_json::to_string_pretty(&report.mixture).map_err(|e| e.to_string())?;
    write_file(&args.out, "mixture.json", &json)
}

fn memory_recite(args: &CommonArgs) -> RunResult {
    let mut cfg: MemoryReciteConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.recite.seed = seed;
    }
    write_manifest(args, "memory-recite", cfg.recite.seed, &cfg)?;
    let result = train_recite(&cfg.recite).map_err(|e| e.to_string())?;

    let mut csv = String::from("epoch,recite_accuracy\n");
    for (epoch, accuracy) in &result.accuracy_curve {
        writeln!(csv, "{epoch},{accuracy}").unwrap();
    }
    write_file(&args.out, "recite_curve.csv", &csv)?;

    #[derive(Serialize)]
    struct Snapshot<'a> {
        digits: &'a [usize],
        final_accuracy: f64,
        solved_at: Option<usize>,
        params: &'a beltkit::memory_cell::CellParams,
        readout: &'a beltkit::memory_cell::LinearReadout,
    }
    let snapshot = Snapshot {
        digits: &result.digits,
        final_accuracy: result.final_accuracy,
        solved_at: result.solved_at,
        params: &result.params,
        readout: &result.readout,
    };
    let json = serde_json::to_string_pretty(&snapshot).map_err(|e| e.to_string())?;
    write_file(&args.out, "recite_params.json", &json)
}

fn episode(args: &CommonArgs) -> RunResult {
    let mut cfg: EpisodeConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    write_manifest(args, "episode", cfg.seed, &cfg)?;
    let world: WorldConfig = cfg.world.clone();
    let script = builtin_script(cfg.skill, &world);
    let result = run_episode(&script, &world, cfg.seed).map_err(|e| e.to_string())?;

    let mut trace = String::from("t,target_x,target_y,target_z,pos_x,pos_y,pos_z,err_norm\n");
    for row in &result.trace {
        writeln!(trace, "{},{},{},{},{},{},{},{}", row.t, row.target[0], row.target[1], row.target[2], row.effector[0], row.effector[1], row.effector[2], row.error).unwrap();
    }
    write_file(&args.out, "episode_trace.csv", &trace)?;

    let reason = result
        .failure_reason
        .map(|r| format!("{r:?}"))
        .unwrap_or_default();
    let csv = format!(
        "skill,success,failure_reason,steps\n{},{},{},{}\n",
        result.skill, result.success, reason, result.trace.len()
    );
    write_file(&args.out, "episode_result.csv", &csv)
}
