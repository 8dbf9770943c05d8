//! `metatune eval` — run one named experiment against a checkpoint and
//! write CSV (and optionally SVG) artifacts under
//! `<out>/<experiment>/<slice>/...`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use metatune_core::agent::{load_checkpoint, Agent};
use metatune_core::augment::make_augmentation;
use metatune_core::env::{EpisodeConfig, TaskRanges};
use metatune_core::eval::{
    ablation, asymptotic_mse, convergence_time, drift_experiment, heatmap, pca_hidden_states,
    record_episode, tank_rows_csv, two_tank_experiment, AblationKind, DriftScenario, EvalOptions,
    SliceSpec,
};
use metatune_core::sim::FoptdTask;
use metatune_core::tank::TwoTankParams;

use crate::commands::write_snapshot;
use crate::svg;

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Experiment: heatmap | convergence | drift | pca | tank | ablation | trajectory.
    pub experiment: String,
    /// Trained checkpoint (not needed for `ablation`, which trains its own).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory (create-only).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render SVG plots.
    #[arg(long)]
    pub svg: bool,

    /// Heatmap slice: `K=0.5` or `ratio=0.5`.
    #[arg(long)]
    pub slice: Option<String>,
    /// Grid resolution per axis (heatmap, convergence).
    #[arg(long, default_value_t = 16)]
    pub res: usize,

    /// Drift scenario: tau-ramp | gain-step.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    /// Ramp duration in time units (tau-ramp).
    #[arg(long, default_value_t = 55.0)]
    pub duration: f64,
    /// Scale the dead time with tau during a ramp (constant theta/tau).
    #[arg(long)]
    pub scale_theta: bool,

    /// theta/tau ratio for the pca grid.
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    /// pca grid resolution per axis.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,

    /// Measurement noise amplitude for the tank run, cm.
    #[arg(long, default_value_t = 0.0)]
    pub noise_cm: f64,
    /// Crude-model gain, cm/(L/min).
    #[arg(long, default_value_t = 1.2)]
    pub crude_gain: f64,
    /// Crude-model time constant, seconds.
    #[arg(long, default_value_t = 30.0)]
    pub crude_tau_s: f64,
    /// Constant bias flow, L/min. Defaults to the calibrated equilibrium.
    #[arg(long)]
    pub u_bias: Option<f64>,
    /// Number of 5-minute setpoint legs in the tank run.
    #[arg(long, default_value_t = 5)]
    pub legs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Ablation arm pair: privileged | regularization.
    #[arg(long)]
    pub which: Option<String>,
    /// Training preset for ablation runs.
    #[arg(long, default_value = "scaled")]
    pub preset: String,
    /// Config file for ablation runs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides for ablation runs.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,

    /// Task parameters (trajectory, convergence single-task mode).
    #[arg(long)]
    pub gain: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
}

/// Load a checkpoint and reconstruct the evaluation defaults stored in its
/// metadata (training ranges and episode mechanics).
pub fn load_agent(path: &Path) -> Result<(Agent, TaskRanges, EpisodeConfig)> {
    let f = File::open(path)
        .with_context(|| format!("cannot open checkpoint {}", path.display()))?;
    let (agent, meta) = load_checkpoint(BufReader::new(f))?;
    let getf = |key: &str, default: f64| -> f64 {
        meta.get(key).and_then(|v| v.parse().ok()).unwrap_or(default)
    };
    let ranges = TaskRanges {
        gain: (getf("train.gain_min", 0.25), getf("train.gain_max", 1.0)),
        tau: (getf("train.tau_min", 0.25), getf("train.tau_max", 1.0)),
        ratio: (getf("train.ratio_min", 0.0), getf("train.ratio_max", 1.0)),
    };
    let mut episode = EpisodeConfig::default();
    episode.delta_max = agent.cfg.delta_max;
    Ok((agent, ranges, episode))
}

fn require_checkpoint(args: &EvalArgs) -> Result<(Agent, TaskRanges, EpisodeConfig)> {
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| anyhow!("--checkpoint is required for this experiment"))?;
    load_agent(path)
}

fn args_snapshot(args: &EvalArgs) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("experiment".into(), args.experiment.clone());
    if let Some(c) = &args.checkpoint {
        m.insert("checkpoint".into(), c.display().to_string());
    }
    for (k, v) in [
        ("res", args.res.to_string()),
        ("ratio", args.ratio.to_string()),
        ("grid", args.grid.to_string()),
        ("noise_cm", args.noise_cm.to_string()),
        ("crude_gain", args.crude_gain.to_string()),
        ("crude_tau_s", args.crude_tau_s.to_string()),
        ("legs", args.legs.to_string()),
        ("seed", args.seed.to_string()),
        ("duration", args.duration.to_string()),
    ] {
        m.insert(k.into(), v);
    }
    for (k, v) in [
        ("slice", &args.slice),
        ("scenario", &args.scenario),
        ("which", &args.which),
    ] {
        if let Some(v) = v {
            m.insert(k.into(), v.clone());
        }
    }
    for (k, v) in [("from", args.from), ("to", args.to), ("gain", args.gain), ("tau", args.tau), ("theta", args.theta)] {
        if let Some(v) = v {
            m.insert(k.into(), v.to_string());
        }
    }
    m
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let known = [
        "heatmap",
        "convergence",
        "drift",
        "pca",
        "tank",
        "ablation",
        "trajectory",
    ];
    if !known.contains(&args.experiment.as_str()) {
        bail!(
            "unknown experiment '{}'; valid names: {}",
            args.experiment,
            known.join(", ")
        );
    }
    let out = crate::prepare_out_dir(args.out.as_deref(), &format!("eval-{}", args.experiment))?;
    write_snapshot(&out, "run.cfg", &args_snapshot(args))?;
    match args.experiment.as_str() {
        "heatmap" => run_heatmap(args, &out),
        "convergence" => run_convergence(args, &out),
        "drift" => run_drift(args, &out),
        "pca" => run_pca(args, &out),
        "tank" => run_tank(args, &out),
        "ablation" => run_ablation(args, &out),
        "trajectory" => run_trajectory(args, &out),
        _ => unreachable!(),
    }
}

fn parse_slice(s: &str) -> Result<(SliceSpec, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("--slice expects K=<gain> or ratio=<r>, got '{s}'"))?;
    let val: f64 = v.parse().map_err(|e| anyhow!("bad slice value '{v}': {e}"))?;
    match k.trim() {
        "K" | "k" | "gain" => Ok((SliceSpec::FixedGain(val), format!("K={val}"))),
        "ratio" => Ok((SliceSpec::FixedRatio(val), format!("ratio={val}"))),
        other => bail!("unknown slice axis '{other}' (expected K or ratio)"),
    }
}

fn run_heatmap(args: &EvalArgs, out: &Path) -> Result<()> {
    let (agent, ranges, episode) = require_checkpoint(args)?;
    let (slice, slice_name) = parse_slice(args.slice.as_deref().unwrap_or("K=0.5"))?;
    let opts = EvalOptions {
        episode,
        ..EvalOptions::default()
    };
    let grid = heatmap(&agent, slice, &ranges, args.res, &opts)?;
    let dir = out.join("heatmap").join(&slice_name);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("mse.csv"), grid.to_csv())?;
    if args.svg {
        let values: Vec<f64> = grid.cells.iter().map(|c| c.mse).collect();
        std::fs::write(
            dir.join("mse.svg"),
            svg::heatmap_plot(
                &format!("asymptotic MSE, slice {slice_name}"),
                &values,
                args.res,
                args.res,
                "tau",
                match slice {
                    SliceSpec::FixedGain(_) => "theta/tau",
                    SliceSpec::FixedRatio(_) => "K",
                },
            ),
        )?;
    }
    let worst = grid.worst().unwrap();
    let best = grid.best().unwrap();
    println!(
        "heatmap {}x{} [{}]: best {:.4} at (K={}, tau={}, theta={:.3}); worst {:.4} at (K={}, tau={}, theta={:.3})",
        args.res,
        args.res,
        slice_name,
        best.mse,
        best.task.gain,
        best.task.tau,
        best.task.theta,
        worst.mse,
        worst.task.gain,
        worst.task.tau,
        worst.task.theta,
    );
    Ok(())
}

fn run_convergence(args: &EvalArgs, out: &Path) -> Result<()> {
    let (agent, ranges, episode) = require_checkpoint(args)?;
    let opts = EvalOptions {
        episode,
        ..EvalOptions::default()
    };
    let dir = out.join("convergence").join("default");
    std::fs::create_dir_all(&dir)?;
    let mut csv = String::from("gain,tau,theta,time_units\n");
    let n = args.res.min(16);
    let mid_ratio = (ranges.ratio.0 + ranges.ratio.1) / 2.0;
    for i in 0..n {
        for j in 0..n {
            let gain =
                ranges.gain.0 + (ranges.gain.1 - ranges.gain.0) * i as f64 / (n - 1).max(1) as f64;
            let tau =
                ranges.tau.0 + (ranges.tau.1 - ranges.tau.0) * j as f64 / (n - 1).max(1) as f64;
            let task = FoptdTask {
                gain,
                tau,
                theta: mid_ratio * tau,
            };
            let t = convergence_time(&agent, task, 40, &opts)?;
            csv.push_str(&format!("{gain},{tau},{},{t}\n", task.theta));
        }
    }
    std::fs::write(dir.join("time.csv"), csv)?;
    println!("convergence map written to {}", dir.display());
    Ok(())
}

fn run_drift(args: &EvalArgs, out: &Path) -> Result<()> {
    let (agent, _ranges, episode) = require_checkpoint(args)?;
    let name = args.scenario.as_deref().unwrap_or("tau-ramp");
    let base = FoptdTask {
        gain: args.gain.unwrap_or(0.5),
        tau: args.tau.unwrap_or(1.0),
        theta: args.theta.unwrap_or(0.2),
    };
    let scenario = match name {
        "tau-ramp" => DriftScenario::TauRamp {
            from: args.from.unwrap_or(0.4),
            to: args.to.unwrap_or(1.0),
            duration: args.duration,
            scale_theta: args.scale_theta,
        },
        "gain-step" => DriftScenario::GainStep {
            from: args.from.unwrap_or(0.5),
            to: args.to.unwrap_or(1.0),
        },
        other => bail!("unknown scenario '{other}' (expected tau-ramp or gain-step)"),
    };
    let opts = EvalOptions {
        episode,
        ..EvalOptions::default()
    };
    let r = drift_experiment(&agent, base, scenario, &opts)?;
    let dir = out.join("drift").join(name);
    std::fs::create_dir_all(&dir)?;
    let mut buf = Vec::new();
    r.adaptive_rows.write_csv(&mut buf)?;
    std::fs::write(dir.join("adaptive.csv"), &buf)?;
    buf.clear();
    r.frozen_rows.write_csv(&mut buf)?;
    std::fs::write(dir.join("frozen.csv"), &buf)?;
    std::fs::write(
        dir.join("summary.csv"),
        format!(
            "metric,adaptive,frozen\npost_change_mse,{},{}\nkp_pre,{},\nki_pre,{},\nkp_post,{},\nki_post,{},\n",
            r.adaptive_mse, r.frozen_mse, r.gains_pre.0, r.gains_pre.1, r.gains_post_adaptive.0, r.gains_post_adaptive.1
        ),
    )?;
    if args.svg {
        let s = |rows: &metatune_core::env::TrajectoryRecorder, name, color| svg::Series {
            name,
            color,
            points: rows.rows.iter().map(|r| (r.t, r.y)).collect(),
        };
        std::fs::write(
            dir.join("output.svg"),
            svg::line_plot(
                &format!("drift {name}: process output"),
                &[
                    s(&r.adaptive_rows, "adaptive", "#0a5"),
                    s(&r.frozen_rows, "frozen", "#d33"),
                ],
            ),
        )?;
    }
    println!(
        "drift {name}: adaptive mse {:.5} vs frozen {:.5}",
        r.adaptive_mse, r.frozen_mse
    );
    Ok(())
}

fn run_pca(args: &EvalArgs, out: &Path) -> Result<()> {
    let (agent, ranges, episode) = require_checkpoint(args)?;
    let opts = EvalOptions {
        episode,
        ..EvalOptions::default()
    };
    // Reference trajectory task: the grid's center scaled into range.
    let traj_task = FoptdTask {
        gain: args.gain.unwrap_or(0.75 * (ranges.gain.1 - ranges.gain.0) + ranges.gain.0),
        tau: args.tau.unwrap_or(ranges.tau.0),
        theta: args
            .theta
            .unwrap_or(args.ratio * ranges.tau.0),
    };
    let exp = pca_hidden_states(&agent, &ranges, args.ratio, args.grid, traj_task, &opts)?;
    let dir = out.join("pca").join(format!("ratio={}", args.ratio));
    std::fs::create_dir_all(&dir)?;
    let mut proj = String::from("gain,tau,pc1,pc2\n");
    for ((g, t), p) in exp.labels.iter().zip(&exp.projections) {
        proj.push_str(&format!("{g},{t},{},{}\n", p[0], p[1]));
    }
    std::fs::write(dir.join("projections.csv"), proj)?;
    let mut ev = String::from("component,eigenvalue,explained_variance\n");
    for (i, (l, r)) in exp
        .pca
        .eigenvalues
        .iter()
        .zip(&exp.pca.explained_variance)
        .enumerate()
    {
        ev.push_str(&format!("{i},{l},{r}\n"));
    }
    std::fs::write(dir.join("explained.csv"), ev)?;
    let mut traj = String::from("step,pc1,pc2\n");
    for (i, p) in exp.trajectory.iter().enumerate() {
        traj.push_str(&format!("{i},{},{}\n", p[0], p[1]));
    }
    std::fs::write(dir.join("trajectory.csv"), traj)?;
    println!(
        "pca: top-2 components explain {:.1}% of deep-hidden variance ({} tasks)",
        100.0 * exp.top2_explained,
        exp.labels.len()
    );
    Ok(())
}

fn run_tank(args: &EvalArgs, out: &Path) -> Result<()> {
    let (agent, _ranges, _episode) = require_checkpoint(args)?;
    let params = TwoTankParams::default();
    let u_bias = args
        .u_bias
        .unwrap_or_else(|| params.equilibrium_inflow_lmin(5.5));
    let spec = make_augmentation(args.crude_gain, args.crude_tau_s, 55.0, 10.0).with_u_bias(u_bias);
    let exp = two_tank_experiment(&agent, &params, spec, args.noise_cm, args.seed, args.legs)?;
    let dir = out
        .join("tank")
        .join(format!("noise={}cm", args.noise_cm));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("adaptive.csv"), tank_rows_csv(&exp.adaptive))?;
    std::fs::write(dir.join("frozen.csv"), tank_rows_csv(&exp.frozen))?;
    std::fs::write(
        dir.join("summary.csv"),
        format!(
            "metric,value\ngain_convergence_s,{}\nfinal_leg_mad_cm,{}\nu_bias_lmin,{}\n",
            exp.gain_convergence_s, exp.final_leg_mad_cm, u_bias
        ),
    )?;
    if args.svg {
        std::fs::write(
            dir.join("level.svg"),
            svg::line_plot(
                "tank level tracking",
                &[
                    svg::Series {
                        name: "setpoint",
                        color: "#555",
                        points: exp.adaptive.iter().map(|r| (r.t_s, r.sp_cm)).collect(),
                    },
                    svg::Series {
                        name: "adaptive",
                        color: "#0a5",
                        points: exp.adaptive.iter().map(|r| (r.t_s, r.m_cm)).collect(),
                    },
                    svg::Series {
                        name: "frozen gains",
                        color: "#d33",
                        points: exp.frozen.iter().map(|r| (r.t_s, r.m_cm)).collect(),
                    },
                ],
            ),
        )?;
        std::fs::write(
            dir.join("gains.svg"),
            svg::line_plot(
                "scaled PI gains",
                &[
                    svg::Series {
                        name: "kp",
                        color: "#06c",
                        points: exp.adaptive.iter().map(|r| (r.t_s, r.kp)).collect(),
                    },
                    svg::Series {
                        name: "ki",
                        color: "#c60",
                        points: exp.adaptive.iter().map(|r| (r.t_s, r.ki)).collect(),
                    },
                ],
            ),
        )?;
    }
    println!(
        "tank: gains near-converged after {:.0} s; final-leg mean |error| {:.2} cm",
        exp.gain_convergence_s, exp.final_leg_mad_cm
    );
    Ok(())
}

fn run_ablation(args: &EvalArgs, out: &Path) -> Result<()> {
    let which = args.which.as_deref().unwrap_or("privileged");
    let kind = match which {
        "privileged" => AblationKind::PrivilegedCritic,
        "regularization" => AblationKind::Regularization,
        other => bail!("unknown ablation '{other}' (expected privileged or regularization)"),
    };
    let mut cfg = crate::config::preset(&args.preset)?;
    if let Some(path) = &args.config {
        crate::config::apply_file(&mut cfg, path)?;
    }
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{s}'"))?;
        crate::config::apply(&mut cfg, k.trim(), v.trim())?;
    }
    let r = ablation(&cfg, kind)?;
    let dir = out.join("ablation").join(which);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("summary.csv"),
        format!(
            "metric,arm_a,arm_b\nfinal_training_cost,{},{}\nworst_grid_mse,{},{}\nlate_mean_abs_action,{},{}\n",
            r.final_cost_a, r.final_cost_b, r.worst_mse_a, r.worst_mse_b, r.late_action_a, r.late_action_b
        ),
    )?;
    let meta = BTreeMap::new();
    let fa = File::create(dir.join("arm_a.bin"))?;
    metatune_core::agent::save_checkpoint(&r.arm_a, &meta, std::io::BufWriter::new(fa))?;
    let fb = File::create(dir.join("arm_b.bin"))?;
    metatune_core::agent::save_checkpoint(&r.arm_b, &meta, std::io::BufWriter::new(fb))?;
    println!(
        "ablation {which}: final cost {:.4} (A) vs {:.4} (B); late |action| {:.5} vs {:.5}",
        r.final_cost_a, r.final_cost_b, r.late_action_a, r.late_action_b
    );
    Ok(())
}

fn run_trajectory(args: &EvalArgs, out: &Path) -> Result<()> {
    let (agent, _ranges, episode) = require_checkpoint(args)?;
    let task = FoptdTask {
        gain: args.gain.ok_or_else(|| anyhow!("--gain required"))?,
        tau: args.tau.ok_or_else(|| anyhow!("--tau required"))?,
        theta: args.theta.ok_or_else(|| anyhow!("--theta required"))?,
    };
    let dir = out.join("trajectory").join(format!(
        "K{}_tau{}_theta{}",
        task.gain, task.tau, task.theta
    ));
    std::fs::create_dir_all(&dir)?;

    let rec = record_episode(&agent, task, &episode)?;
    let mut buf = Vec::new();
    rec.write_csv(&mut buf)?;
    std::fs::write(dir.join("trajectory.csv"), &buf)?;

    // Comparison run holding the initial sluggish tuning.
    let mut env =
        metatune_core::env::FoptdEnv::with_initial_output(task, episode.clone(), 0.0)?;
    let mut rec0 = metatune_core::env::TrajectoryRecorder::new();
    env.record_start(&mut rec0);
    for _ in 0..episode.n_steps {
        env.step_recorded(metatune_core::env::GainDelta::zero(), Some(&mut rec0))?;
    }
    buf.clear();
    rec0.write_csv(&mut buf)?;
    std::fs::write(dir.join("trajectory_initial_gains.csv"), &buf)?;

    if args.svg {
        std::fs::write(
            dir.join("trajectory.svg"),
            svg::line_plot(
                &format!("episode on K={} tau={} theta={}", task.gain, task.tau, task.theta),
                &[
                    svg::Series {
                        name: "setpoint",
                        color: "#999",
                        points: rec.rows.iter().map(|r| (r.t, r.setpoint)).collect(),
                    },
                    svg::Series {
                        name: "target",
                        color: "#555",
                        points: rec.rows.iter().map(|r| (r.t, r.y_desired)).collect(),
                    },
                    svg::Series {
                        name: "tuned",
                        color: "#0a5",
                        points: rec.rows.iter().map(|r| (r.t, r.y)).collect(),
                    },
                    svg::Series {
                        name: "initial gains",
                        color: "#d33",
                        points: rec0.rows.iter().map(|r| (r.t, r.y)).collect(),
                    },
                ],
            ),
        )?;
    }
    let mse = asymptotic_mse(
        &agent,
        task,
        &EvalOptions {
            episode,
            ..EvalOptions::default()
        },
    )?;
    println!(
        "trajectory written; asymptotic mse for this task: {:.5} (gains kp={:.3}, ki={:.3})",
        mse.mse, mse.kp, mse.ki
    );
    Ok(())
}
