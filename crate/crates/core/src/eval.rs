//! The experiment suite: everything used to judge a trained checkpoint.
//!
//! All experiments drive the deterministic (noise-free) policy, so repeated
//! runs are bit-identical. The agent is evaluated in continuous operation:
//! hidden states carry across setpoint changes and episodes never reset
//! unless stated.

use crate::agent::{ActorState, Agent};
use crate::augment::{AugmentationSpec, TankEnv};
use crate::env::{ClosedLoop, EpisodeConfig, FoptdEnv, GainDelta, TrajectoryRecorder};
use crate::pca::{pca, PcaResult};
use crate::ppo::{self, TrainConfig};
use crate::sim::FoptdTask;
use crate::tank::TwoTankParams;
use crate::Result;

/// Options shared by the continuous-operation experiments.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub episode: EpisodeConfig,
    /// Hidden-state forgetting factor (1 = training behavior).
    pub forget: f64,
    /// Stability-rule cap: give up after this many setpoint changes.
    pub max_setpoint_changes: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            episode: EpisodeConfig::default(),
            forget: 1.0,
            max_setpoint_changes: 50,
        }
    }
}

/// One agent acting on one closed loop, continuously.
struct AgentLoop<'a> {
    agent: &'a Agent,
    lp: ClosedLoop,
    hs: ActorState,
    opts: &'a EvalOptions,
    y_buf: Vec<f64>,
    yd_buf: Vec<f64>,
    /// When false the gains are frozen (comparison runs).
    adapt: bool,
}

impl<'a> AgentLoop<'a> {
    fn new(agent: &'a Agent, task: FoptdTask, opts: &'a EvalOptions) -> Result<Self> {
        let lp = ClosedLoop::new(task, opts.episode.dt, 0.0, opts.episode.initial_gains())?;
        Ok(AgentLoop {
            agent,
            lp,
            hs: agent.initial_actor_state(),
            opts,
            y_buf: Vec::new(),
            yd_buf: Vec::new(),
            adapt: true,
        })
    }

    fn gains(&self) -> (f64, f64) {
        (self.lp.ctrl.gains.kp, self.lp.ctrl.gains.ki)
    }

    fn t(&self) -> f64 {
        self.lp.t()
    }

    /// One agent step; returns the mean squared target deviation over the
    /// step's sub-samples.
    fn rl_step(&mut self, rec: Option<&mut TrajectoryRecorder>) -> Result<f64> {
        let cfg = &self.opts.episode;
        let sp = cfg.setpoint_at_substep(self.lp.k);
        let state = self.lp.state(sp);
        let action = if self.adapt {
            self.agent
                .deterministic_action(&state, &mut self.hs, self.opts.forget)?
        } else {
            // Keep the recurrent state marching even when frozen.
            self.agent
                .deterministic_action(&state, &mut self.hs, self.opts.forget)?;
            GainDelta::zero()
        };
        let a = action.clamped(cfg.delta_max);
        let g = &mut self.lp.ctrl.gains;
        g.kp = (g.kp + a.dkp).clamp(cfg.gain_lo, cfg.gain_hi);
        g.ki = (g.ki + a.dki).clamp(cfg.gain_lo, cfg.gain_hi);

        self.y_buf.clear();
        self.yd_buf.clear();
        let n = cfg.substeps_per_step();
        let cfg2 = cfg.clone();
        let mut rec = rec;
        self.lp.run_substeps(
            n,
            &mut |k| cfg2.setpoint_at_substep(k),
            &mut self.y_buf,
            &mut self.yd_buf,
            rec.as_deref_mut(),
        );
        let mse = self
            .y_buf
            .iter()
            .zip(&self.yd_buf)
            .map(|(&y, &yd)| (yd - y) * (yd - y))
            .sum::<f64>()
            / n as f64;
        if let Some(r) = rec {
            r.close_step(mse);
        }
        Ok(mse)
    }
}

/// Result of one asymptotic-performance measurement.
#[derive(Debug, Clone, Copy)]
pub struct AsymptoticResult {
    /// Mean squared deviation from the target over the 11 units following a
    /// -1 → +1 setpoint step, after the gains stabilized.
    pub mse: f64,
    /// Final gains.
    pub kp: f64,
    pub ki: f64,
    /// Time units until the stability rule fired.
    pub stabilized_at: f64,
    /// False when the gains never met the rule within the cap (the mse is
    /// still measured from the capped state).
    pub converged: bool,
}

/// Gains are declared stable when both changed by less than 1% of their
/// current magnitude over the last 4 setpoint periods.
fn gains_stable(samples: &[(f64, f64)]) -> bool {
    let n = samples.len();
    if n < 5 {
        return false;
    }
    let (kp, ki) = samples[n - 1];
    samples[n - 5..n - 1].iter().all(|&(pkp, pki)| {
        (kp - pkp).abs() < 0.01 * kp.abs() && (ki - pki).abs() < 0.01 * ki.abs()
    })
}

/// Run the agent until its tuning stabilizes, then measure tracking quality
/// through one -1 → +1 setpoint step.
pub fn asymptotic_mse(agent: &Agent, task: FoptdTask, opts: &EvalOptions) -> Result<AsymptoticResult> {
    let mut al = AgentLoop::new(agent, task, opts)?;
    let steps_per_period = (opts.episode.setpoint_period / opts.episode.rl_dt).round() as usize;
    let mut boundary_gains: Vec<(f64, f64)> = vec![al.gains()];
    let mut converged = false;
    let mut periods = 0usize;
    while periods < opts.max_setpoint_changes {
        for _ in 0..steps_per_period {
            al.rl_step(None)?;
        }
        periods += 1;
        boundary_gains.push(al.gains());
        if gains_stable(&boundary_gains) {
            converged = true;
            break;
        }
    }
    let stabilized_at = al.t();

    // Advance to the next boundary where the setpoint flips -1 -> +1 (an
    // even period index), then measure one setpoint period's tracking.
    while (al.lp.k / al.opts.episode.substeps_per_setpoint_period()) % 2 != 1 {
        for _ in 0..steps_per_period {
            al.rl_step(None)?;
        }
    }
    for _ in 0..steps_per_period {
        al.rl_step(None)?;
    }
    // Now at an even-period boundary: the flip just happened... measure.
    let mut sq = 0.0;
    for _ in 0..steps_per_period {
        sq += al.rl_step(None)?;
    }
    let (kp, ki) = al.gains();
    Ok(AsymptoticResult {
        mse: sq / steps_per_period as f64,
        kp,
        ki,
        stabilized_at,
        converged,
    })
}

mod heatmap_impl {
    use super::*;

    /// Which 2-D slice of the task box to sweep.
    #[derive(Debug, Clone, Copy)]
    pub enum SliceSpec {
        /// Fix the gain; axes are (tau, theta/tau).
        FixedGain(f64),
        /// Fix theta/tau; axes are (tau, gain).
        FixedRatio(f64),
    }

    #[derive(Debug, Clone)]
    pub struct HeatmapCell {
        pub task: FoptdTask,
        pub mse: f64,
        pub converged: bool,
    }

    #[derive(Debug, Clone)]
    pub struct HeatmapGrid {
        pub slice: SliceSpec,
        pub cells: Vec<HeatmapCell>,
        pub resolution: usize,
    }

    impl HeatmapGrid {
        pub fn to_csv(&self) -> String {
            let mut s = String::from("gain,tau,theta,mse,converged\n");
            for c in &self.cells {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    c.task.gain, c.task.tau, c.task.theta, c.mse, c.converged
                ));
            }
            s
        }

        pub fn worst(&self) -> Option<&HeatmapCell> {
            self.cells
                .iter()
                .max_by(|a, b| a.mse.partial_cmp(&b.mse).unwrap())
        }

        pub fn best(&self) -> Option<&HeatmapCell> {
            self.cells
                .iter()
                .min_by(|a, b| a.mse.partial_cmp(&b.mse).unwrap())
        }
    }
}

pub use heatmap_impl::{HeatmapCell, HeatmapGrid, SliceSpec};

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Sweep asymptotic performance over a slice of the task box.
pub fn heatmap(
    agent: &Agent,
    slice: SliceSpec,
    ranges: &crate::env::TaskRanges,
    resolution: usize,
    opts: &EvalOptions,
) -> Result<HeatmapGrid> {
    let mut cells = Vec::with_capacity(resolution * resolution);
    let taus = linspace(ranges.tau.0, ranges.tau.1, resolution);
    match slice {
        SliceSpec::FixedGain(gain) => {
            let ratios = linspace(ranges.ratio.0, ranges.ratio.1, resolution);
            for &ratio in &ratios {
                for &tau in &taus {
                    let task = FoptdTask {
                        gain,
                        tau,
                        theta: ratio * tau,
                    };
                    let r = asymptotic_mse(agent, task, opts)?;
                    cells.push(HeatmapCell {
                        task,
                        mse: r.mse,
                        converged: r.converged,
                    });
                }
            }
        }
        SliceSpec::FixedRatio(ratio) => {
            let gains = linspace(ranges.gain.0, ranges.gain.1, resolution);
            for &gain in &gains {
                for &tau in &taus {
                    let task = FoptdTask {
                        gain,
                        tau,
                        theta: ratio * tau,
                    };
                    let r = asymptotic_mse(agent, task, opts)?;
                    cells.push(HeatmapCell {
                        task,
                        mse: r.mse,
                        converged: r.converged,
                    });
                }
            }
        }
    }
    Ok(HeatmapGrid {
        slice,
        cells,
        resolution,
    })
}

/// Time for both gains to come within 10% of their ultimate values, staying
/// there permanently. Runs `periods` setpoint changes (default 40).
pub fn convergence_time(
    agent: &Agent,
    task: FoptdTask,
    periods: usize,
    opts: &EvalOptions,
) -> Result<f64> {
    let mut al = AgentLoop::new(agent, task, opts)?;
    let steps_per_period = (opts.episode.setpoint_period / opts.episode.rl_dt).round() as usize;
    let total_steps = periods * steps_per_period;
    let mut gains = Vec::with_capacity(total_steps + 1);
    gains.push(al.gains());
    for _ in 0..total_steps {
        al.rl_step(None)?;
        gains.push(al.gains());
    }
    let (kp_inf, ki_inf) = *gains.last().unwrap();
    let within = |&(kp, ki): &(f64, f64)| {
        (kp - kp_inf).abs() <= 0.1 * kp_inf.abs() && (ki - ki_inf).abs() <= 0.1 * ki_inf.abs()
    };
    // Earliest index whose entire suffix satisfies the band.
    let mut idx = gains.len();
    for i in (0..gains.len()).rev() {
        if within(&gains[i]) {
            idx = i;
        } else {
            break;
        }
    }
    Ok(idx as f64 * opts.episode.rl_dt)
}

/// A drifting-dynamics scenario.
#[derive(Debug, Clone, Copy)]
pub enum DriftScenario {
    /// tau ramps linearly between the two values across `duration` time
    /// units, starting once the tuning has stabilized. With `scale_theta`
    /// the dead time follows at the base task's theta/tau ratio (the whole
    /// lag structure slows down); otherwise theta stays fixed.
    TauRamp {
        from: f64,
        to: f64,
        duration: f64,
        scale_theta: bool,
    },
    /// The process gain steps once the tuning has stabilized.
    GainStep { from: f64, to: f64 },
}

impl DriftScenario {
    fn task_at(&self, base: &FoptdTask, frac: f64) -> FoptdTask {
        match *self {
            DriftScenario::TauRamp {
                from,
                to,
                scale_theta,
                ..
            } => {
                let tau = from + (to - from) * frac.clamp(0.0, 1.0);
                let theta = if scale_theta {
                    base.theta / base.tau * tau
                } else {
                    base.theta
                };
                FoptdTask {
                    gain: base.gain,
                    tau,
                    theta,
                }
            }
            DriftScenario::GainStep { from, to } => FoptdTask {
                gain: if frac > 0.0 { to } else { from },
                ..*base
            },
        }
    }

    /// The largest dead time the scenario can reach (delay-line sizing).
    fn max_theta(&self, base: &FoptdTask) -> f64 {
        self.task_at(base, 0.0)
            .theta
            .max(self.task_at(base, 1.0).theta)
    }
}

#[derive(Debug, Clone)]
pub struct DriftResult {
    /// Tracking MSE through a post-change setpoint step, adapting online.
    pub adaptive_mse: f64,
    /// Same window with the gains frozen at their pre-change values.
    pub frozen_mse: f64,
    pub gains_pre: (f64, f64),
    pub gains_post_adaptive: (f64, f64),
    pub adaptive_rows: TrajectoryRecorder,
    pub frozen_rows: TrajectoryRecorder,
}

/// Run a dynamics-drift scenario twice (adapting vs frozen) and compare
/// tracking through a setpoint step after the change.
pub fn drift_experiment(
    agent: &Agent,
    base: FoptdTask,
    scenario: DriftScenario,
    opts: &EvalOptions,
) -> Result<DriftResult> {
    let opts = EvalOptions {
        forget: 0.99,
        ..opts.clone()
    };
    let steps_per_period = (opts.episode.setpoint_period / opts.episode.rl_dt).round() as usize;

    let start_task = scenario.task_at(&base, 0.0);
    // Size the delay lines for the largest dead time the drift reaches.
    let sizing_task = FoptdTask {
        theta: scenario.max_theta(&base),
        ..start_task
    };

    let run = |adapt_after_change: bool| -> Result<(f64, (f64, f64), (f64, f64), TrajectoryRecorder)> {
        let mut al = AgentLoop::new(agent, sizing_task, &opts)?;
        al.lp.task = start_task;
        let mut rec = TrajectoryRecorder::new();

        // Phase 1: stabilize on the start task.
        let mut boundary_gains = vec![al.gains()];
        let mut periods = 0;
        while periods < opts.max_setpoint_changes {
            for _ in 0..steps_per_period {
                al.rl_step(Some(&mut rec))?;
            }
            periods += 1;
            boundary_gains.push(al.gains());
            if gains_stable(&boundary_gains) {
                break;
            }
        }
        let gains_pre = al.gains();
        let change_start = al.t();
        if !adapt_after_change {
            al.adapt = false;
        }

        // Phase 2: apply the drift, updating the task each agent step.
        let change_duration = match scenario {
            DriftScenario::TauRamp { duration, .. } => duration,
            DriftScenario::GainStep { .. } => 0.0,
        };
        let settle_periods = 8usize;
        let phase2_steps = ((change_duration / opts.episode.rl_dt).ceil() as usize)
            + settle_periods * steps_per_period;
        for step in 0..phase2_steps {
            let t = al.t();
            let _ = step;
            let frac = if change_duration > 0.0 {
                ((t - change_start) / change_duration).clamp(0.0, 1.0)
            } else {
                1.0
            };
            al.lp.task = scenario.task_at(&base, frac);
            al.rl_step(Some(&mut rec))?;
        }

        // Phase 3: align to a -1 -> +1 flip and measure one period.
        while (al.lp.k / opts.episode.substeps_per_setpoint_period()) % 2 != 1 {
            for _ in 0..steps_per_period {
                al.rl_step(Some(&mut rec))?;
            }
        }
        for _ in 0..steps_per_period {
            al.rl_step(Some(&mut rec))?;
        }
        let mut sq = 0.0;
        for _ in 0..steps_per_period {
            sq += al.rl_step(Some(&mut rec))?;
        }
        Ok((
            sq / steps_per_period as f64,
            gains_pre,
            al.gains(),
            rec,
        ))
    };

    let (adaptive_mse, gains_pre, gains_post_adaptive, adaptive_rows) = run(true)?;
    let (frozen_mse, _, _, frozen_rows) = run(false)?;
    Ok(DriftResult {
        adaptive_mse,
        frozen_mse,
        gains_pre,
        gains_post_adaptive,
        adaptive_rows,
        frozen_rows,
    })
}

/// Hidden-state analysis output.
#[derive(Debug, Clone)]
pub struct PcaExperiment {
    pub pca: PcaResult,
    /// (gain, tau) labels, one per grid task.
    pub labels: Vec<(f64, f64)>,
    /// 2-D projections of each task's final deep hidden state.
    pub projections: Vec<[f64; 2]>,
    /// Projected deep-hidden trajectory of the single reference task.
    pub trajectory: Vec<[f64; 2]>,
    /// Explained variance of the top two components.
    pub top2_explained: f64,
}

/// Collect final deep hidden states across a (gain, tau) grid at fixed
/// theta/tau, decompose, and project; also project one task's h2 trajectory.
pub fn pca_hidden_states(
    agent: &Agent,
    ranges: &crate::env::TaskRanges,
    ratio: f64,
    grid_n: usize,
    trajectory_task: FoptdTask,
    opts: &EvalOptions,
) -> Result<PcaExperiment> {
    let steps_per_period = (opts.episode.setpoint_period / opts.episode.rl_dt).round() as usize;
    let run_periods = 30usize;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for &gain in &linspace(ranges.gain.0, ranges.gain.1, grid_n) {
        for &tau in &linspace(ranges.tau.0, ranges.tau.1, grid_n) {
            let task = FoptdTask {
                gain,
                tau,
                theta: ratio * tau,
            };
            let mut al = AgentLoop::new(agent, task, opts)?;
            for _ in 0..run_periods * steps_per_period {
                al.rl_step(None)?;
            }
            rows.push(al.hs.h2.clone());
            labels.push((gain, tau));
        }
    }
    let p = pca(&rows)?;
    let projections: Vec<[f64; 2]> = rows
        .iter()
        .map(|r| {
            let v = p.project(r, 2);
            [v[0], v[1]]
        })
        .collect();

    let mut al = AgentLoop::new(agent, trajectory_task, opts)?;
    let mut trajectory = Vec::new();
    for _ in 0..run_periods * steps_per_period {
        al.rl_step(None)?;
        let v = p.project(&al.hs.h2, 2);
        trajectory.push([v[0], v[1]]);
    }
    let top2_explained = p.explained_variance.iter().take(2).sum();
    Ok(PcaExperiment {
        pca: p,
        labels,
        projections,
        trajectory,
        top2_explained,
    })
}

/// One row of a tank run, interface units.
#[derive(Debug, Clone, Copy)]
pub struct TankRow {
    pub t_s: f64,
    pub sp_cm: f64,
    pub m_cm: f64,
    pub level_cm: f64,
    pub flow_sp_lmin: f64,
    pub kp: f64,
    pub ki: f64,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct TankExperiment {
    pub adaptive: Vec<TankRow>,
    pub frozen: Vec<TankRow>,
    /// Seconds from the first setpoint change until both gains stayed
    /// within 10% of their final values.
    pub gain_convergence_s: f64,
    /// Mean |setpoint - measurement| in cm over the final schedule leg,
    /// adaptive run.
    pub final_leg_mad_cm: f64,
}

pub fn tank_rows_csv(rows: &[TankRow]) -> String {
    let mut s = String::from("t_s,setpoint_cm,m_cm,level_cm,flow_sp_lmin,kp,ki,cost\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.t_s, r.sp_cm, r.m_cm, r.level_cm, r.flow_sp_lmin, r.kp, r.ki, r.cost
        ));
    }
    s
}

/// Level setpoint schedule: hold the operating point briefly, then step
/// among {60, 50} cm every 5 minutes.
pub fn tank_schedule(t_s: f64) -> f64 {
    let leg = (t_s / 300.0) as usize;
    match leg % 4 {
        0 => 60.0,
        1 => 50.0,
        2 => 60.0,
        _ => 50.0,
    }
}

/// Deploy the agent on the two-tank plant through the augmentation mapping,
/// with an identically-scheduled frozen-gain comparison run.
pub fn two_tank_experiment(
    agent: &Agent,
    params: &TwoTankParams,
    spec: AugmentationSpec,
    noise_cm: f64,
    seed: u64,
    legs: usize,
) -> Result<TankExperiment> {
    let steps_per_leg = (300.0 / spec.sample_period).round() as usize;
    let total_steps = legs * steps_per_leg;

    let run = |adaptive: bool| -> Result<(Vec<TankRow>, Vec<(f64, f64)>)> {
        let mut env = TankEnv::new(params.clone(), spec, noise_cm, seed);
        let mut hs = agent.initial_actor_state();
        let mut rows = Vec::with_capacity(total_steps);
        let mut gains = Vec::with_capacity(total_steps);
        let t0 = env.elapsed_s();
        for _ in 0..total_steps {
            let state = env.state();
            let action = if adaptive {
                agent.deterministic_action(&state, &mut hs, 0.99)?
            } else {
                agent.deterministic_action(&state, &mut hs, 0.99)?;
                GainDelta::zero()
            };
            let out = env.step(action, &mut |t| tank_schedule(t - t0))?;
            rows.push(TankRow {
                t_s: env.elapsed_s() - t0,
                sp_cm: tank_schedule(env.elapsed_s() - t0),
                m_cm: out.m_cm,
                level_cm: out.level_cm,
                flow_sp_lmin: out.flow_sp_lmin,
                kp: out.state.kp,
                ki: out.state.ki,
                cost: out.cost,
            });
            gains.push((out.state.kp, out.state.ki));
        }
        Ok((rows, gains))
    };

    let (adaptive, gains) = run(true)?;
    let (frozen, _) = run(false)?;

    let (kp_inf, ki_inf) = *gains.last().unwrap();
    let mut idx = gains.len();
    for i in (0..gains.len()).rev() {
        let (kp, ki) = gains[i];
        if (kp - kp_inf).abs() <= 0.1 * kp_inf.abs() && (ki - ki_inf).abs() <= 0.1 * ki_inf.abs() {
            idx = i;
        } else {
            break;
        }
    }
    let gain_convergence_s = idx as f64 * spec.sample_period;

    let last_leg = &adaptive[(legs - 1) * steps_per_leg..];
    let final_leg_mad_cm = last_leg
        .iter()
        .map(|r| (r.sp_cm - r.m_cm).abs())
        .sum::<f64>()
        / last_leg.len() as f64;

    Ok(TankExperiment {
        adaptive,
        frozen,
        gain_convergence_s,
        final_leg_mad_cm,
    })
}

/// Profile of the deterministic policy's action magnitudes over one episode.
#[derive(Debug, Clone, Copy)]
pub struct ActionProfile {
    pub mean_abs_first_quarter: f64,
    pub mean_abs_last_quarter: f64,
    pub mean_abs_first_10: f64,
    pub mean_abs_last_10: f64,
}

/// Run one deterministic 40-step episode and measure |action| by phase.
pub fn episode_action_profile(
    agent: &Agent,
    task: FoptdTask,
    episode: &EpisodeConfig,
) -> Result<ActionProfile> {
    let mut env = FoptdEnv::with_initial_output(task, episode.clone(), 0.0)?;
    let mut hs = agent.initial_actor_state();
    let mut mags = Vec::with_capacity(episode.n_steps);
    for _ in 0..episode.n_steps {
        let state = env.state();
        let a = agent.deterministic_action(&state, &mut hs, 1.0)?;
        mags.push((a.dkp.abs() + a.dki.abs()) / 2.0);
        env.step(a)?;
    }
    let n = mags.len();
    let quarter = n / 4;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(ActionProfile {
        mean_abs_first_quarter: mean(&mags[..quarter]),
        mean_abs_last_quarter: mean(&mags[n - quarter..]),
        mean_abs_first_10: mean(&mags[..10.min(n)]),
        mean_abs_last_10: mean(&mags[n - 10.min(n)..]),
    })
}

/// Largest ∞-norm gap between the deep hidden trajectories of two tasks
/// driven by the same policy over one episode length.
pub fn h2_divergence(
    agent: &Agent,
    task_a: FoptdTask,
    task_b: FoptdTask,
    opts: &EvalOptions,
) -> Result<f64> {
    let mut la = AgentLoop::new(agent, task_a, opts)?;
    let mut lb = AgentLoop::new(agent, task_b, opts)?;
    let mut max_gap = 0.0f64;
    for _ in 0..opts.episode.n_steps {
        la.rl_step(None)?;
        lb.rl_step(None)?;
        let gap = la
            .hs
            .h2
            .iter()
            .zip(&lb.hs.h2)
            .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()));
        max_gap = max_gap.max(gap);
    }
    Ok(max_gap)
}

/// Which ablation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    /// Critic with vs without the true process parameters.
    PrivilegedCritic,
    /// Action regularization β = 0.5 vs β = 0.
    Regularization,
}

/// Paired-run ablation outcome. Arm A is the paper's configuration
/// (privileged / regularized); arm B is the ablated one.
#[derive(Debug, Clone)]
pub struct AblationResult {
    pub kind: AblationKind,
    pub arm_a: Agent,
    pub arm_b: Agent,
    /// Mean episode cost of the final training epoch, per arm.
    pub final_cost_a: f64,
    pub final_cost_b: f64,
    /// Worst asymptotic MSE over a small evaluation grid, per arm.
    pub worst_mse_a: f64,
    pub worst_mse_b: f64,
    /// Mean |action| over the last quarter of an evaluation episode, per arm
    /// (the regularization arm's headline metric).
    pub late_action_a: f64,
    pub late_action_b: f64,
}

/// Train both arms of an ablation from the same seed and budget, then
/// compare.
pub fn ablation(base: &TrainConfig, kind: AblationKind) -> Result<AblationResult> {
    let mut cfg_a = base.clone();
    let mut cfg_b = base.clone();
    match kind {
        AblationKind::PrivilegedCritic => {
            cfg_a.privileged = true;
            cfg_b.privileged = false;
        }
        AblationKind::Regularization => {
            cfg_a.episode.beta1 = 0.5;
            cfg_a.episode.beta2 = 0.5;
            cfg_b.episode.beta1 = 0.0;
            cfg_b.episode.beta2 = 0.0;
        }
    }
    let out_a = ppo::train(&cfg_a, |_| Ok(()))?;
    let out_b = ppo::train(&cfg_b, |_| Ok(()))?;
    let final_cost_a = out_a.log.last().map(|l| l.mean_cost).unwrap_or(f64::NAN);
    let final_cost_b = out_b.log.last().map(|l| l.mean_cost).unwrap_or(f64::NAN);

    let opts = EvalOptions {
        episode: base.episode.clone(),
        ..EvalOptions::default()
    };
    let mid_ratio = (base.ranges.ratio.0 + base.ranges.ratio.1) / 2.0;
    let mut worst_mse_a = 0.0f64;
    let mut worst_mse_b = 0.0f64;
    for &gain in &linspace(base.ranges.gain.0, base.ranges.gain.1, 3) {
        for &tau in &linspace(base.ranges.tau.0, base.ranges.tau.1, 3) {
            let task = FoptdTask {
                gain,
                tau,
                theta: mid_ratio * tau,
            };
            worst_mse_a = worst_mse_a.max(asymptotic_mse(&out_a.agent, task, &opts)?.mse);
            worst_mse_b = worst_mse_b.max(asymptotic_mse(&out_b.agent, task, &opts)?.mse);
        }
    }

    // Action-magnitude comparison on the center task.
    let center = FoptdTask {
        gain: (base.ranges.gain.0 + base.ranges.gain.1) / 2.0,
        tau: (base.ranges.tau.0 + base.ranges.tau.1) / 2.0,
        theta: mid_ratio * (base.ranges.tau.0 + base.ranges.tau.1) / 2.0,
    };
    let prof_a = episode_action_profile(&out_a.agent, center, &base.episode)?;
    let prof_b = episode_action_profile(&out_b.agent, center, &base.episode)?;

    Ok(AblationResult {
        kind,
        arm_a: out_a.agent,
        arm_b: out_b.agent,
        final_cost_a,
        final_cost_b,
        worst_mse_a,
        worst_mse_b,
        late_action_a: prof_a.mean_abs_last_quarter,
        late_action_b: prof_b.mean_abs_last_quarter,
    })
}

/// Record one full deterministic episode to a trajectory table; used by the
/// best/worst-case trajectory exports.
pub fn record_episode(
    agent: &Agent,
    task: FoptdTask,
    episode: &EpisodeConfig,
) -> Result<TrajectoryRecorder> {
    let mut env = FoptdEnv::with_initial_output(task, episode.clone(), 0.0)?;
    let mut hs = agent.initial_actor_state();
    let mut rec = TrajectoryRecorder::new();
    env.record_start(&mut rec);
    for _ in 0..episode.n_steps {
        let state = env.state();
        let a = agent.deterministic_action(&state, &mut hs, 1.0)?;
        env.step_recorded(a, Some(&mut rec))?;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_agent() -> Agent {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = Agent::new(
            AgentConfig {
                hidden: 8,
                ..AgentConfig::default()
            },
            &mut rng,
        );
        for v in agent.params.flat_mut() {
            *v = 0.0;
        }
        agent
    }

    #[test]
    fn zero_policy_converges_immediately() {
        // The zero-action policy never moves the gains: convergence time 0,
        // and the stability rule fires at the first opportunity.
        let agent = zero_agent();
        let task = FoptdTask::new(0.5, 1.0, 0.2).unwrap();
        let opts = EvalOptions::default();
        let t = convergence_time(&agent, task, 30, &opts).unwrap();
        assert_eq!(t, 0.0);
        let r = asymptotic_mse(&agent, task, &opts).unwrap();
        assert!(r.converged);
        assert_eq!((r.kp, r.ki), (0.05, 0.05));
        // Sluggish initial gains track poorly.
        assert!(r.mse > 0.05, "mse = {}", r.mse);
    }

    #[test]
    fn perfect_tracking_gives_zero_heatmap_metric() {
        // Inject y = y_desired by reusing the cost path directly.
        let y = vec![0.4; 20];
        let c = crate::env::step_cost(&y, &y, &GainDelta::zero(), 0.5, 0.5);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn degenerate_heatmap_is_single_cell() {
        let agent = zero_agent();
        let ranges = crate::env::TaskRanges {
            gain: (0.5, 0.5),
            tau: (1.0, 1.0),
            ratio: (0.2, 0.2),
        };
        let grid = heatmap(&agent, SliceSpec::FixedGain(0.5), &ranges, 1, &EvalOptions::default())
            .unwrap();
        assert_eq!(grid.cells.len(), 1);
        let single = asymptotic_mse(
            &agent,
            FoptdTask::new(0.5, 1.0, 0.2).unwrap(),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(grid.cells[0].mse, single.mse);
    }

    #[test]
    fn drift_no_change_keeps_runs_identical() {
        // A "ramp" of zero width from tau to tau: adaptive and frozen runs
        // produce identical gains (deterministic policy, no drift).
        let agent = zero_agent();
        let base = FoptdTask::new(0.5, 1.0, 0.2).unwrap();
        let r = drift_experiment(
            &agent,
            base,
            DriftScenario::TauRamp {
                from: 1.0,
                to: 1.0,
                duration: 11.0,
                scale_theta: false,
            },
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r.gains_pre, r.gains_post_adaptive);
        assert!((r.adaptive_mse - r.frozen_mse).abs() < 1e-15);
    }

    #[test]
    fn action_profile_zero_policy() {
        let agent = zero_agent();
        let task = FoptdTask::new(0.5, 1.0, 0.2).unwrap();
        let p = episode_action_profile(&agent, task, &EpisodeConfig::default()).unwrap();
        assert_eq!(p.mean_abs_first_10, 0.0);
        assert_eq!(p.mean_abs_last_10, 0.0);
    }
}
