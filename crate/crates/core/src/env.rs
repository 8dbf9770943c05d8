//! The meta-RL task environment.
//!
//! One task is a FOPTD process under PI control. The agent observes
//! `[k_p, k_i, e, ∫e]` every `rl_dt` time units, acts by incrementing the
//! gains, and pays the squared deviation from a target trajectory (the
//! setpoint passed through a first-order filter with time constant `2τ`,
//! delayed by `θ`) plus an L1 penalty on its increments.
//!
//! The loop itself runs much faster than the agent: the PI controller
//! executes at every integration sub-step `dt`, with 55 sub-steps per agent
//! step at the default configuration.

use rand::Rng;

use crate::pi::{PiController, PiGains};
use crate::sim::{DelayLine, FoptdSim, FoptdTask};
use crate::{Error, Result};

/// Output above which a closed loop is declared diverged.
const DIVERGE_Y: f64 = 1e6;

/// The 4-entry observation: `[kp, ki, e, ie]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlState {
    pub kp: f64,
    pub ki: f64,
    pub e: f64,
    pub ie: f64,
}

impl RlState {
    pub const DIM: usize = 4;

    pub fn as_array(&self) -> [f64; 4] {
        [self.kp, self.ki, self.e, self.ie]
    }
}

/// The 2-entry action: increments to the PI gains.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GainDelta {
    pub dkp: f64,
    pub dki: f64,
}

impl GainDelta {
    pub const DIM: usize = 2;

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn clamped(&self, delta_max: f64) -> Self {
        GainDelta {
            dkp: self.dkp.clamp(-delta_max, delta_max),
            dki: self.dki.clamp(-delta_max, delta_max),
        }
    }
}

/// Uniform sampling box for tasks.
#[derive(Debug, Clone, Copy)]
pub struct TaskRanges {
    pub gain: (f64, f64),
    pub tau: (f64, f64),
    /// Range for the ratio theta/tau.
    pub ratio: (f64, f64),
}

impl Default for TaskRanges {
    fn default() -> Self {
        TaskRanges {
            gain: (0.25, 1.0),
            tau: (0.25, 1.0),
            ratio: (0.0, 1.0),
        }
    }
}

/// Draw one task: gain and tau uniform, theta = ratio * tau with the ratio
/// uniform, which keeps theta <= tau.
pub fn sample_task<R: Rng>(rng: &mut R, ranges: &TaskRanges) -> FoptdTask {
    let gain = rng.gen_range(ranges.gain.0..=ranges.gain.1);
    let tau = rng.gen_range(ranges.tau.0..=ranges.tau.1);
    let ratio = rng.gen_range(ranges.ratio.0..=ranges.ratio.1);
    FoptdTask {
        gain,
        tau,
        theta: ratio * tau,
    }
}

/// Episode mechanics shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    /// Agent steps per episode.
    pub n_steps: usize,
    /// Agent sampling period (time units).
    pub rl_dt: f64,
    /// Integration sub-step.
    pub dt: f64,
    /// Setpoint alternation period.
    pub setpoint_period: f64,
    /// Initial controller tuning in standard form (K_c, tau_I).
    pub initial_kc: f64,
    pub initial_tau_i: f64,
    /// Per-step bound on each gain increment.
    pub delta_max: f64,
    /// Gains are clamped to [gain_lo, gain_hi] after each update.
    pub gain_lo: f64,
    pub gain_hi: f64,
    /// L1 penalties on the increments.
    pub beta1: f64,
    pub beta2: f64,
    /// Width of the uniform initial-output randomization.
    pub init_output_width: f64,
    /// Per-step cost cap for diverged loops.
    pub cost_cap: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            n_steps: 40,
            rl_dt: 2.75,
            dt: 0.05,
            setpoint_period: 11.0,
            initial_kc: 0.05,
            initial_tau_i: 1.0,
            delta_max: 0.1,
            gain_lo: 0.01,
            gain_hi: 3.0,
            beta1: 0.5,
            beta2: 0.5,
            init_output_width: 0.1,
            cost_cap: 1e3,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let sub = self.rl_dt / self.dt;
        if (sub - sub.round()).abs() > 1e-9 || sub < 1.0 {
            return Err(Error::Config(format!(
                "rl_dt ({}) must be an integer multiple of dt ({})",
                self.rl_dt, self.dt
            )));
        }
        let per = self.setpoint_period / self.rl_dt;
        if (per - per.round()).abs() > 1e-9 || per < 1.0 {
            return Err(Error::Config(format!(
                "setpoint_period ({}) must be an integer multiple of rl_dt ({})",
                self.setpoint_period, self.rl_dt
            )));
        }
        if !(self.delta_max > 0.0) || !(self.gain_hi > self.gain_lo) {
            return Err(Error::Config("bad action/gain bounds".into()));
        }
        Ok(())
    }

    pub fn substeps_per_step(&self) -> usize {
        (self.rl_dt / self.dt).round() as usize
    }

    pub fn substeps_per_setpoint_period(&self) -> u64 {
        (self.setpoint_period / self.dt).round() as u64
    }

    pub fn initial_gains(&self) -> PiGains {
        PiGains::from_standard(self.initial_kc, self.initial_tau_i)
    }

    /// The setpoint at sub-step index `k`: +1 on the first period, then
    /// alternating. Index-based so flips land exactly on step boundaries.
    pub fn setpoint_at_substep(&self, k: u64) -> f64 {
        let period = self.substeps_per_setpoint_period();
        if (k / period) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// First-order filter plus dead time producing the target trajectory.
#[derive(Debug, Clone)]
pub struct TargetFilter {
    yf: f64,
    delay: DelayLine,
}

impl TargetFilter {
    /// `initial` is the setpoint value just before the run starts: the filter
    /// begins at its fixed point for that setpoint.
    pub fn new(theta_capacity: f64, dt: f64, initial: f64) -> Self {
        TargetFilter {
            yf: initial,
            delay: DelayLine::new(theta_capacity, dt, initial),
        }
    }

    /// Advance one sub-step toward `sp` and return the delayed filter output.
    pub fn advance(&mut self, sp: f64, task: &FoptdTask, dt: f64) -> f64 {
        let a = (-dt / (2.0 * task.tau)).exp();
        self.yf = a * self.yf + (1.0 - a) * sp;
        self.delay.push(self.yf);
        self.delay.read_delayed_at(task.theta)
    }
}

/// Filter a full setpoint series into the target trajectory it induces.
///
/// `sp_initial` is the setpoint just before the series starts. Output sample
/// `i` corresponds to the time of setpoint sample `i` plus one `dt`.
pub fn target_trajectory(
    task: &FoptdTask,
    setpoints: &[f64],
    sp_initial: f64,
    dt: f64,
) -> Vec<f64> {
    let mut filter = TargetFilter::new(task.theta, dt, sp_initial);
    setpoints
        .iter()
        .map(|&sp| filter.advance(sp, task, dt))
        .collect()
}

/// Cost of one agent step: mean squared target deviation over the sub-step
/// window plus L1 penalties on the gain increments.
pub fn step_cost(
    y_samples: &[f64],
    y_desired_samples: &[f64],
    action: &GainDelta,
    beta1: f64,
    beta2: f64,
) -> f64 {
    assert_eq!(y_samples.len(), y_desired_samples.len());
    assert!(!y_samples.is_empty());
    let mse = y_samples
        .iter()
        .zip(y_desired_samples)
        .map(|(&y, &yd)| (yd - y) * (yd - y))
        .sum::<f64>()
        / y_samples.len() as f64;
    mse + beta1 * action.dkp.abs() + beta2 * action.dki.abs()
}

/// One sub-step record for trajectory export.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub t: f64,
    pub setpoint: f64,
    pub y: f64,
    pub y_desired: f64,
    pub u: f64,
    pub kp: f64,
    pub ki: f64,
    pub cost: f64,
}

/// Collects sub-step rows; the per-step cost is stamped retroactively when
/// the enclosing agent step completes.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    pub rows: Vec<TrajectoryRow>,
    step_start: usize,
}

impl TrajectoryRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record the pre-episode state as a first row (time 0, no input yet).
    /// Streams replayed through the online actor need this anchor sample.
    pub fn record_start(&mut self, setpoint: f64, y: f64, kp: f64, ki: f64) {
        self.push(TrajectoryRow {
            t: 0.0,
            setpoint,
            y,
            y_desired: 0.0,
            u: 0.0,
            kp,
            ki,
            cost: f64::NAN,
        });
    }

    fn push(&mut self, row: TrajectoryRow) {
        self.rows.push(row);
    }

    /// Stamp `cost` onto every row recorded since the previous step end.
    pub fn close_step(&mut self, cost: f64) {
        for row in &mut self.rows[self.step_start..] {
            row.cost = cost;
        }
        self.step_start = self.rows.len();
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,setpoint,y,y_desired,u,kp,ki,cost")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.t, r.setpoint, r.y, r.y_desired, r.u, r.kp, r.ki, r.cost
            )?;
        }
        Ok(())
    }
}

/// The closed loop advanced at sub-step resolution: process, controller and
/// target filter marching together.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub task: FoptdTask,
    pub sim: FoptdSim,
    pub ctrl: PiController,
    target: TargetFilter,
    /// Global sub-step index (time = k * dt).
    pub k: u64,
    dt: f64,
    diverged: bool,
}

impl ClosedLoop {
    pub fn new(task: FoptdTask, dt: f64, y0: f64, gains: PiGains) -> Result<Self> {
        if dt > task.tau / 5.0 + 1e-12 {
            return Err(Error::Config(format!(
                "dt = {dt} too coarse for tau = {} (need dt <= tau/5)",
                task.tau
            )));
        }
        Ok(ClosedLoop {
            task,
            sim: FoptdSim::new(&task, dt, y0, 0.0)?,
            ctrl: PiController::new(gains),
            target: TargetFilter::new(task.theta, dt, 0.0),
            k: 0,
            dt,
            diverged: false,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t(&self) -> f64 {
        self.k as f64 * self.dt
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Advance `n` sub-steps. Setpoints come from `sp_at` (indexed by global
    /// sub-step); process/target samples after each sub-step are appended to
    /// `y_buf` / `yd_buf`. Once the loop diverges it freezes and pads the
    /// buffers with the last finite values.
    pub fn run_substeps(
        &mut self,
        n: usize,
        sp_at: &mut dyn FnMut(u64) -> f64,
        y_buf: &mut Vec<f64>,
        yd_buf: &mut Vec<f64>,
        mut rec: Option<&mut TrajectoryRecorder>,
    ) {
        for _ in 0..n {
            let sp = sp_at(self.k);
            if self.diverged {
                y_buf.push(self.sim.y);
                yd_buf.push(self.target.yf);
                self.k += 1;
                continue;
            }
            let e = sp - self.sim.y;
            let u = self.ctrl.output(e, self.dt);
            let task = self.task;
            let y = match self.sim.step(&task, u) {
                Ok(y) => y,
                Err(_) => {
                    self.diverged = true;
                    self.k += 1;
                    y_buf.push(self.sim.y);
                    yd_buf.push(self.target.yf);
                    continue;
                }
            };
            let yd = self.target.advance(sp, &task, self.dt);
            if !y.is_finite() || y.abs() > DIVERGE_Y {
                self.diverged = true;
            }
            self.k += 1;
            y_buf.push(y);
            yd_buf.push(yd);
            if let Some(r) = rec.as_deref_mut() {
                // The row carries the setpoint in force at its own timestamp,
                // so stream replays see exactly what the agent saw.
                r.push(TrajectoryRow {
                    t: self.t(),
                    setpoint: sp_at(self.k),
                    y,
                    y_desired: yd,
                    u,
                    kp: self.ctrl.gains.kp,
                    ki: self.ctrl.gains.ki,
                    cost: f64::NAN,
                });
            }
        }
    }

    /// Observation at the current boundary, under setpoint `sp`.
    pub fn state(&self, sp: f64) -> RlState {
        RlState {
            kp: self.ctrl.gains.kp,
            ki: self.ctrl.gains.ki,
            e: sp - self.sim.y,
            ie: self.ctrl.integral,
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub state: RlState,
    pub cost: f64,
    pub done: bool,
    /// True when the cost was clamped at the cap (diverged loop).
    pub flagged: bool,
}

/// One training episode: a fixed-length run on a single task.
#[derive(Debug, Clone)]
pub struct FoptdEnv {
    pub cfg: EpisodeConfig,
    lp: ClosedLoop,
    step_idx: usize,
    done: bool,
    y_buf: Vec<f64>,
    yd_buf: Vec<f64>,
}

impl FoptdEnv {
    /// Start an episode with the output drawn uniformly near zero.
    pub fn new<R: Rng>(task: FoptdTask, cfg: EpisodeConfig, rng: &mut R) -> Result<Self> {
        let w = cfg.init_output_width;
        let y0 = rng.gen_range(-w..=w);
        Self::with_initial_output(task, cfg, y0)
    }

    /// Start an episode from a fixed initial output (deterministic runs).
    pub fn with_initial_output(task: FoptdTask, cfg: EpisodeConfig, y0: f64) -> Result<Self> {
        cfg.validate()?;
        let lp = ClosedLoop::new(task, cfg.dt, y0, cfg.initial_gains())?;
        Ok(FoptdEnv {
            cfg,
            lp,
            step_idx: 0,
            done: false,
            y_buf: Vec::new(),
            yd_buf: Vec::new(),
        })
    }

    pub fn task(&self) -> &FoptdTask {
        &self.lp.task
    }

    pub fn gains(&self) -> PiGains {
        self.lp.ctrl.gains
    }

    pub fn step_idx(&self) -> usize {
        self.step_idx
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Observation at the current agent boundary.
    pub fn state(&self) -> RlState {
        let sp = self.cfg.setpoint_at_substep(self.lp.k);
        self.lp.state(sp)
    }

    /// Anchor a recorder with the pre-episode row (call before stepping).
    pub fn record_start(&self, rec: &mut TrajectoryRecorder) {
        let s = self.state();
        rec.record_start(
            self.cfg.setpoint_at_substep(self.lp.k),
            self.lp.sim.y,
            s.kp,
            s.ki,
        );
    }

    /// Apply the gain increments, simulate one agent period, return the new
    /// observation and the step cost.
    pub fn step(&mut self, action: GainDelta) -> Result<StepOutcome> {
        self.step_recorded(action, None)
    }

    /// As [`step`](Self::step), optionally recording sub-step rows.
    pub fn step_recorded(
        &mut self,
        action: GainDelta,
        mut rec: Option<&mut TrajectoryRecorder>,
    ) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = action.clamped(self.cfg.delta_max);
        let g = &mut self.lp.ctrl.gains;
        g.kp = (g.kp + a.dkp).clamp(self.cfg.gain_lo, self.cfg.gain_hi);
        g.ki = (g.ki + a.dki).clamp(self.cfg.gain_lo, self.cfg.gain_hi);

        self.y_buf.clear();
        self.yd_buf.clear();
        let n = self.cfg.substeps_per_step();
        let cfg = self.cfg.clone();
        self.lp.run_substeps(
            n,
            &mut |k| cfg.setpoint_at_substep(k),
            &mut self.y_buf,
            &mut self.yd_buf,
            rec.as_deref_mut(),
        );

        let raw = step_cost(&self.y_buf, &self.yd_buf, &a, cfg.beta1, cfg.beta2);
        let flagged = !raw.is_finite() || raw > cfg.cost_cap || self.lp.diverged();
        let cost = if raw.is_finite() {
            raw.min(cfg.cost_cap)
        } else {
            cfg.cost_cap
        };
        if let Some(r) = rec {
            r.close_step(cost);
        }

        self.step_idx += 1;
        self.done = self.step_idx == self.cfg.n_steps;
        Ok(StepOutcome {
            state: self.state(),
            cost,
            done: self.done,
            flagged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_tasks_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ranges = TaskRanges::default();
        let mut k_sum = 0.0;
        let n = 200_000;
        for _ in 0..n {
            let t = sample_task(&mut rng, &ranges);
            assert!(t.in_training_box(), "task out of box: {t:?}");
            assert!(t.theta <= t.tau);
            k_sum += t.gain;
        }
        let mean = k_sum / n as f64;
        assert!((mean - 0.625).abs() < 0.002, "mean K = {mean}");
    }

    #[test]
    fn target_filter_step_response() {
        // Step -1 -> +1 at t = 0, tau = 1, theta = 0: y_des(2) = 1 - 2 e^{-1}.
        let task = FoptdTask::new(1.0, 1.0, 0.0).unwrap();
        let dt = 0.05f64;
        let n = (2.0 / dt).round() as usize;
        let sp = vec![1.0; n];
        let yd = target_trajectory(&task, &sp, -1.0, dt);
        let expect = 1.0 - 2.0 * (-1.0f64).exp();
        assert!((yd[n - 1] - expect).abs() < 1e-4, "yd = {}", yd[n - 1]);
    }

    #[test]
    fn target_filter_fixed_point() {
        let task = FoptdTask::new(1.0, 0.5, 0.2).unwrap();
        let sp = vec![0.7; 100];
        let yd = target_trajectory(&task, &sp, 0.7, 0.05);
        for v in yd {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn target_filter_pure_delay_head() {
        let task = FoptdTask::new(1.0, 1.0, 0.5).unwrap();
        let dt = 0.05;
        let sp = vec![1.0; 40];
        let yd = target_trajectory(&task, &sp, 0.0, dt);
        // For t < theta the delayed output equals the pre-step value 0.
        let head = (task.theta / dt).round() as usize;
        for (i, v) in yd.iter().enumerate().take(head - 1) {
            assert!(v.abs() < 1e-12, "i = {i}, v = {v}");
        }
        assert!(yd[head + 1] > 0.0);
    }

    #[test]
    fn cost_identity_and_arithmetic() {
        let y = vec![0.3; 10];
        assert_eq!(step_cost(&y, &y, &GainDelta::zero(), 0.5, 0.5), 0.0);
        let yd = vec![1.3; 10];
        let a = GainDelta { dkp: 0.1, dki: 0.0 };
        let c = step_cost(&y, &yd, &a, 0.5, 0.5);
        assert!((c - 1.05).abs() < 1e-12, "c = {c}");
    }

    #[test]
    fn gains_accumulate_and_clamp() {
        let task = FoptdTask::new(0.5, 1.0, 0.2).unwrap();
        let mut env =
            FoptdEnv::with_initial_output(task, EpisodeConfig::default(), 0.0).unwrap();
        let g0 = env.gains();
        assert_eq!((g0.kp, g0.ki), (0.05, 0.05));
        for _ in 0..5 {
            env.step(GainDelta { dkp: 0.1, dki: 0.05 }).unwrap();
        }
        let g = env.gains();
        assert!((g.kp - 0.55).abs() < 1e-12);
        assert!((g.ki - 0.30).abs() < 1e-12);
        // Oversized increments are clamped to delta_max.
        env.step(GainDelta { dkp: 5.0, dki: -5.0 }).unwrap();
        let g = env.gains();
        assert!((g.kp - 0.65).abs() < 1e-12);
        assert!((g.ki - 0.20).abs() < 1e-12);
    }

    #[test]
    fn setpoint_flips_every_four_steps() {
        let cfg = EpisodeConfig::default();
        let per = cfg.substeps_per_setpoint_period();
        let sub = cfg.substeps_per_step() as u64;
        assert_eq!(per, 4 * sub);
        assert_eq!(cfg.setpoint_at_substep(0), 1.0);
        assert_eq!(cfg.setpoint_at_substep(per - 1), 1.0);
        assert_eq!(cfg.setpoint_at_substep(per), -1.0);
        assert_eq!(cfg.setpoint_at_substep(2 * per), 1.0);
    }

    #[test]
    fn episode_terminates_after_n_steps() {
        let task = FoptdTask::new(0.5, 1.0, 0.2).unwrap();
        let mut env =
            FoptdEnv::with_initial_output(task, EpisodeConfig::default(), 0.0).unwrap();
        let mut dones = 0;
        for i in 0..40 {
            let out = env.step(GainDelta::zero()).unwrap();
            assert_eq!(out.done, i == 39);
            dones += out.done as u32;
        }
        assert_eq!(dones, 1);
        assert!(matches!(env.step(GainDelta::zero()), Err(Error::EpisodeDone)));
    }

    #[test]
    fn initial_gains_are_sluggish() {
        // Zero action forever: gains stay at (0.05, 0.05); tracking is poor.
        for task in [
            FoptdTask::new(0.5, 1.0, 0.2).unwrap(),
            FoptdTask::new(0.25, 0.25, 0.1).unwrap(),
            FoptdTask::new(1.0, 1.0, 1.0).unwrap(),
        ] {
            let mut env =
                FoptdEnv::with_initial_output(task, EpisodeConfig::default(), 0.0).unwrap();
            let mut total = 0.0;
            for _ in 0..40 {
                total += env.step(GainDelta::zero()).unwrap().cost;
            }
            let g = env.gains();
            assert_eq!((g.kp, g.ki), (0.05, 0.05));
            let mse = total / 40.0;
            assert!(mse > 0.05, "task {task:?} mse = {mse}");
        }
    }

    #[test]
    fn ie_matches_controller_integral() {
        let task = FoptdTask::new(0.5, 1.0, 0.2).unwrap();
        let mut env =
            FoptdEnv::with_initial_output(task, EpisodeConfig::default(), 0.0).unwrap();
        for _ in 0..10 {
            let out = env.step(GainDelta { dkp: 0.02, dki: 0.01 }).unwrap();
            assert_eq!(out.state.ie, env.lp.ctrl.integral);
        }
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let cfg = EpisodeConfig::default();
        let task = FoptdTask::new(0.6, 0.7, 0.3).unwrap();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut env = FoptdEnv::new(task, cfg.clone(), &mut rng).unwrap();
            let mut costs = Vec::new();
            for i in 0..40 {
                let a = GainDelta {
                    dkp: 0.01 * ((i % 3) as f64 - 1.0),
                    dki: 0.005,
                };
                costs.push(env.step(a).unwrap().cost);
            }
            costs
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn different_tasks_give_different_costs() {
        // Implicit identification: same actions, same init, different (K, tau)
        // => different cost sequences.
        let cfg = EpisodeConfig::default();
        let run = |task: FoptdTask| {
            let mut env = FoptdEnv::with_initial_output(task, cfg.clone(), 0.0).unwrap();
            (0..40)
                .map(|_| env.step(GainDelta::zero()).unwrap().cost)
                .collect::<Vec<_>>()
        };
        let c1 = run(FoptdTask::new(0.5, 1.0, 0.2).unwrap());
        let c2 = run(FoptdTask::new(0.9, 0.5, 0.2).unwrap());
        assert_ne!(c1, c2);
    }

    #[test]
    fn cost_cap_engages_on_divergence() {
        // Absurd gains on a delay-dominant task destabilize the loop; the
        // cost must cap and flag rather than poison downstream statistics.
        let task = FoptdTask::new(1.0, 0.25, 0.25).unwrap();
        let mut cfg = EpisodeConfig::default();
        cfg.gain_hi = 500.0;
        cfg.initial_kc = 400.0;
        cfg.initial_tau_i = 0.01;
        let mut env = FoptdEnv::with_initial_output(task, cfg.clone(), 0.0).unwrap();
        let mut saw_cap = false;
        for _ in 0..40 {
            let out = env.step(GainDelta::zero()).unwrap();
            assert!(out.cost.is_finite());
            assert!(out.cost <= cfg.cost_cap);
            saw_cap |= out.flagged;
        }
        assert!(saw_cap, "expected the cap to engage");
    }
}
