//! Discrete-time simulation of first-order-plus-time-delay (FOPTD) processes.
//!
//! The continuous model is `G(s) = K e^{-θs} / (τs + 1)`. Discretization is
//! exact zero-order-hold: with `a = exp(-dt/τ)`,
//!
//! ```text
//! y[k+1] = a · y[k] + K · (1 - a) · u(t_k - θ)
//! ```
//!
//! Dead time is realized by a ring buffer of past inputs; fractional dead
//! times are resolved by linear interpolation between the two nearest
//! entries, so θ is not restricted to a grid.

use crate::{Error, Result};

/// One sampled process: a point in the task distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoptdTask {
    /// Process gain (output units per input unit).
    pub gain: f64,
    /// Time constant, > 0.
    pub tau: f64,
    /// Dead time, >= 0.
    pub theta: f64,
}

impl FoptdTask {
    pub fn new(gain: f64, tau: f64, theta: f64) -> Result<Self> {
        if !(gain.is_finite() && tau.is_finite() && theta.is_finite()) {
            return Err(Error::NonFinite("FoptdTask parameters"));
        }
        if tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {tau}")));
        }
        if theta < 0.0 {
            return Err(Error::Config(format!("theta must be >= 0, got {theta}")));
        }
        Ok(Self { gain, tau, theta })
    }

    /// True when the task lies inside the training distribution box
    /// (K in [0.25, 1], tau in [0.25, 1], theta/tau in [0, 1]).
    pub fn in_training_box(&self) -> bool {
        (0.25..=1.0).contains(&self.gain)
            && (0.25..=1.0).contains(&self.tau)
            && self.theta >= 0.0
            && self.theta <= self.tau
    }
}

/// Ring buffer holding a signal's recent history for dead-time lookup.
///
/// `push` registers the value at the current instant; `read_delayed` then
/// returns the value `theta` time units in the past, linearly interpolated.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: Vec<f64>,
    head: usize,
    dt: f64,
    theta: f64,
}

impl DelayLine {
    /// Capacity is fixed at construction: `ceil(theta/dt) + 1` slots.
    pub fn new(theta: f64, dt: f64, initial: f64) -> Self {
        assert!(dt > 0.0 && theta >= 0.0);
        let slots = (theta / dt).ceil() as usize + 1;
        DelayLine {
            buf: vec![initial; slots],
            head: 0,
            dt,
            theta,
        }
    }

    pub fn push(&mut self, value: f64) {
        self.head = (self.head + 1) % self.buf.len();
        self.buf[self.head] = value;
    }

    /// Value `theta` time units before the most recent `push`.
    pub fn read_delayed(&self) -> f64 {
        self.read_delayed_at(self.theta)
    }

    /// Interpolated read at an arbitrary delay within capacity. Allows the
    /// effective dead time to drift below the line's sizing delay.
    pub fn read_delayed_at(&self, theta: f64) -> f64 {
        debug_assert!(theta >= 0.0 && theta <= (self.buf.len() - 1) as f64 * self.dt + 1e-9);
        let steps = theta / self.dt;
        let m = steps.floor();
        let frac = steps - m;
        let m = m as usize;
        let at = |back: usize| {
            let idx = (self.head + self.buf.len() - back % self.buf.len()) % self.buf.len();
            self.buf[idx]
        };
        if frac == 0.0 {
            at(m)
        } else {
            (1.0 - frac) * at(m) + frac * at(m + 1)
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Simulation state for one FOPTD process instance.
#[derive(Debug, Clone)]
pub struct FoptdSim {
    /// Current process output.
    pub y: f64,
    delay: DelayLine,
    dt: f64,
}

impl FoptdSim {
    /// Build a simulator for `task` at integration step `dt`.
    ///
    /// The zero-order-hold recursion is exact at any `dt`; callers that close
    /// a loop around the process are responsible for choosing a resolving
    /// step (the environment layer uses `dt <= tau/5`). The input history is
    /// initialized to `u_init` (what the process saw before t = 0).
    pub fn new(task: &FoptdTask, dt: f64, y0: f64, u_init: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        Ok(FoptdSim {
            y: y0,
            delay: DelayLine::new(task.theta, dt, u_init),
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance one step under control input `u`, returning the new output.
    ///
    /// `task` is passed per call so slowly drifting dynamics can be simulated
    /// with the same state (the dead-time line is sized at construction and
    /// bounds the largest representable theta).
    pub fn step(&mut self, task: &FoptdTask, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::NonFinite("control input"));
        }
        self.delay.push(u);
        let u_delayed = self.delay.read_delayed_at(task.theta);
        let a = (-self.dt / task.tau).exp();
        self.y = a * self.y + task.gain * (1.0 - a) * u_delayed;
        Ok(self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analytic step response of K e^{-θs}/(τs+1) to a unit step at t = 0.
    fn analytic_step(task: &FoptdTask, t: f64) -> f64 {
        if t <= task.theta {
            0.0
        } else {
            task.gain * (1.0 - (-(t - task.theta) / task.tau).exp())
        }
    }

    #[test]
    fn step_response_matches_analytic_no_delay() {
        let task = FoptdTask::new(1.0, 1.0, 0.0).unwrap();
        let dt = 0.05;
        let mut sim = FoptdSim::new(&task, dt, 0.0, 0.0).unwrap();
        let n = (1.0 / dt).round() as usize;
        let mut y = 0.0;
        for _ in 0..n {
            y = sim.step(&task, 1.0).unwrap();
        }
        assert!((y - 0.632_120_558_8).abs() < 1e-6, "y = {y}");
    }

    #[test]
    fn half_life_step_is_exact() {
        // dt = tau ln 2, theta = 0, u = 0, y = 1 -> y' = 1/2 exactly.
        let task = FoptdTask::new(1.0, 1.0, 0.0).unwrap();
        let dt = std::f64::consts::LN_2;
        let mut sim = FoptdSim::new(&task, dt, 1.0, 0.0).unwrap();
        let y = sim.step(&task, 0.0).unwrap();
        assert!((y - 0.5).abs() < 1e-15, "y = {y}");
    }

    #[test]
    fn delayed_step_response_matches_analytic() {
        let task = FoptdTask::new(0.5, 1.0, 0.2).unwrap();
        let dt = 0.05;
        let mut sim = FoptdSim::new(&task, dt, 0.0, 0.0).unwrap();
        let n = (1.2 / dt).round() as usize;
        let mut y = 0.0;
        for _ in 0..n {
            y = sim.step(&task, 1.0).unwrap();
        }
        let expect = 0.5 * (1.0 - (-1.0f64).exp());
        assert!((y - expect).abs() < 1e-6, "y = {y}, expect = {expect}");
        assert!((y - 0.3161).abs() < 5e-5);
    }

    #[test]
    fn zoh_exact_across_grid_delays() {
        // theta an integer multiple of dt: every sample matches analytic.
        let dt = 0.05;
        let task = FoptdTask::new(0.8, 0.6, 4.0 * dt).unwrap();
        let mut sim = FoptdSim::new(&task, dt, 0.0, 0.0).unwrap();
        for k in 1..=200 {
            let y = sim.step(&task, 1.0).unwrap();
            let t = k as f64 * dt;
            assert!(
                (y - analytic_step(&task, t)).abs() < 1e-9,
                "t = {t}, y = {y}"
            );
        }
    }

    #[test]
    fn fractional_delay_interpolates() {
        // theta = 2.5 dt: response lies between the 2dt and 3dt responses.
        let dt = 0.05;
        let gain = 1.0;
        let run = |theta: f64| {
            let task = FoptdTask::new(gain, 1.0, theta).unwrap();
            let mut sim = FoptdSim::new(&task, dt, 0.0, 0.0).unwrap();
            let mut out = Vec::new();
            for _ in 0..40 {
                out.push(sim.step(&task, 1.0).unwrap());
            }
            out
        };
        let lo = run(2.0 * dt);
        let mid = run(2.5 * dt);
        let hi = run(3.0 * dt);
        for k in 0..40 {
            assert!(
                mid[k] <= lo[k] + 1e-12 && mid[k] >= hi[k] - 1e-12,
                "k = {k}: {} {} {}",
                lo[k],
                mid[k],
                hi[k]
            );
        }
    }

    #[test]
    fn rejects_nonfinite_input() {
        let task = FoptdTask::new(1.0, 1.0, 0.0).unwrap();
        let mut sim = FoptdSim::new(&task, 0.05, 0.0, 0.0).unwrap();
        assert!(sim.step(&task, f64::NAN).is_err());
        assert!(sim.step(&task, f64::INFINITY).is_err());
    }

    #[test]
    fn linearity_from_zero_state() {
        let task = FoptdTask::new(0.7, 0.4, 0.13).unwrap();
        let dt = 0.05;
        let inputs1: Vec<f64> = (0..80).map(|k| ((k as f64) * 0.3).sin()).collect();
        let inputs2: Vec<f64> = (0..80).map(|k| ((k as f64) * 0.11).cos()).collect();
        let run = |u: &dyn Fn(usize) -> f64| {
            let mut sim = FoptdSim::new(&task, dt, 0.0, 0.0).unwrap();
            (0..80)
                .map(|k| sim.step(&task, u(k)).unwrap())
                .collect::<Vec<_>>()
        };
        let y1 = run(&|k| inputs1[k]);
        let y2 = run(&|k| inputs2[k]);
        let y12 = run(&|k| inputs1[k] + inputs2[k]);
        for k in 0..80 {
            assert!((y12[k] - y1[k] - y2[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn time_scaling_is_sample_exact_for_power_of_two() {
        let dt = 0.05;
        let c = 2.0;
        let t1 = FoptdTask::new(0.6, 0.5, 0.25).unwrap();
        let t2 = FoptdTask::new(0.6, c * 0.5, c * 0.25).unwrap();
        let mut s1 = FoptdSim::new(&t1, dt, 0.1, 0.0).unwrap();
        let mut s2 = FoptdSim::new(&t2, c * dt, 0.1, 0.0).unwrap();
        for k in 0..200 {
            let u = ((k as f64) * 0.17).sin();
            let y1 = s1.step(&t1, u).unwrap();
            let y2 = s2.step(&t2, u).unwrap();
            assert_eq!(y1, y2, "k = {k}");
        }
    }

    #[test]
    fn task_validation() {
        assert!(FoptdTask::new(1.0, 0.0, 0.0).is_err());
        assert!(FoptdTask::new(1.0, 1.0, -0.1).is_err());
        assert!(FoptdTask::new(f64::NAN, 1.0, 0.0).is_err());
        assert!(FoptdTask::new(0.5, 0.5, 0.5).unwrap().in_training_box());
        assert!(!FoptdTask::new(0.5, 0.5, 0.6).unwrap().in_training_box());
    }
}
