//! PI control in the `(k_p, k_i)` parameterization, plus SIMC reference
//! tunings for FOPTD processes.
//!
//! The standard form `C(s) = K_c (1 + 1/(τ_I s))` maps to `k_p = K_c`,
//! `k_i = K_c / τ_I`; the `(k_p, k_i)` form is what the tuning agent
//! manipulates because it stays numerically benign as `k_i → 0`.

use crate::sim::FoptdTask;
use crate::{Error, Result};

/// Controller gains in parallel form: `u = kp·e + ki·∫e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

impl PiGains {
    pub fn new(kp: f64, ki: f64) -> Self {
        PiGains { kp, ki }
    }

    /// From standard form `(K_c, τ_I)`. Exact for `tau_i > 0`.
    pub fn from_standard(kc: f64, tau_i: f64) -> Self {
        PiGains {
            kp: kc,
            ki: kc / tau_i,
        }
    }

    /// Back to standard form. `None` when `ki == 0` (pure P has no τ_I).
    pub fn to_standard(&self) -> Option<(f64, f64)> {
        if self.ki == 0.0 {
            None
        } else {
            Some((self.kp, self.kp / self.ki))
        }
    }
}

/// Output saturation limits with clamped-integral anti-windup.
#[derive(Debug, Clone, Copy)]
pub struct OutputLimits {
    pub lo: f64,
    pub hi: f64,
}

/// A running PI controller: gains plus the accumulated error integral.
///
/// The integral updates by the rectangle rule once per simulation sub-step
/// and already includes the current sub-step's contribution when the output
/// is formed.
#[derive(Debug, Clone)]
pub struct PiController {
    pub gains: PiGains,
    pub integral: f64,
    limits: Option<OutputLimits>,
}

impl PiController {
    pub fn new(gains: PiGains) -> Self {
        PiController {
            gains,
            integral: 0.0,
            limits: None,
        }
    }

    /// Saturating controller: output clamped to `limits`, with conditional
    /// integration (the integral does not accumulate further into a bound).
    pub fn with_limits(gains: PiGains, limits: OutputLimits) -> Self {
        PiController {
            gains,
            integral: 0.0,
            limits: Some(limits),
        }
    }

    /// Reset the integral for a new episode.
    pub fn reset(&mut self) {
        self.integral = 0.0;
    }

    /// Accumulate the current error and return the control output.
    pub fn output(&mut self, e: f64, dt: f64) -> f64 {
        let prev = self.integral;
        self.integral += e * dt;
        let u = self.gains.kp * e + self.gains.ki * self.integral;
        match self.limits {
            None => u,
            Some(l) => {
                if u > l.hi {
                    // Refuse integral growth that pushes deeper into the bound.
                    if e > 0.0 {
                        self.integral = prev;
                    }
                    let u2 = self.gains.kp * e + self.gains.ki * self.integral;
                    u2.clamp(l.lo, l.hi)
                } else if u < l.lo {
                    if e < 0.0 {
                        self.integral = prev;
                    }
                    let u2 = self.gains.kp * e + self.gains.ki * self.integral;
                    u2.clamp(l.lo, l.hi)
                } else {
                    u
                }
            }
        }
    }
}

/// SIMC PI tuning for a FOPTD process at desired closed-loop time constant
/// `tau_cl`. Returns the standard-form pair `(K_c, τ_I)`.
///
/// `K_c = τ / (K (τ_cl + θ))`, `τ_I = min(τ + θ/3, 4(τ_cl + θ))`.
pub fn simc_tune_standard(task: &FoptdTask, tau_cl: f64) -> Result<(f64, f64)> {
    if task.gain == 0.0 {
        return Err(Error::Config("SIMC requires a nonzero process gain".into()));
    }
    if !(tau_cl > 0.0) {
        return Err(Error::Config(format!("tau_cl must be > 0, got {tau_cl}")));
    }
    let kc = task.tau / (task.gain * (tau_cl + task.theta));
    let tau_i = (task.tau + task.theta / 3.0).min(4.0 * (tau_cl + task.theta));
    Ok((kc, tau_i))
}

/// SIMC tuning as parallel-form gains.
pub fn simc_tune(task: &FoptdTask, tau_cl: f64) -> Result<PiGains> {
    let (kc, tau_i) = simc_tune_standard(task, tau_cl)?;
    Ok(PiGains::from_standard(kc, tau_i))
}

/// The closed-loop time constant used throughout: `τ_cl = 2τ`.
pub fn default_tau_cl(task: &FoptdTask) -> f64 {
    2.0 * task.tau
}
