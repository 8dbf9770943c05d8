//! Nonlinear two-tank level process.
//!
//! An upper tank drains through an outflow pipe (Bernoulli, `f ∝ √(2gℓ)`)
//! and is replenished by a pump from a reservoir. Pump speed, inflow,
//! outflow and the level measurement are all first-order filtered. A fixed
//! inner PI loop drives the pump so the inflow tracks a flow setpoint; the
//! flow setpoint is the manipulated variable of the (tunable) outer level
//! loop.
//!
//! Internal units: length dm, time seconds, flow L/s. The published-style
//! interface units are cm for levels and L/min for flows.
//!
//! The gravitational constant is a calibration knob: it is chosen so the
//! FOPTD fit of the flow-setpoint → measured-level response around the
//! 55 cm operating point lands on gain ≈ 1.7 cm/(L/min), τ ≈ 55 s,
//! θ ≈ 13 s.

use crate::pi::{OutputLimits, PiController, PiGains};
use crate::sim::FoptdTask;
use crate::{Error, Result};

/// Fixed physical and filter constants.
#[derive(Debug, Clone)]
pub struct TwoTankParams {
    /// Tank radius, dm.
    pub r_tank: f64,
    /// Outflow pipe radius, dm.
    pub r_pipe: f64,
    /// Maximum pump flow, L/min.
    pub f_max: f64,
    /// Flow coefficient of the outflow pipe.
    pub f_c: f64,
    /// Pump, inflow, outflow and measurement time constants, seconds.
    pub tau_p: f64,
    pub tau_in: f64,
    pub tau_out: f64,
    pub tau_m: f64,
    /// Effective gravitational constant, dm/s² (calibrated).
    pub g: f64,
    /// Tank height, dm.
    pub height: f64,
    /// RK4 integration step, seconds.
    pub dt: f64,
}

impl Default for TwoTankParams {
    fn default() -> Self {
        TwoTankParams {
            r_tank: 1.2065,
            r_pipe: 0.125,
            f_max: 80.0,
            f_c: 0.61,
            tau_p: 6.0,
            tau_in: 6.0,
            tau_out: 6.0,
            tau_m: 12.0,
            g: 102.0,
            height: 12.192,
            dt: 0.5,
        }
    }
}

impl TwoTankParams {
    /// Tank cross-section, dm².
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.r_tank * self.r_tank
    }

    /// Effective outflow area times flow coefficient, dm².
    pub fn outflow_area(&self) -> f64 {
        std::f64::consts::PI * self.r_pipe * self.r_pipe * self.f_c
    }

    /// Steady outflow at a given level, L/s.
    pub fn outflow_at(&self, level: f64) -> f64 {
        self.outflow_area() * (2.0 * self.g * level.max(0.0)).sqrt()
    }

    /// Inflow (L/min) that holds the tank at `level_dm` in steady state.
    pub fn equilibrium_inflow_lmin(&self, level_dm: f64) -> f64 {
        self.outflow_at(level_dm) * 60.0
    }
}

/// Instantaneous state of the plant. Flows in L/s, lengths in dm, pump in %.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTankState {
    pub p: f64,
    pub f_in: f64,
    pub f_out: f64,
    pub level: f64,
    /// Filtered measured level.
    pub m: f64,
}

impl TwoTankState {
    /// Exact equilibrium at a given level (measurement settled).
    pub fn equilibrium(params: &TwoTankParams, level_dm: f64) -> Self {
        let f = params.outflow_at(level_dm);
        TwoTankState {
            p: 100.0 * f / (params.f_max / 60.0),
            f_in: f,
            f_out: f,
            level: level_dm,
            m: level_dm,
        }
    }
}

fn derivatives(s: &TwoTankState, pump_sp: f64, p: &TwoTankParams) -> [f64; 5] {
    let dp = (pump_sp - s.p) / p.tau_p;
    let f_target = (p.f_max / 60.0) * (s.p / 100.0);
    let dfin = (f_target - s.f_in) / p.tau_in;
    let dfout = (p.outflow_at(s.level) - s.f_out) / p.tau_out;
    let dlevel = (s.f_in - s.f_out) / p.area();
    let dm = (s.level - s.m) / p.tau_m;
    [dp, dfin, dfout, dlevel, dm]
}

fn add_scaled(s: &TwoTankState, d: &[f64; 5], h: f64) -> TwoTankState {
    TwoTankState {
        p: s.p + h * d[0],
        f_in: s.f_in + h * d[1],
        f_out: s.f_out + h * d[2],
        level: s.level + h * d[3],
        m: s.m + h * d[4],
    }
}

/// Advance the plant one RK4 step under a (clamped) pump-speed setpoint.
pub fn two_tank_step(state: &TwoTankState, pump_setpoint: f64, params: &TwoTankParams) -> TwoTankState {
    let sp = pump_setpoint.clamp(0.0, 100.0);
    let h = params.dt;
    let k1 = derivatives(state, sp, params);
    let s2 = add_scaled(state, &k1, h / 2.0);
    let k2 = derivatives(&s2, sp, params);
    let s3 = add_scaled(state, &k2, h / 2.0);
    let k3 = derivatives(&s3, sp, params);
    let s4 = add_scaled(state, &k3, h);
    let k4 = derivatives(&s4, sp, params);
    let mut out = *state;
    let w = h / 6.0;
    out.p = (state.p + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])).clamp(0.0, 100.0);
    out.f_in = (state.f_in + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])).max(0.0);
    out.f_out = (state.f_out + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])).max(0.0);
    out.level = (state.level + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]))
        .clamp(0.0, params.height);
    out.m = (state.m + w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])).max(0.0);
    out
}

/// Fixed inner-loop tuning for the flow controller (part of the plant).
pub fn flow_controller() -> PiController {
    // Percent output per L/min of flow error; integral time 8 s.
    PiController::with_limits(
        PiGains::from_standard(1.5, 8.0),
        OutputLimits { lo: 0.0, hi: 100.0 },
    )
}

/// The plant plus its fixed flow controller: input is a flow setpoint in
/// L/min, advanced one RK4 step at a time.
#[derive(Debug, Clone)]
pub struct TankCascade {
    pub params: TwoTankParams,
    pub state: TwoTankState,
    flow_pi: PiController,
    /// Elapsed simulated seconds.
    pub t: f64,
}

impl TankCascade {
    /// Start at the exact equilibrium for `level_dm`.
    pub fn at_level(params: TwoTankParams, level_dm: f64) -> Self {
        let state = TwoTankState::equilibrium(&params, level_dm);
        TankCascade {
            params,
            state,
            flow_pi: flow_controller(),
            t: 0.0,
        }
    }

    /// Advance one `dt` with the inner loop tracking `flow_sp_lmin`.
    pub fn step(&mut self, flow_sp_lmin: f64) -> &TwoTankState {
        let e = flow_sp_lmin - self.state.f_in * 60.0;
        let pump_sp = self.flow_pi.output(e, self.params.dt);
        self.state = two_tank_step(&self.state, pump_sp, &self.params);
        self.t += self.params.dt;
        &self.state
    }

    /// Run for `seconds` at a constant flow setpoint.
    pub fn run(&mut self, flow_sp_lmin: f64, seconds: f64) {
        let n = (seconds / self.params.dt).round() as usize;
        for _ in 0..n {
            self.step(flow_sp_lmin);
        }
    }
}

/// A fitted first-order-plus-dead-time approximation, in interface units:
/// gain cm/(L/min), times in seconds.
#[derive(Debug, Clone, Copy)]
pub struct FoptdFit {
    pub gain: f64,
    pub tau_s: f64,
    pub theta_s: f64,
    /// Sum of squared residuals of the fit.
    pub sse: f64,
}

impl FoptdFit {
    pub fn as_task(&self) -> FoptdTask {
        FoptdTask {
            gain: self.gain,
            tau: self.tau_s,
            theta: self.theta_s,
        }
    }
}

/// Least-squares FOPTD fit of a step response.
///
/// `t` and `y` sample the response; the input stepped by `u_step` at t = 0
/// from steady state `y0`. For each candidate (τ, θ) the gain has a closed
/// form; (τ, θ) are found by a coarse grid followed by local refinement.
pub fn fit_foptd_step_response(t: &[f64], y: &[f64], y0: f64, u_step: f64) -> Result<FoptdFit> {
    if t.len() != y.len() || t.len() < 10 {
        return Err(Error::Degenerate("need at least 10 response samples"));
    }
    if u_step == 0.0 {
        return Err(Error::Degenerate("zero input step"));
    }
    let t_end = *t.last().unwrap();

    let eval = |tau: f64, theta: f64| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for (ti, yi) in t.iter().zip(y) {
            let phi = if *ti <= theta {
                0.0
            } else {
                1.0 - (-(ti - theta) / tau).exp()
            };
            num += phi * (yi - y0);
            den += phi * phi;
        }
        if den == 0.0 {
            return (0.0, f64::INFINITY);
        }
        let k = num / (den * u_step);
        let mut sse = 0.0;
        for (ti, yi) in t.iter().zip(y) {
            let phi = if *ti <= theta {
                0.0
            } else {
                1.0 - (-(ti - theta) / tau).exp()
            };
            let model = y0 + k * u_step * phi;
            sse += (yi - model) * (yi - model);
        }
        (k, sse)
    };

    let mut best = (1.0, 0.0, f64::INFINITY, 0.0); // tau, theta, sse, k
    let mut tau_lo = t_end / 400.0;
    let mut tau_hi = t_end;
    let mut th_lo = 0.0;
    let mut th_hi = t_end / 3.0;
    for _round in 0..4 {
        for i in 0..40 {
            let tau = tau_lo * (tau_hi / tau_lo).powf(i as f64 / 39.0);
            for j in 0..30 {
                let theta = th_lo + (th_hi - th_lo) * j as f64 / 29.0;
                let (k, sse) = eval(tau, theta);
                if sse < best.2 {
                    best = (tau, theta, sse, k);
                }
            }
        }
        // Shrink the search box around the incumbent.
        let tau_span = (tau_hi / tau_lo).powf(0.12);
        tau_lo = best.0 / tau_span;
        tau_hi = best.0 * tau_span;
        let th_span = (th_hi - th_lo) * 0.12;
        th_lo = (best.1 - th_span).max(0.0);
        th_hi = best.1 + th_span;
    }
    Ok(FoptdFit {
        gain: best.3,
        tau_s: best.0,
        theta_s: best.1,
        sse: best.2,
    })
}

/// FOPTD approximation of the cascade around an operating level, obtained by
/// stepping the flow setpoint and fitting the measured-level response.
///
/// `operating_level_dm` must lie strictly inside (0, height). The step size
/// defaults to +2 L/min.
pub fn linearize_two_tank(
    params: &TwoTankParams,
    operating_level_dm: f64,
    step_lmin: f64,
) -> Result<FoptdFit> {
    if operating_level_dm <= 0.0 || operating_level_dm >= params.height {
        return Err(Error::FitInfeasible(operating_level_dm));
    }
    let f_eq = params.equilibrium_inflow_lmin(operating_level_dm);
    let mut sys = TankCascade::at_level(params.clone(), operating_level_dm);
    // Wash out any residual transient from the analytic equilibrium.
    sys.run(f_eq, 300.0);
    let y0 = sys.state.m;

    let horizon_s = 500.0;
    let n = (horizon_s / params.dt).round() as usize;
    let mut ts = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        sys.step(f_eq + step_lmin);
        ts.push((i + 1) as f64 * params.dt);
        ys.push((sys.state.m - y0) * 10.0); // response in cm
    }
    fit_foptd_step_response(&ts, &ys, 0.0, step_lmin)
}
