//! Data augmentation: running the tuning agent on the two-tank system.
//!
//! The agent only ever saw processes with gains in [0.25, 1] and time
//! constants in [0.25, 1]. A crude order-of-magnitude model of a new process
//! (gain, time constant) is enough to map its data into that box:
//!
//! - observations are centered by `y_offset` and divided by `y_scale`;
//! - the controller output is multiplied by `u_scale`, chosen so the crude
//!   gain appears as 0.5 (the geometric center of the training range);
//! - one agent step spans `sample_period` wall-clock seconds, chosen so the
//!   crude time constant appears as 0.5 of an agent time unit;
//! - `u_bias` is a constant flow holding the plant near the operating point.
//!
//! Inside the agent's frame, time is measured in units of `sample_period`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{GainDelta, RlState};
use crate::pi::{OutputLimits, PiController, PiGains};
use crate::tank::{TankCascade, TwoTankParams};
use crate::Result;

/// The data mapping between plant units and agent units.
#[derive(Debug, Clone, Copy)]
pub struct AugmentationSpec {
    /// Output centering value, cm.
    pub y_offset: f64,
    /// Output scale divisor, cm per scaled unit.
    pub y_scale: f64,
    /// Controller-output multiplier, L/min per scaled unit.
    pub u_scale: f64,
    /// Wall-clock seconds per agent step.
    pub sample_period: f64,
    /// Constant pre-applied flow, L/min.
    pub u_bias: f64,
}

/// Build the mapping from a crude model `(gain cm/(L/min), τ seconds)`.
///
/// The crude gain (in scaled output units) is centered to 0.5 and the crude
/// time constant to 0.5 agent units.
pub fn make_augmentation(
    crude_gain: f64,
    crude_tau_seconds: f64,
    y_center: f64,
    y_scale: f64,
) -> AugmentationSpec {
    assert!(crude_gain > 0.0 && crude_tau_seconds > 0.0 && y_scale > 0.0);
    AugmentationSpec {
        y_offset: y_center,
        y_scale,
        u_scale: 0.5 / (crude_gain / y_scale),
        sample_period: crude_tau_seconds / 0.5,
        u_bias: 0.0,
    }
}

impl AugmentationSpec {
    pub fn with_u_bias(mut self, u_bias_lmin: f64) -> Self {
        self.u_bias = u_bias_lmin;
        self
    }

    /// Map a measured level (cm) into the agent's observation space.
    pub fn scale_obs(&self, y_cm: f64) -> f64 {
        (y_cm - self.y_offset) / self.y_scale
    }

    /// How a true process gain (cm per L/min) appears to the agent.
    pub fn apparent_gain(&self, true_gain: f64) -> f64 {
        true_gain / self.y_scale * self.u_scale
    }

    /// How a true time constant (seconds) appears, in agent time units.
    pub fn apparent_tau(&self, true_tau_seconds: f64) -> f64 {
        true_tau_seconds / self.sample_period
    }
}

/// Outcome of one agent step on the augmented plant.
#[derive(Debug, Clone, Copy)]
pub struct TankStepOutcome {
    pub state: RlState,
    /// Squared scaled tracking error averaged over the step (report only).
    pub cost: f64,
    /// Plant snapshot at the step boundary.
    pub level_cm: f64,
    pub m_cm: f64,
    pub flow_sp_lmin: f64,
}

/// The two-tank plant seen through an [`AugmentationSpec`]: scaled
/// observations, scaled PI gains, one agent step per `sample_period`.
#[derive(Debug, Clone)]
pub struct TankEnv {
    pub sys: TankCascade,
    pub spec: AugmentationSpec,
    /// Level controller in scaled units.
    pub ctrl: PiController,
    pub delta_max: f64,
    pub gain_lo: f64,
    pub gain_hi: f64,
    /// Target-trajectory filter state (scaled units). Time constant is
    /// twice the crude apparent time constant (0.5), i.e. one agent unit.
    target: f64,
    /// Uniform measurement noise amplitude, cm (0 disables).
    pub noise_cm: f64,
    rng: ChaCha8Rng,
    /// Latest noisy scaled measurement (what the controller and agent see).
    last_obs: f64,
    last_sp_scaled: f64,
    last_flow_sp: f64,
}

impl TankEnv {
    /// Settle the plant at the operating point under `u_bias`, then hand
    /// control to the scaled PI controller with the standard slow initial
    /// tuning.
    pub fn new(
        params: TwoTankParams,
        spec: AugmentationSpec,
        noise_cm: f64,
        seed: u64,
    ) -> Self {
        let mut sys = TankCascade::at_level(params, spec.y_offset / 10.0);
        sys.run(spec.u_bias, 300.0);
        // Output limits in scaled controller units map to [0, f_max] L/min.
        let lo = (0.0 - spec.u_bias) / spec.u_scale;
        let hi = (sys.params.f_max - spec.u_bias) / spec.u_scale;
        let ctrl = PiController::with_limits(
            PiGains::from_standard(0.05, 1.0),
            OutputLimits { lo, hi },
        );
        let mut env = TankEnv {
            sys,
            spec,
            ctrl,
            delta_max: 0.1,
            gain_lo: 0.01,
            gain_hi: 3.0,
            target: 0.0,
            noise_cm,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_obs: 0.0,
            last_sp_scaled: 0.0,
            last_flow_sp: spec.u_bias,
        };
        env.last_obs = env.observe();
        env
    }

    fn observe(&mut self) -> f64 {
        let noise = if self.noise_cm > 0.0 {
            self.rng.gen_range(-self.noise_cm..=self.noise_cm)
        } else {
            0.0
        };
        self.spec.scale_obs(self.sys.state.m * 10.0 + noise)
    }

    /// Scaled observation state at the current step boundary.
    pub fn state(&self) -> RlState {
        RlState {
            kp: self.ctrl.gains.kp,
            ki: self.ctrl.gains.ki,
            e: self.last_sp_scaled - self.last_obs,
            ie: self.ctrl.integral,
        }
    }

    pub fn gains(&self) -> PiGains {
        self.ctrl.gains
    }

    pub fn elapsed_s(&self) -> f64 {
        self.sys.t
    }

    /// Apply gain increments and run one agent step (`sample_period`
    /// seconds). `sp_cm_at` gives the level setpoint in cm as a function of
    /// simulated seconds.
    pub fn step(
        &mut self,
        action: GainDelta,
        sp_cm_at: &mut dyn FnMut(f64) -> f64,
    ) -> Result<TankStepOutcome> {
        let a = action.clamped(self.delta_max);
        self.ctrl.gains.kp = (self.ctrl.gains.kp + a.dkp).clamp(self.gain_lo, self.gain_hi);
        self.ctrl.gains.ki = (self.ctrl.gains.ki + a.dki).clamp(self.gain_lo, self.gain_hi);

        let dt = self.sys.params.dt;
        let n = (self.spec.sample_period / dt).round() as usize;
        // Agent-frame sub-step: the agent's clock counts sample periods.
        let dtau = dt / self.spec.sample_period;
        let mut sq_sum = 0.0;
        for _ in 0..n {
            let sp_cm = sp_cm_at(self.sys.t);
            let sp_scaled = self.spec.scale_obs(sp_cm);
            let obs = self.observe();
            let e = sp_scaled - obs;
            let u_scaled = self.ctrl.output(e, dtau);
            let flow_sp = self.spec.u_bias + self.spec.u_scale * u_scaled;
            self.sys.step(flow_sp);
            // Crude-model target: first-order filter with time constant
            // 2 × 0.5 = 1 agent unit, no dead time.
            let alpha = (-dtau).exp();
            self.target = alpha * self.target + (1.0 - alpha) * sp_scaled;
            let obs_after = self.observe();
            sq_sum += (self.target - obs_after) * (self.target - obs_after);
            self.last_obs = obs_after;
            self.last_sp_scaled = sp_scaled;
            self.last_flow_sp = flow_sp;
        }
        let cost = sq_sum / n as f64 + 0.5 * a.dkp.abs() + 0.5 * a.dki.abs();
        Ok(TankStepOutcome {
            state: self.state(),
            cost,
            level_cm: self.sys.state.level * 10.0,
            m_cm: self.sys.state.m * 10.0,
            flow_sp_lmin: self.last_flow_sp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_augmentation_arithmetic() {
        // Crude model 1.2 cm/(L/min), 30 s; center 55 cm, scale 10.
        let spec = make_augmentation(1.2, 30.0, 55.0, 10.0);
        assert!((spec.u_scale - 0.5 / 0.12).abs() < 1e-12);
        assert!((spec.sample_period - 60.0).abs() < 1e-12);
        // True process (1.7, 55 s) appears as (0.71, 0.92).
        let g = spec.apparent_gain(1.7);
        assert!((g - 0.7083333333333334).abs() < 1e-12, "gain = {g}");
        assert!((g - 0.71).abs() < 0.005);
        let t = spec.apparent_tau(55.0);
        assert!((t - 55.0 / 60.0).abs() < 1e-12);
        assert!((t - 0.92).abs() < 0.005, "tau = {t}");
    }

    #[test]
    fn identity_augmentation() {
        // A crude gain already at 0.5 in scaled units leaves u unchanged.
        let spec = make_augmentation(0.5, 30.0, 0.0, 1.0);
        assert_eq!(spec.u_scale, 1.0);
        assert_eq!(spec.scale_obs(0.37), 0.37);
        assert_eq!(spec.sample_period, 60.0);
    }

    #[test]
    fn observation_centering() {
        let spec = make_augmentation(1.2, 30.0, 55.0, 10.0);
        assert_eq!(spec.scale_obs(55.0), 0.0);
        assert_eq!(spec.scale_obs(60.0), 0.5);
        assert_eq!(spec.scale_obs(50.0), -0.5);
    }

    #[test]
    fn noise_amplitude_scales() {
        let spec = make_augmentation(1.2, 30.0, 55.0, 10.0);
        // ±1 cm of measurement noise is ±0.1 in scaled units.
        let lo = spec.scale_obs(55.0 - 1.0);
        let hi = spec.scale_obs(55.0 + 1.0);
        assert!((lo + 0.1).abs() < 1e-12 && (hi - 0.1).abs() < 1e-12);
    }

    #[test]
    fn env_settles_and_steps() {
        let params = TwoTankParams::default();
        let u_bias = params.equilibrium_inflow_lmin(5.5);
        let spec = make_augmentation(1.2, 30.0, 55.0, 10.0).with_u_bias(u_bias);
        let mut env = TankEnv::new(params, spec, 0.0, 1);
        assert!((env.sys.state.m * 10.0 - 55.0).abs() < 0.5);
        // Hold the setpoint at the operating point: nothing should move.
        let out = env
            .step(GainDelta::zero(), &mut |_t| 55.0)
            .unwrap();
        assert!(out.cost < 1e-4, "cost = {}", out.cost);
        assert!((out.m_cm - 55.0).abs() < 0.2);
        // Step the setpoint to 60 cm: scaled error iis 0.5 at the boundary.
        let out = env.step(GainDelta::zero(), &mut |_t| 60.0).unwrap();
        assert!(out.state.e > 0.3, "e = {}", out.state.e);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let params = TwoTankParams::default();
        let u_bias = params.equilibrium_inflow_lmin(5.5);
        let spec = make_augmentation(1.2, 30.0, 55.0, 10.0).with_u_bias(u_bias);
        let run = |seed: u64| {
            let mut env = TankEnv::new(params.clone(), spec, 1.0, seed);
            let mut costs = Vec::new();
            for _ in 0..5 {
                costs.push(env.step(GainDelta::zero(), &mut |_t| 58.0).unwrap().cost);
            }
            costs
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}
