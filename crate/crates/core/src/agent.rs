//! The tuning agent: a recurrent actor and a privileged feedforward critic.
//!
//! The actor is two stacked GRU layers followed by two dense layers that
//! output the mean of a diagonal Gaussian in pre-squash space; actions are
//! `Δ_max · tanh(mean + σ·noise)` with a global learned `log σ`. Only the
//! actor runs online; it sees nothing but the RL state.
//!
//! The critic exists for offline training. It is feedforward and conditions
//! on privileged information: the true process parameters and the actor's
//! deep hidden state (treated as a constant input, so no value gradient
//! leaks into the recurrent layers).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{GainDelta, RlState};
use crate::nn::gru::{dense_taped, GruLeaves};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::{
    dense_forward, gaussian_logprob, squash_log_det, Activation, GruCell, ParamId, ParamSet,
};
use crate::{Error, Result};

/// Observation features are clamped to this bound before entering the
/// network, so a diverged loop cannot poison the forward pass. Far outside
/// anything a sane closed loop produces.
const FEATURE_CLAMP: f64 = 1e3;

/// Structural sizes and policy constants of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Width of both GRU layers, the actor dense layer and critic layers.
    pub hidden: usize,
    /// Whether the critic input includes the true process parameters.
    pub privileged: bool,
    /// Action bound: each gain increment lies in [-delta_max, delta_max].
    pub delta_max: f64,
    /// Initial policy standard deviation (pre-squash space).
    pub sigma_init: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: 100,
            privileged: true,
            delta_max: 0.1,
            sigma_init: 0.5,
        }
    }
}

/// The two GRU hidden vectors carried across steps. `h2` is the deep hidden
/// state: the critic conditions on it and the hidden-state analysis projects
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorState {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

impl ActorState {
    pub fn zeros(hidden: usize) -> Self {
        ActorState {
            h1: vec![0.0; hidden],
            h2: vec![0.0; hidden],
        }
    }

    /// Reset at episode start.
    pub fn reset(&mut self) {
        self.h1.iter_mut().for_each(|v| *v = 0.0);
        self.h2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Training-time extra information for the critic. Never touches the actor.
#[derive(Debug, Clone)]
pub struct PrivilegedInfo {
    pub gain: f64,
    pub tau: f64,
    pub theta: f64,
    /// Snapshot of the actor's h2 after it processed the same state.
    pub deep_hidden: Vec<f64>,
}

/// One stochastic policy evaluation.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// Pre-squash Gaussian mean.
    pub mean: [f64; 2],
    pub log_std: [f64; 2],
    /// The Gaussian sample v; the action is delta_max * tanh(v).
    pub presquash: [f64; 2],
    pub action: GainDelta,
    /// Log-density of `action`, including the tanh change-of-variables term.
    pub log_prob: f64,
}

/// Actor + critic parameters and layout.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub params: ParamSet,
    gru1: GruCell,
    gru2: GruCell,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    log_std: ParamId,
    cr1_w: ParamId,
    cr1_b: ParamId,
    cr2_w: ParamId,
    cr2_b: ParamId,
    cr3_w: ParamId,
    cr3_b: ParamId,
}

impl Agent {
    pub fn new<R: Rng>(cfg: AgentConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let mut params = ParamSet::new();
        let gru1 = GruCell::register(&mut params, "actor.gru1", RlState::DIM, h, rng);
        let gru2 = GruCell::register(&mut params, "actor.gru2", h, h, rng);
        let fc1_w = params.add_uniform("actor.fc1.w", h, h, rng);
        let fc1_b = params.add_zeros("actor.fc1.b", h, 1);
        let fc2_w = params.add_uniform("actor.fc2.w", GainDelta::DIM, h, rng);
        let fc2_b = params.add_zeros("actor.fc2.b", GainDelta::DIM, 1);
        let log_std = params.add_zeros("actor.log_std", GainDelta::DIM, 1);
        for v in params.slice_mut(log_std) {
            *v = cfg.sigma_init.ln();
        }
        let d = Self::critic_input_dim_for(&cfg);
        let cr1_w = params.add_uniform("critic.fc1.w", h, d, rng);
        let cr1_b = params.add_zeros("critic.fc1.b", h, 1);
        let cr2_w = params.add_uniform("critic.fc2.w", h, h, rng);
        let cr2_b = params.add_zeros("critic.fc2.b", h, 1);
        let cr3_w = params.add_uniform("critic.fc3.w", 1, h, rng);
        let cr3_b = params.add_zeros("critic.fc3.b", 1, 1);
        Agent {
            cfg,
            params,
            gru1,
            gru2,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            log_std,
            cr1_w,
            cr1_b,
            cr2_w,
            cr2_b,
            cr3_w,
            cr3_b,
        }
    }

    fn critic_input_dim_for(cfg: &AgentConfig) -> usize {
        RlState::DIM + if cfg.privileged { 3 } else { 0 } + cfg.hidden
    }

    /// Critic input width: 4 + 3 + hidden with privileged information,
    /// 4 + hidden without.
    pub fn critic_input_dim(&self) -> usize {
        Self::critic_input_dim_for(&self.cfg)
    }

    /// Number of leading flat parameters belonging to the actor (everything
    /// before the critic tensors, including log_std). The actor and critic
    /// optimize over disjoint flat ranges.
    pub fn actor_param_len(&self) -> usize {
        self.params.entry(self.cr1_w).offset
    }

    pub fn initial_actor_state(&self) -> ActorState {
        ActorState::zeros(self.cfg.hidden)
    }

    pub fn log_std_values(&self) -> [f64; 2] {
        let s = self.params.slice(self.log_std);
        [s[0], s[1]]
    }

    pub fn log_std_param(&self) -> ParamId {
        self.log_std
    }

    fn features(state: &RlState) -> [f64; 4] {
        let mut f = state.as_array();
        for v in &mut f {
            *v = v.clamp(-FEATURE_CLAMP, FEATURE_CLAMP);
        }
        f
    }

    /// Advance the recurrent trunk one step and return the pre-squash policy
    /// mean. `forget` is 1 during training, 0.99 in continuous operation.
    pub fn actor_forward(
        &self,
        state: &RlState,
        actor_state: &mut ActorState,
        forget: f64,
    ) -> Result<[f64; 2]> {
        let x = Self::features(state);
        let mut h1_new = vec![0.0; self.cfg.hidden];
        self.gru1
            .step_plain(&self.params, &x, &actor_state.h1, forget, &mut h1_new)?;
        let mut h2_new = vec![0.0; self.cfg.hidden];
        self.gru2
            .step_plain(&self.params, &h1_new, &actor_state.h2, forget, &mut h2_new)?;
        let mut hid = vec![0.0; self.cfg.hidden];
        dense_forward(
            &self.params,
            self.fc1_w,
            self.fc1_b,
            Activation::LeakyRelu,
            &h2_new,
            &mut hid,
        )?;
        let mut mean = [0.0; 2];
        dense_forward(
            &self.params,
            self.fc2_w,
            self.fc2_b,
            Activation::Identity,
            &hid,
            &mut mean,
        )?;
        actor_state.h1 = h1_new;
        actor_state.h2 = h2_new;
        Ok(mean)
    }

    /// Sample a stochastic action from the policy mean.
    pub fn sample_action<R: Rng>(&self, mean: [f64; 2], rng: &mut R) -> PolicyOutput {
        let log_std = self.log_std_values();
        let mut presquash = [0.0; 2];
        for j in 0..2 {
            let noise: f64 = rng.sample(StandardNormal);
            presquash[j] = mean[j] + log_std[j].exp() * noise;
        }
        self.policy_output(mean, presquash)
    }

    /// Policy output for a given pre-squash sample (used when replaying).
    pub fn policy_output(&self, mean: [f64; 2], presquash: [f64; 2]) -> PolicyOutput {
        let log_std = self.log_std_values();
        let lp_gauss = gaussian_logprob(&mean, &log_std, &presquash);
        let log_prob = lp_gauss - squash_log_det(&presquash, self.cfg.delta_max);
        let action = GainDelta {
            dkp: self.cfg.delta_max * presquash[0].tanh(),
            dki: self.cfg.delta_max * presquash[1].tanh(),
        };
        PolicyOutput {
            mean,
            log_std,
            presquash,
            action,
            log_prob,
        }
    }

    /// Noise-free action used for every evaluation experiment.
    pub fn deterministic_action(
        &self,
        state: &RlState,
        actor_state: &mut ActorState,
        forget: f64,
    ) -> Result<GainDelta> {
        let mean = self.actor_forward(state, actor_state, forget)?;
        Ok(GainDelta {
            dkp: self.cfg.delta_max * mean[0].tanh(),
            dki: self.cfg.delta_max * mean[1].tanh(),
        })
    }

    /// Assemble the critic input vector:
    /// `[state(4), K, τ, θ (privileged only), deep_hidden]`.
    pub fn critic_input(&self, state: &RlState, info: &PrivilegedInfo) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.critic_input_dim());
        x.extend_from_slice(&Self::features(state));
        if self.cfg.privileged {
            x.push(info.gain);
            x.push(info.tau);
            x.push(info.theta);
        }
        x.extend_from_slice(&info.deep_hidden);
        x
    }

    /// Estimated discounted future cost for `state` given the privileged
    /// context.
    pub fn critic_forward(&self, state: &RlState, info: &PrivilegedInfo) -> Result<f64> {
        let x = self.critic_input(state, info);
        if x.len() != self.critic_input_dim() {
            return Err(Error::Shape {
                context: "critic input",
                expected: self.critic_input_dim(),
                got: x.len(),
            });
        }
        let mut h1 = vec![0.0; self.cfg.hidden];
        dense_forward(
            &self.params,
            self.cr1_w,
            self.cr1_b,
            Activation::LeakyRelu,
            &x,
            &mut h1,
        )?;
        let mut h2 = vec![0.0; self.cfg.hidden];
        dense_forward(
            &self.params,
            self.cr2_w,
            self.cr2_b,
            Activation::LeakyRelu,
            &h1,
            &mut h2,
        )?;
        let mut out = [0.0];
        dense_forward(
            &self.params,
            self.cr3_w,
            self.cr3_b,
            Activation::Identity,
            &h2,
            &mut out,
        )?;
        Ok(out[0])
    }

    /// Insert actor parameter leaves into a tape for sequence replay.
    pub fn actor_leaves(&self, tape: &mut Tape) -> ActorLeaves {
        ActorLeaves {
            gru1: self.gru1.leaves(tape, &self.params),
            gru2: self.gru2.leaves(tape, &self.params),
            fc1_w: tape.param(&self.params, self.fc1_w),
            fc1_b: tape.param(&self.params, self.fc1_b),
            fc2_w: tape.param(&self.params, self.fc2_w),
            fc2_b: tape.param(&self.params, self.fc2_b),
            log_std: tape.param(&self.params, self.log_std),
        }
    }

    /// Taped mirror of [`actor_forward`](Self::actor_forward); returns the
    /// mean node and the advanced hidden nodes.
    pub fn actor_step_taped(
        &self,
        tape: &mut Tape,
        leaves: &ActorLeaves,
        state: &RlState,
        h1: NodeId,
        h2: NodeId,
        forget: f64,
    ) -> (NodeId, NodeId, NodeId) {
        let x = tape.constant(&Self::features(state));
        let h1_new = self.gru1.step_taped(tape, &leaves.gru1, x, h1, forget);
        let h2_new = self.gru2.step_taped(tape, &leaves.gru2, h1_new, h2, forget);
        let hid = dense_taped(
            tape,
            leaves.fc1_w,
            leaves.fc1_b,
            Activation::LeakyRelu,
            h2_new,
        );
        let mean = dense_taped(
            tape,
            leaves.fc2_w,
            leaves.fc2_b,
            Activation::Identity,
            hid,
        );
        (mean, h1_new, h2_new)
    }

    /// Insert critic parameter leaves into a tape.
    pub fn critic_leaves(&self, tape: &mut Tape) -> CriticLeaves {
        CriticLeaves {
            w1: tape.param(&self.params, self.cr1_w),
            b1: tape.param(&self.params, self.cr1_b),
            w2: tape.param(&self.params, self.cr2_w),
            b2: tape.param(&self.params, self.cr2_b),
            w3: tape.param(&self.params, self.cr3_w),
            b3: tape.param(&self.params, self.cr3_b),
        }
    }

    /// Taped mirror of [`critic_forward`](Self::critic_forward). The input
    /// (including the deep hidden snapshot) enters as a constant: no value
    /// gradient reaches the actor.
    pub fn critic_taped(
        &self,
        tape: &mut Tape,
        leaves: &CriticLeaves,
        state: &RlState,
        info: &PrivilegedInfo,
    ) -> NodeId {
        let x = self.critic_input(state, info);
        let xn = tape.constant(&x);
        let h1 = dense_taped(tape, leaves.w1, leaves.b1, Activation::LeakyRelu, xn);
        let h2 = dense_taped(tape, leaves.w2, leaves.b2, Activation::LeakyRelu, h1);
        dense_taped(tape, leaves.w3, leaves.b3, Activation::Identity, h2)
    }
}

/// Actor parameter nodes on one tape.
#[derive(Debug, Clone, Copy)]
pub struct ActorLeaves {
    pub gru1: GruLeaves,
    pub gru2: GruLeaves,
    pub fc1_w: NodeId,
    pub fc1_b: NodeId,
    pub fc2_w: NodeId,
    pub fc2_b: NodeId,
    pub log_std: NodeId,
}

/// Critic parameter nodes on one tape.
#[derive(Debug, Clone, Copy)]
pub struct CriticLeaves {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub w3: NodeId,
    pub b3: NodeId,
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"MTCK";
const CKPT_VERSION: u32 = 1;

/// Serialize the agent: magic, version, metadata strings, then every tensor
/// tagged with name and shape, payload little-endian f64. The agent's
/// structural config rides along in reserved metadata keys.
pub fn save_checkpoint<W: Write>(
    agent: &Agent,
    metadata: &BTreeMap<String, String>,
    mut w: W,
) -> Result<()> {
    let mut meta = metadata.clone();
    meta.insert("agent.hidden".into(), agent.cfg.hidden.to_string());
    meta.insert(
        "agent.privileged".into(),
        (agent.cfg.privileged as u8).to_string(),
    );
    meta.insert(
        "agent.delta_max".into(),
        format!("{:?}", agent.cfg.delta_max),
    );
    meta.insert(
        "agent.sigma_init".into(),
        format!("{:?}", agent.cfg.sigma_init),
    );

    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    for (k, v) in &meta {
        write_str(&mut w, k)?;
        write_str(&mut w, v)?;
    }
    let entries = agent.params.entries();
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        write_str(&mut w, &e.name)?;
        w.write_all(&(e.rows as u32).to_le_bytes())?;
        w.write_all(&(e.cols as u32).to_le_bytes())?;
        let data = &agent.params.flat()[e.offset..e.offset + e.rows * e.cols];
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Load an agent plus its metadata.
pub fn load_checkpoint<R: Read>(mut r: R) -> Result<(Agent, BTreeMap<String, String>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CKPT_VERSION})"
        )));
    }
    let meta_count = read_u32(&mut r)? as usize;
    let mut meta = BTreeMap::new();
    for _ in 0..meta_count {
        let k = read_str(&mut r)?;
        let v = read_str(&mut r)?;
        meta.insert(k, v);
    }
    let get = |key: &str| -> Result<&String> {
        meta.get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key}")))
    };
    let cfg = AgentConfig {
        hidden: get("agent.hidden")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("agent.hidden: {e}")))?,
        privileged: get("agent.privileged")? == "1",
        delta_max: get("agent.delta_max")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("agent.delta_max: {e}")))?,
        sigma_init: get("agent.sigma_init")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("agent.sigma_init: {e}")))?,
    };

    // Rebuild the layout, then overwrite every tensor from the file.
    use rand::SeedableRng;
    let mut seed_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut agent = Agent::new(cfg, &mut seed_rng);

    let tensor_count = read_u32(&mut r)? as usize;
    if tensor_count != agent.params.entries().len() {
        return Err(Error::Checkpoint(format!(
            "tensor count {tensor_count} does not match layout {}",
            agent.params.entries().len()
        )));
    }
    for i in 0..tensor_count {
        let name = read_str(&mut r)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let e = agent.params.entries()[i].clone();
        if e.name != name || e.rows != rows || e.cols != cols {
            return Err(Error::Checkpoint(format!(
                "tensor {i}: file has {name}({rows}x{cols}), layout expects {}({}x{})",
                e.name, e.rows, e.cols
            )));
        }
        let mut buf = [0u8; 8];
        let dst = &mut agent.params.flat_mut()[e.offset..e.offset + rows * cols];
        for v in dst {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok((agent, meta))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Checkpoint(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("bad utf8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_agent(seed: u64, privileged: bool) -> Agent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Agent::new(
            AgentConfig {
                hidden: 8,
                privileged,
                ..AgentConfig::default()
            },
            &mut rng,
        )
    }

    fn state() -> RlState {
        RlState {
            kp: 0.05,
            ki: 0.05,
            e: 1.0,
            ie: 0.3,
        }
    }

    #[test]
    fn zero_params_zero_mean() {
        let mut agent = small_agent(1, true);
        for v in agent.params.flat_mut() {
            *v = 0.0;
        }
        let mut hs = agent.initial_actor_state();
        let mean = agent.actor_forward(&state(), &mut hs, 1.0).unwrap();
        assert_eq!(mean, [0.0, 0.0]);
        let mut hs = agent.initial_actor_state();
        let a = agent.deterministic_action(&state(), &mut hs, 1.0).unwrap();
        assert_eq!((a.dkp, a.dki), (0.0, 0.0));
        let info = PrivilegedInfo {
            gain: 0.5,
            tau: 1.0,
            theta: 0.2,
            deep_hidden: vec![0.0; 8],
        };
        assert_eq!(agent.critic_forward(&state(), &info).unwrap(), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let agent = small_agent(3, true);
        let mut a = agent.initial_actor_state();
        let mut b = agent.initial_actor_state();
        let ma = agent.actor_forward(&state(), &mut a, 1.0).unwrap();
        let mb = agent.actor_forward(&state(), &mut b, 1.0).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a, b);
    }

    #[test]
    fn critic_input_dims() {
        let full = Agent::new(AgentConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(full.critic_input_dim(), 107);
        let ablated = Agent::new(
            AgentConfig {
                privileged: false,
                ..AgentConfig::default()
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(ablated.critic_input_dim(), 104);
    }

    #[test]
    fn hidden_reset_gives_fresh_episode() {
        let agent = small_agent(5, true);
        let mut hs = agent.initial_actor_state();
        for i in 0..10 {
            let s = RlState {
                kp: 0.1 * i as f64,
                ki: 0.05,
                e: (i as f64).sin(),
                ie: 0.0,
            };
            agent.actor_forward(&s, &mut hs, 1.0).unwrap();
        }
        hs.reset();
        let mut fresh = agent.initial_actor_state();
        let m1 = agent.actor_forward(&state(), &mut hs, 1.0).unwrap();
        let m2 = agent.actor_forward(&state(), &mut fresh, 1.0).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn actions_respect_bound() {
        let agent = small_agent(7, true);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let out = agent.sample_action([5.0, -3.0], &mut rng);
            assert!(out.action.dkp.abs() <= agent.cfg.delta_max);
            assert!(out.action.dki.abs() <= agent.cfg.delta_max);
            assert!(out.log_prob.is_finite());
        }
    }

    #[test]
    fn deterministic_matches_small_sigma_monte_carlo() {
        let mut agent = small_agent(13, true);
        let sigma = 0.01f64;
        let ls = agent.params.find("actor.log_std").unwrap();
        for v in agent.params.slice_mut(ls) {
            *v = sigma.ln();
        }
        let mean = [0.3, -0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut acc = [0.0f64; 2];
        let mut acc2 = [0.0f64; 2];
        for _ in 0..n {
            let out = agent.sample_action(mean, &mut rng);
            acc[0] += out.action.dkp;
            acc[1] += out.action.dki;
            acc2[0] += out.action.dkp * out.action.dkp;
            acc2[1] += out.action.dki * out.action.dki;
        }
        let det = [
            agent.cfg.delta_max * mean[0].tanh(),
            agent.cfg.delta_max * mean[1].tanh(),
        ];
        for j in 0..2 {
            let m = acc[j] / n as f64;
            let var = acc2[j] / n as f64 - m * m;
            let se = (var / n as f64).sqrt();
            assert!(
                (m - det[j]).abs() <= 3.0 * se.max(1e-9),
                "j = {j}: mc = {m}, det = {}, se = {se}",
                det[j]
            );
        }
    }

    #[test]
    fn taped_actor_matches_plain_bitwise() {
        let agent = small_agent(17, true);
        let s0 = state();
        let s1 = RlState {
            kp: 0.1,
            ki: 0.08,
            e: -0.4,
            ie: 0.9,
        };

        let mut hs = agent.initial_actor_state();
        let m0 = agent.actor_forward(&s0, &mut hs, 1.0).unwrap();
        let m1 = agent.actor_forward(&s1, &mut hs, 1.0).unwrap();

        let mut tape = Tape::new();
        let leaves = agent.actor_leaves(&mut tape);
        let zeros = vec![0.0; agent.cfg.hidden];
        let h1 = tape.constant(&zeros);
        let h2 = tape.constant(&zeros);
        let (mt0, nh1, nh2) = agent.actor_step_taped(&mut tape, &leaves, &s0, h1, h2, 1.0);
        let (mt1, _, nh2b) = agent.actor_step_taped(&mut tape, &leaves, &s1, nh1, nh2, 1.0);
        assert_eq!(tape.value(mt0), &m0);
        assert_eq!(tape.value(mt1), &m1);
        assert_eq!(tape.value(nh2b), hs.h2.as_slice());
    }

    #[test]
    fn taped_critic_matches_plain_bitwise() {
        let agent = small_agent(19, true);
        let info = PrivilegedInfo {
            gain: 0.7,
            tau: 0.9,
            theta: 0.4,
            deep_hidden: (0..8).map(|i| 0.05 * i as f64).collect(),
        };
        let plain = agent.critic_forward(&state(), &info).unwrap();
        let mut tape = Tape::new();
        let leaves = agent.critic_leaves(&mut tape);
        let v = agent.critic_taped(&mut tape, &leaves, &state(), &info);
        assert_eq!(tape.scalar(v), plain);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let agent = small_agent(23, false);
        let mut meta = BTreeMap::new();
        meta.insert("epoch".to_string(), "17".to_string());
        meta.insert("seed".to_string(), "42".to_string());
        let mut buf1 = Vec::new();
        save_checkpoint(&agent, &meta, &mut buf1).unwrap();
        let (loaded, meta2) = load_checkpoint(buf1.as_slice()).unwrap();
        assert_eq!(meta2.get("epoch").unwrap(), "17");
        assert_eq!(loaded.cfg, agent.cfg);
        assert_eq!(loaded.params.flat(), agent.params.flat());
        let mut buf2 = Vec::new();
        save_checkpoint(&loaded, &meta, &mut buf2).unwrap();
        assert_eq!(buf1, buf2);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(load_checkpoint(&b"NOPE"[..]).is_err());
        let agent = small_agent(29, true);
        let mut buf = Vec::new();
        save_checkpoint(&agent, &BTreeMap::new(), &mut buf).unwrap();
        buf[4] = 9; // version corrupted
        assert!(load_checkpoint(buf.as_slice()).is_err());
    }
}
