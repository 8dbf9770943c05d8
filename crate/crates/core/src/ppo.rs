//! Training loop: batched task sampling, rollout collection, generalized
//! advantage estimation, PPO-Clip policy updates with KL early stopping, and
//! privileged value regression.
//!
//! Costs are negated into rewards internally so the standard PPO/GAE sign
//! conventions apply unchanged; everything logged or returned to callers is
//! reported back in cost convention.
//!
//! Sequence replay runs backpropagation through time from stored
//! sequence-start hidden states (zero vectors at the default full-episode
//! sequence length).

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, AgentConfig, PrivilegedInfo};
use crate::env::{EpisodeConfig, FoptdEnv, GainDelta, RlState, TaskRanges};
use crate::nn::tape::Tape;
use crate::nn::{Adam, GradBuf};
use crate::sim::FoptdTask;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_4;

/// Everything a training run needs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Discount factor γ.
    pub discount: f64,
    /// GAE λ.
    pub gae_lambda: f64,
    /// Maximum policy gradient steps per epoch.
    pub policy_iters: usize,
    /// Value gradient steps per epoch.
    pub value_iters: usize,
    /// KL early-stopping threshold.
    pub max_kl: f64,
    /// PPO clip width ε.
    pub clip_eps: f64,
    pub lr: f64,
    /// BPTT sequence length; must divide the episode length.
    pub seq_len: usize,
    /// Network width (GRU and dense layers).
    pub hidden: usize,
    /// Critic sees the true process parameters.
    pub privileged: bool,
    pub sigma_init: f64,
    pub ranges: TaskRanges,
    pub episode: EpisodeConfig,
    pub seed: u64,
    /// Emit a checkpoint every this many epochs (and always at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    /// Full-scale configuration.
    fn default() -> Self {
        TrainConfig {
            epochs: 2500,
            episodes_per_epoch: 300,
            discount: 0.99,
            gae_lambda: 0.95,
            policy_iters: 20,
            value_iters: 40,
            max_kl: 0.015,
            clip_eps: 0.2,
            lr: 3e-4,
            seq_len: 40,
            hidden: 100,
            privileged: true,
            sigma_init: 0.5,
            ranges: TaskRanges::default(),
            episode: EpisodeConfig::default(),
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    /// Desk-scale run: narrowed task distribution, width-32 networks,
    /// 200 epochs of 32 episodes.
    pub fn scaled() -> Self {
        TrainConfig {
            epochs: 200,
            episodes_per_epoch: 32,
            hidden: 32,
            ranges: TaskRanges {
                gain: (0.4, 0.6),
                tau: (0.8, 1.0),
                ratio: (0.1, 0.3),
            },
            checkpoint_every: 50,
            ..TrainConfig::default()
        }
    }

    /// Minutes-scale plumbing check.
    pub fn smoke() -> Self {
        TrainConfig {
            epochs: 10,
            episodes_per_epoch: 4,
            hidden: 8,
            checkpoint_every: 5,
            ..TrainConfig::scaled()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        if self.seq_len == 0 || self.episode.n_steps % self.seq_len != 0 {
            return Err(Error::Config(format!(
                "seq_len ({}) must divide the episode length ({})",
                self.seq_len, self.episode.n_steps
            )));
        }
        if self.epochs == 0 || self.episodes_per_epoch == 0 {
            return Err(Error::Config("epochs and episodes must be positive".into()));
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            hidden: self.hidden,
            privileged: self.privileged,
            delta_max: self.episode.delta_max,
            sigma_init: self.sigma_init,
        }
    }
}

/// One recorded step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: RlState,
    pub presquash: [f64; 2],
    pub action: GainDelta,
    pub mean_old: [f64; 2],
    pub log_std_old: [f64; 2],
    pub log_prob_old: f64,
    pub cost: f64,
    /// Critic estimate at collection time (cost convention).
    pub value_old: f64,
    pub info: PrivilegedInfo,
    /// Reward-convention advantage (filled by GAE, then normalized).
    pub advantage: f64,
    /// Cost-convention regression target for the critic.
    pub value_target: f64,
}

/// One episode's trajectory plus the hidden states at sequence starts.
#[derive(Debug, Clone)]
pub struct EpisodeRollout {
    pub task: FoptdTask,
    pub transitions: Vec<Transition>,
    /// (h1, h2) snapshots taken before the first step of each BPTT sequence.
    pub seq_starts: Vec<(Vec<f64>, Vec<f64>)>,
    pub flagged: bool,
}

/// Per-epoch storage of everything the updates need.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub episodes: Vec<EpisodeRollout>,
}

impl RolloutBuffer {
    pub fn total_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }

    pub fn flagged_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| e.flagged).count()
    }

    pub fn mean_cost(&self) -> f64 {
        let n = self.total_transitions();
        if n == 0 {
            return 0.0;
        }
        self.episodes
            .iter()
            .flat_map(|e| e.transitions.iter().map(|t| t.cost))
            .sum::<f64>()
            / n as f64
    }
}

/// SplitMix64-style combiner for deriving independent seed streams.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Roll out one epoch of episodes with the stochastic policy.
///
/// Each episode draws its own RNG stream from `epoch_seed` and its index, so
/// results do not depend on scheduling order.
pub fn collect_epoch(agent: &Agent, cfg: &TrainConfig, epoch_seed: u64) -> Result<RolloutBuffer> {
    let mut buffer = RolloutBuffer::default();
    for ep_idx in 0..cfg.episodes_per_epoch {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(epoch_seed, ep_idx as u64));
        let task = crate::env::sample_task(&mut rng, &cfg.ranges);
        let mut env = FoptdEnv::new(task, cfg.episode.clone(), &mut rng)?;
        let mut hs = agent.initial_actor_state();
        let mut transitions = Vec::with_capacity(cfg.episode.n_steps);
        let mut seq_starts = Vec::new();
        let mut flagged = false;
        for t in 0..cfg.episode.n_steps {
            if t % cfg.seq_len == 0 {
                seq_starts.push((hs.h1.clone(), hs.h2.clone()));
            }
            let state = env.state();
            let mean = agent.actor_forward(&state, &mut hs, 1.0)?;
            let out = agent.sample_action(mean, &mut rng);
            let info = PrivilegedInfo {
                gain: task.gain,
                tau: task.tau,
                theta: task.theta,
                deep_hidden: hs.h2.clone(),
            };
            let value_old = agent.critic_forward(&state, &info)?;
            let step = env.step(out.action)?;
            flagged |= step.flagged;
            transitions.push(Transition {
                state,
                presquash: out.presquash,
                action: out.action,
                mean_old: out.mean,
                log_std_old: out.log_std,
                log_prob_old: out.log_prob,
                cost: step.cost,
                value_old,
                info,
                advantage: 0.0,
                value_target: 0.0,
            });
        }
        buffer.episodes.push(EpisodeRollout {
            task,
            transitions,
            seq_starts,
            flagged,
        });
    }
    Ok(buffer)
}

/// Generalized advantage estimation for one complete episode.
///
/// Inputs are in cost convention; internally rewards are `r = -c` and values
/// `V_r = -V_c`. Returns reward-convention advantages and cost-convention
/// value targets. The terminal bootstrap value is zero (episodes end).
pub fn gae(
    costs: &[f64],
    values_cost: &[f64],
    discount: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if costs.len() != values_cost.len() {
        return Err(Error::Shape {
            context: "gae",
            expected: costs.len(),
            got: values_cost.len(),
        });
    }
    let n = costs.len();
    let mut adv = vec![0.0; n];
    let mut targets = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let r = -costs[t];
        let v = -values_cost[t];
        let v_next = if t + 1 < n { -values_cost[t + 1] } else { 0.0 };
        let delta = r + discount * v_next - v;
        running = delta + discount * lambda * running;
        adv[t] = running;
        targets[t] = -(running + v);
    }
    Ok((adv, targets))
}

/// Run GAE over every episode, then normalize advantages across the whole
/// buffer to zero mean and unit variance.
pub fn compute_advantages(buffer: &mut RolloutBuffer, cfg: &TrainConfig) -> Result<()> {
    for ep in &mut buffer.episodes {
        let costs: Vec<f64> = ep.transitions.iter().map(|t| t.cost).collect();
        let values: Vec<f64> = ep.transitions.iter().map(|t| t.value_old).collect();
        let (adv, targets) = gae(&costs, &values, cfg.discount, cfg.gae_lambda)?;
        for (t, (a, g)) in ep.transitions.iter_mut().zip(adv.iter().zip(&targets)) {
            t.advantage = *a;
            t.value_target = *g;
        }
    }
    let n = buffer.total_transitions() as f64;
    let mean = buffer
        .episodes
        .iter()
        .flat_map(|e| e.transitions.iter().map(|t| t.advantage))
        .sum::<f64>()
        / n;
    let var = buffer
        .episodes
        .iter()
        .flat_map(|e| e.transitions.iter().map(|t| (t.advantage - mean).powi(2)))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    for ep in &mut buffer.episodes {
        for t in &mut ep.transitions {
            t.advantage = (t.advantage - mean) / (std + 1e-8);
        }
    }
    Ok(())
}

/// The per-sample PPO-Clip objective (reward convention, to be maximized).
pub fn clip_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Closed-form KL(N(μo,σo) ‖ N(μn,σn)) for diagonal Gaussians.
fn diag_gauss_kl(
    mean_old: &[f64; 2],
    log_std_old: &[f64; 2],
    mean_new: &[f64; 2],
    log_std_new: &[f64; 2],
) -> f64 {
    let mut kl = 0.0;
    for j in 0..2 {
        let so2 = (2.0 * log_std_old[j]).exp();
        let sn2 = (2.0 * log_std_new[j]).exp();
        let dm = mean_old[j] - mean_new[j];
        kl += log_std_new[j] - log_std_old[j] + (so2 + dm * dm) / (2.0 * sn2) - 0.5;
    }
    kl
}

/// Diagnostics from one policy update.
#[derive(Debug, Clone, Default)]
pub struct PolicyUpdateStats {
    /// Gradient steps actually applied.
    pub iterations: usize,
    /// Mean KL measured before any step (ratio identically 1).
    pub kl_first: f64,
    /// Every measured KL, in order. Only the final entry may exceed max_kl.
    pub kls: Vec<f64>,
    pub early_stopped: bool,
    pub clip_fraction: f64,
    pub loss_first: f64,
    pub loss_last: f64,
}

impl PolicyUpdateStats {
    pub fn kl_final(&self) -> f64 {
        self.kls.last().copied().unwrap_or(0.0)
    }
}

/// One full-batch policy pass: replay every sequence with BPTT, accumulate
/// the clipped-surrogate loss and its gradients, and measure KL/clip
/// diagnostics against the collection-time policy. Returns
/// `(loss, mean KL, clip fraction)`.
pub fn policy_pass(
    agent: &Agent,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    tape: &mut Tape,
    grads: &mut GradBuf,
) -> Result<(f64, f64, f64)> {
    let total_n = buffer.total_transitions() as f64;
    let mut loss_total = 0.0;
    let mut kl_total = 0.0;
    let mut clip_count = 0usize;
    let log_std_new = agent.log_std_values();

    for ep in &buffer.episodes {
        for (c, chunk) in ep.transitions.chunks(cfg.seq_len).enumerate() {
            tape.clear();
            let leaves = agent.actor_leaves(tape);
            let (h1_snap, h2_snap) = &ep.seq_starts[c];
            let mut h1 = tape.constant(h1_snap);
            let mut h2 = tape.constant(h2_snap);

            // exp(-log_std) and Σ log_std, shared across the sequence.
            let neg_ls = tape.affine(leaves.log_std, -1.0, 0.0);
            let inv_sigma = tape.exp(neg_ls);
            let sum_ls = tape.sum(leaves.log_std);

            let mut acc = tape.constant_scalar(0.0);
            let mut ratio_nodes = Vec::with_capacity(chunk.len());
            let mut mean_nodes = Vec::with_capacity(chunk.len());
            for tr in chunk {
                let (mean, nh1, nh2) =
                    agent.actor_step_taped(tape, &leaves, &tr.state, h1, h2, 1.0);
                h1 = nh1;
                h2 = nh2;
                let v = tape.constant(&tr.presquash);
                let d = tape.sub(v, mean);
                let z = tape.mul(d, inv_sigma);
                let q = tape.mul(z, z);
                let s = tape.sum(q);
                let corr = crate::nn::squash_log_det(&tr.presquash, agent.cfg.delta_max);
                // lp = -0.5 s - Σ log_std - ln 2π - corr
                let t1 = tape.affine(s, -0.5, -LN_2PI - corr);
                let lp = tape.sub(t1, sum_ls);
                let dlp = tape.affine(lp, 1.0, -tr.log_prob_old);
                let ratio = tape.exp(dlp);
                let surr1 = tape.affine(ratio, tr.advantage, 0.0);
                let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                let surr2 = tape.affine(clipped, tr.advantage, 0.0);
                let obj = tape.min(surr1, surr2);
                acc = tape.add(acc, obj);
                ratio_nodes.push(ratio);
                mean_nodes.push(mean);
            }
            let loss_ep = tape.affine(acc, -1.0 / total_n, 0.0);
            loss_total += tape.scalar(loss_ep);

            for (tr, (&rn, &mn)) in chunk.iter().zip(ratio_nodes.iter().zip(mean_nodes.iter())) {
                let ratio = tape.scalar(rn);
                if (ratio - 1.0).abs() > cfg.clip_eps {
                    clip_count += 1;
                }
                let mv = tape.value(mn);
                let mean_new = [mv[0], mv[1]];
                kl_total += diag_gauss_kl(&tr.mean_old, &tr.log_std_old, &mean_new, &log_std_new);
            }

            tape.backward(loss_ep, &agent.params, grads)?;
        }
    }
    Ok((loss_total, kl_total / total_n, clip_count as f64 / total_n))
}

/// Up to `policy_iters` full-batch gradient steps on the PPO-Clip objective,
/// stopping before the step whose measured KL exceeds `max_kl`.
pub fn ppo_policy_update(
    agent: &mut Agent,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    adam: &mut Adam,
) -> Result<PolicyUpdateStats> {
    let mut stats = PolicyUpdateStats::default();
    let mut tape = Tape::new();
    let mut grads = GradBuf::zeros_like(&agent.params);
    let actor_len = agent.actor_param_len();

    for it in 0..cfg.policy_iters {
        grads.reset();
        let (loss, kl, clip_frac) = policy_pass(agent, buffer, cfg, &mut tape, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("policy loss"));
        }
        stats.kls.push(kl);
        stats.clip_fraction = clip_frac;
        stats.loss_last = loss;
        if it == 0 {
            stats.kl_first = kl;
            stats.loss_first = loss;
        }
        if kl > cfg.max_kl {
            stats.early_stopped = true;
            break;
        }
        adam.step(
            &mut agent.params.flat_mut()[..actor_len],
            &grads.flat()[..actor_len],
            cfg.lr,
        );
        stats.iterations += 1;
    }
    Ok(stats)
}

/// `value_iters` full-batch gradient steps minimizing the squared error of
/// the critic against the cost-to-go targets. Returns the final loss.
pub fn value_update(
    agent: &mut Agent,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    adam: &mut Adam,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut grads = GradBuf::zeros_like(&agent.params);
    let actor_len = agent.actor_param_len();
    let mut last_loss = 0.0;

    for _ in 0..cfg.value_iters {
        grads.reset();
        let loss_total = value_pass(agent, buffer, &mut tape, &mut grads)?;
        if !loss_total.is_finite() {
            return Err(Error::NonFinite("value loss"));
        }
        adam.step(
            &mut agent.params.flat_mut()[actor_len..],
            &grads.flat()[actor_len..],
            cfg.lr,
        );
        last_loss = loss_total;
    }
    Ok(last_loss)
}

/// One full-batch value pass: loss value plus accumulated gradients.
pub fn value_pass(
    agent: &Agent,
    buffer: &RolloutBuffer,
    tape: &mut Tape,
    grads: &mut GradBuf,
) -> Result<f64> {
    let total_n = buffer.total_transitions() as f64;
    let mut loss_total = 0.0;
    for ep in &buffer.episodes {
        tape.clear();
        let leaves = agent.critic_leaves(tape);
        let mut acc = tape.constant_scalar(0.0);
        for tr in &ep.transitions {
            let v = agent.critic_taped(tape, &leaves, &tr.state, &tr.info);
            let d = tape.affine(v, 1.0, -tr.value_target);
            let sq = tape.mul(d, d);
            acc = tape.add(acc, sq);
        }
        let loss_ep = tape.affine(acc, 1.0 / total_n, 0.0);
        loss_total += tape.scalar(loss_ep);
        tape.backward(loss_ep, &agent.params, grads)?;
    }
    Ok(loss_total)
}

/// Per-epoch log record.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_cost: f64,
    pub kl_first: f64,
    pub kl_final: f64,
    pub clip_fraction: f64,
    pub policy_iters_used: usize,
    pub value_loss: f64,
    pub flagged_episodes: usize,
    pub wall_s: f64,
}

impl EpochLog {
    pub fn csv_header() -> &'static str {
        "epoch,mean_cost,kl_first,kl_final,clip_fraction,policy_iters,value_loss,flagged,wall_s"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.mean_cost,
            self.kl_first,
            self.kl_final,
            self.clip_fraction,
            self.policy_iters_used,
            self.value_loss,
            self.flagged_episodes,
            self.wall_s
        )
    }
}

/// Result of a training run.
pub struct TrainOutput {
    pub agent: Agent,
    pub log: Vec<EpochLog>,
}

/// Everything visible at a checkpoint boundary (enough to resume).
pub struct TrainSnapshot<'a> {
    pub agent: &'a Agent,
    pub adam_pi: &'a Adam,
    pub adam_vf: &'a Adam,
    /// Index of the epoch that just finished.
    pub epoch: usize,
    pub log: &'a [EpochLog],
}

/// State restored when resuming a run.
pub struct ResumeState {
    pub agent: Agent,
    pub adam_pi: Adam,
    pub adam_vf: Adam,
    pub next_epoch: usize,
}

/// Run the full loop: collect → GAE → policy update → value update, with a
/// checkpoint callback every `checkpoint_every` epochs and after the final
/// epoch. Aborts after 5 consecutive epochs with non-finite losses.
pub fn train<F>(cfg: &TrainConfig, mut on_checkpoint: F) -> Result<TrainOutput>
where
    F: FnMut(&TrainSnapshot) -> Result<()>,
{
    train_from(cfg, None, &mut on_checkpoint)
}

/// As [`train`], optionally continuing from a saved state. Epoch seeds are
/// derived from the config seed and the epoch index, so a resumed run
/// collects the same rollouts the uninterrupted run would have.
pub fn train_from<F>(
    cfg: &TrainConfig,
    resume: Option<ResumeState>,
    on_checkpoint: &mut F,
) -> Result<TrainOutput>
where
    F: FnMut(&TrainSnapshot) -> Result<()>,
{
    cfg.validate()?;
    let (mut agent, mut adam_pi, mut adam_vf, start_epoch) = match resume {
        Some(s) => (s.agent, s.adam_pi, s.adam_vf, s.next_epoch),
        None => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xA9E4_71));
            let agent = Agent::new(cfg.agent_config(), &mut init_rng);
            let actor_len = agent.actor_param_len();
            let critic_len = agent.params.len_flat() - actor_len;
            (agent, Adam::new(actor_len), Adam::new(critic_len), 0)
        }
    };
    let mut log = Vec::with_capacity(cfg.epochs.saturating_sub(start_epoch));
    let mut consecutive_bad = 0usize;

    for epoch in start_epoch..cfg.epochs {
        let start = Instant::now();
        let epoch_seed = mix_seed(cfg.seed, 0x5EED_0000 + epoch as u64);
        let mut buffer = collect_epoch(&agent, cfg, epoch_seed)?;
        compute_advantages(&mut buffer, cfg)?;

        let mut bad = false;
        let pol = match ppo_policy_update(&mut agent, &buffer, cfg, &mut adam_pi) {
            Ok(s) => s,
            Err(Error::NonFinite(_)) => {
                bad = true;
                PolicyUpdateStats::default()
            }
            Err(e) => return Err(e),
        };
        let vloss = match value_update(&mut agent, &buffer, cfg, &mut adam_vf) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => {
                bad = true;
                f64::NAN
            }
            Err(e) => return Err(e),
        };

        consecutive_bad = if bad { consecutive_bad + 1 } else { 0 };
        if consecutive_bad >= 5 {
            return Err(Error::NonFinite("five consecutive non-finite epochs"));
        }

        log.push(EpochLog {
            epoch,
            mean_cost: buffer.mean_cost(),
            kl_first: pol.kl_first,
            kl_final: pol.kl_final(),
            clip_fraction: pol.clip_fraction,
            policy_iters_used: pol.iterations,
            value_loss: vloss,
            flagged_episodes: buffer.flagged_episodes(),
            wall_s: start.elapsed().as_secs_f64(),
        });

        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            on_checkpoint(&TrainSnapshot {
                agent: &agent,
                adam_pi: &adam_pi,
                adam_vf: &adam_vf,
                epoch,
                log: &log,
            })?;
        }
    }
    Ok(TrainOutput { agent, log })
}

// ---------------------------------------------------------------------------
// Resume-state serialization
// ---------------------------------------------------------------------------

const RESUME_MAGIC: &[u8; 4] = b"MTRS";
const RESUME_VERSION: u32 = 1;

fn write_f64s<W: std::io::Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    w.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: std::io::Read>(r: &mut R) -> Result<Vec<f64>> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    if n > (1 << 28) {
        return Err(Error::Checkpoint(format!("implausible vector length {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        out.push(f64::from_le_bytes(b8));
    }
    Ok(out)
}

fn write_adam<W: std::io::Write>(w: &mut W, adam: &Adam) -> Result<()> {
    let (m, v, t) = adam.state();
    w.write_all(&t.to_le_bytes())?;
    write_f64s(w, m)?;
    write_f64s(w, v)
}

fn read_adam<R: std::io::Read>(r: &mut R) -> Result<Adam> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let t = u64::from_le_bytes(b8);
    let m = read_f64s(r)?;
    let v = read_f64s(r)?;
    Ok(Adam::restore(m, v, t))
}

/// Serialize a snapshot so training can continue later.
pub fn save_resume_state<W: std::io::Write>(snap: &TrainSnapshot, mut w: W) -> Result<()> {
    w.write_all(RESUME_MAGIC)?;
    w.write_all(&RESUME_VERSION.to_le_bytes())?;
    w.write_all(&((snap.epoch + 1) as u64).to_le_bytes())?;
    let mut agent_bytes = Vec::new();
    crate::agent::save_checkpoint(snap.agent, &std::collections::BTreeMap::new(), &mut agent_bytes)?;
    w.write_all(&(agent_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&agent_bytes)?;
    write_adam(&mut w, snap.adam_pi)?;
    write_adam(&mut w, snap.adam_vf)
}

/// Load a resume state.
pub fn load_resume_state<R: std::io::Read>(mut r: R) -> Result<ResumeState> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RESUME_MAGIC {
        return Err(Error::Checkpoint("bad resume-state magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != RESUME_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported resume-state version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let next_epoch = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let alen = u64::from_le_bytes(b8) as usize;
    if alen > (1 << 30) {
        return Err(Error::Checkpoint("implausible agent blob size".into()));
    }
    let mut agent_bytes = vec![0u8; alen];
    r.read_exact(&mut agent_bytes)?;
    let (agent, _meta) = crate::agent::load_checkpoint(agent_bytes.as_slice())?;
    let adam_pi = read_adam(&mut r)?;
    let adam_vf = read_adam(&mut r)?;
    Ok(ResumeState {
        agent,
        adam_pi,
        adam_vf,
        next_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_single_step() {
        // r = [1] (cost -1), V ≡ 0 -> advantage 1 before normalization.
        let (adv, targets) = gae(&[-1.0], &[0.0], 0.99, 0.95).unwrap();
        assert!((adv[0] - 1.0).abs() < 1e-12);
        assert!((targets[0] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn gae_two_step_hand_computed() {
        // r = [1, 1], V ≡ 0, γ = 0.99, λ = 0.95: Â0 = 1 + 0.9405.
        let (adv, _) = gae(&[-1.0, -1.0], &[0.0, 0.0], 0.99, 0.95).unwrap();
        assert!((adv[0] - 1.9405).abs() < 1e-6, "adv = {}", adv[0]);
        assert!((adv[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gae_lambda_one_is_discounted_return() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let costs: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values = vec![0.0; 40];
            let (adv, _) = gae(&costs, &values, 0.99, 1.0).unwrap();
            // Brute-force discounted returns of r = -c.
            for t in 0..40 {
                let mut ret = 0.0;
                let mut g = 1.0;
                for k in t..40 {
                    ret += g * -costs[k];
                    g *= 0.99;
                }
                assert!((adv[t] - ret).abs() < 1e-9, "t = {t}: {} vs {ret}", adv[t]);
            }
        }
    }

    #[test]
    fn gae_length_mismatch_errors() {
        assert!(gae(&[1.0, 2.0], &[0.0], 0.99, 0.95).is_err());
    }

    #[test]
    fn clip_objective_cases() {
        assert_eq!(clip_objective(1.0, 1.0, 0.2), 1.0);
        assert!((clip_objective(2.0, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clip_objective(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-12);
    }

    #[test]
    fn buffer_has_exactly_n_by_t_transitions() {
        let cfg = TrainConfig::smoke();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = Agent::new(cfg.agent_config(), &mut rng);
        let buf = collect_epoch(&agent, &cfg, 7).unwrap();
        assert_eq!(buf.episodes.len(), 4);
        assert_eq!(buf.total_transitions(), 4 * 40);
        for ep in &buf.episodes {
            assert_eq!(ep.seq_starts.len(), 1);
            assert!(ep.seq_starts[0].0.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identical_seed_identical_buffer() {
        let cfg = TrainConfig::smoke();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = Agent::new(cfg.agent_config(), &mut rng);
        let a = collect_epoch(&agent, &cfg, 99).unwrap();
        let b = collect_epoch(&agent, &cfg, 99).unwrap();
        assert_eq!(a.total_transitions(), b.total_transitions());
        for (ea, eb) in a.episodes.iter().zip(&b.episodes) {
            assert_eq!(ea.task, eb.task);
            for (ta, tb) in ea.transitions.iter().zip(&eb.transitions) {
                assert_eq!(ta.cost, tb.cost);
                assert_eq!(ta.presquash, tb.presquash);
                assert_eq!(ta.log_prob_old, tb.log_prob_old);
            }
        }
    }

    #[test]
    fn zero_policy_action_scale_matches_noise() {
        // With zero parameters, log_std = 0 => sigma = 1; the mean absolute
        // action is delta_max * E|tanh(z)| for standard normal z. Quadrature
        // oracle for the expectation.
        let mut cfg = TrainConfig::smoke();
        cfg.episodes_per_epoch = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = Agent::new(cfg.agent_config(), &mut rng);
        for v in agent.params.flat_mut() {
            *v = 0.0;
        }
        let buf = collect_epoch(&agent, &cfg, 5).unwrap();
        let mut sum = 0.0;
        let mut n = 0usize;
        for ep in &buf.episodes {
            for tr in &ep.transitions {
                sum += tr.action.dkp.abs() + tr.action.dki.abs();
                n += 2;
            }
        }
        let measured = sum / n as f64;

        // E|tanh(z)| by midpoint quadrature over the half-line.
        let mut expect = 0.0;
        let m = 20_000;
        let hi = 8.0;
        let dz = hi / m as f64;
        for i in 0..m {
            let z: f64 = (i as f64 + 0.5) * dz;
            let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            expect += 2.0 * z.tanh() * pdf * dz;
        }
        let expect = 0.1 * expect;
        assert!(
            (measured - expect).abs() < 0.01,
            "measured {measured}, expected {expect}"
        );
    }

    #[test]
    fn first_policy_iteration_has_zero_kl() {
        let cfg = TrainConfig::smoke();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut agent = Agent::new(cfg.agent_config(), &mut rng);
        let mut buf = collect_epoch(&agent, &cfg, 21).unwrap();
        compute_advantages(&mut buf, &cfg).unwrap();
        let mut adam = Adam::new(agent.actor_param_len());
        let stats = ppo_policy_update(&mut agent, &buf, &cfg, &mut adam).unwrap();
        assert!(
            stats.kl_first < 1e-6,
            "first-iteration KL = {}",
            stats.kl_first
        );
        // Only the final recorded KL may exceed the threshold.
        for (i, &kl) in stats.kls.iter().enumerate() {
            if kl > cfg.max_kl {
                assert_eq!(i, stats.kls.len() - 1, "non-final KL above threshold");
            }
        }
    }

    #[test]
    fn value_update_decreases_loss() {
        let cfg = TrainConfig::smoke();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut agent = Agent::new(cfg.agent_config(), &mut rng);
        let mut buf = collect_epoch(&agent, &cfg, 31).unwrap();
        compute_advantages(&mut buf, &cfg).unwrap();
        let mut adam = Adam::new(agent.params.len_flat() - agent.actor_param_len());

        let mut one_iter_cfg = cfg.clone();
        one_iter_cfg.value_iters = 1;
        let first = value_update(&mut agent, &buf, &one_iter_cfg, &mut adam).unwrap();
        let mut many_cfg = cfg.clone();
        many_cfg.value_iters = 30;
        let last = value_update(&mut agent, &buf, &many_cfg, &mut adam).unwrap();
        assert!(last < first, "value loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn perfect_critic_zero_loss_zero_gradient() {
        let cfg = TrainConfig::smoke();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let agent = Agent::new(cfg.agent_config(), &mut rng);
        let mut buf = collect_epoch(&agent, &cfg, 41).unwrap();
        compute_advantages(&mut buf, &cfg).unwrap();
        // Force targets to match the critic's own predictions exactly.
        for ep in &mut buf.episodes {
            for tr in &mut ep.transitions {
                tr.value_target = agent.critic_forward(&tr.state, &tr.info).unwrap();
            }
        }
        let mut tape = Tape::new();
        let mut grads = GradBuf::zeros_like(&agent.params);
        let total_n = buf.total_transitions() as f64;
        let mut loss_total = 0.0;
        for ep in &buf.episodes {
            tape.clear();
            let leaves = agent.critic_leaves(&mut tape);
            let mut acc = tape.constant_scalar(0.0);
            for tr in &ep.transitions {
                let v = agent.critic_taped(&mut tape, &leaves, &tr.state, &tr.info);
                let d = tape.affine(v, 1.0, -tr.value_target);
                let sq = tape.mul(d, d);
                acc = tape.add(acc, sq);
            }
            let loss_ep = tape.affine(acc, 1.0 / total_n, 0.0);
            loss_total += tape.scalar(loss_ep);
            tape.backward(loss_ep, &agent.params, &mut grads).unwrap();
        }
        assert!(loss_total.abs() < 1e-20);
        let actor_len = agent.actor_param_len();
        for &g in &grads.flat()[actor_len..] {
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn smoke_train_completes_and_logs() {
        let cfg = TrainConfig::smoke();
        let mut checkpoints = 0;
        let out = train(&cfg, |_snap| {
            checkpoints += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(out.log.len(), 10);
        assert!(checkpoints >= 2);
        for l in &out.log {
            assert!(l.mean_cost.is_finite());
            assert!(l.kl_first < 1e-6);
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let mut cfg = TrainConfig::smoke();
        cfg.epochs = 3;
        cfg.seed = 1234;
        let a = train(&cfg, |_| Ok(())).unwrap();
        let b = train(&cfg, |_| Ok(())).unwrap();
        assert_eq!(a.agent.params.flat(), b.agent.params.flat());
        for (la, lb) in a.log.iter().zip(&b.log) {
            assert_eq!(la.mean_cost, lb.mean_cost);
            assert_eq!(la.kl_final, lb.kl_final);
        }
    }
}
