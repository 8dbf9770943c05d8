//! Flat `key = value` run configuration with strict unknown-key rejection.
//!
//! Every run writes its fully resolved configuration next to its outputs;
//! a run is reproducible from that snapshot alone.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use metatune_core::env::EpisodeConfig;
use metatune_core::ppo::TrainConfig;

/// Ordered key/value view of a full training configuration.
pub fn to_pairs(cfg: &TrainConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("epochs", cfg.epochs.to_string());
    put("episodes_per_epoch", cfg.episodes_per_epoch.to_string());
    put("discount", fmt(cfg.discount));
    put("gae_lambda", fmt(cfg.gae_lambda));
    put("policy_iters", cfg.policy_iters.to_string());
    put("value_iters", cfg.value_iters.to_string());
    put("max_kl", fmt(cfg.max_kl));
    put("clip_eps", fmt(cfg.clip_eps));
    put("lr", fmt(cfg.lr));
    put("seq_len", cfg.seq_len.to_string());
    put("hidden", cfg.hidden.to_string());
    put("privileged", cfg.privileged.to_string());
    put("sigma_init", fmt(cfg.sigma_init));
    put("gain_min", fmt(cfg.ranges.gain.0));
    put("gain_max", fmt(cfg.ranges.gain.1));
    put("tau_min", fmt(cfg.ranges.tau.0));
    put("tau_max", fmt(cfg.ranges.tau.1));
    put("ratio_min", fmt(cfg.ranges.ratio.0));
    put("ratio_max", fmt(cfg.ranges.ratio.1));
    put("seed", cfg.seed.to_string());
    put("checkpoint_every", cfg.checkpoint_every.to_string());
    put("n_steps", cfg.episode.n_steps.to_string());
    put("rl_dt", fmt(cfg.episode.rl_dt));
    put("sim_dt", fmt(cfg.episode.dt));
    put("setpoint_period", fmt(cfg.episode.setpoint_period));
    put("initial_kc", fmt(cfg.episode.initial_kc));
    put("initial_tau_i", fmt(cfg.episode.initial_tau_i));
    put("delta_max", fmt(cfg.episode.delta_max));
    put("gain_lo", fmt(cfg.episode.gain_lo));
    put("gain_hi", fmt(cfg.episode.gain_hi));
    put("beta1", fmt(cfg.episode.beta1));
    put("beta2", fmt(cfg.episode.beta2));
    put("init_output_width", fmt(cfg.episode.init_output_width));
    put("cost_cap", fmt(cfg.episode.cost_cap));
    m
}

fn fmt(v: f64) -> String {
    // Shortest round-trippable representation.
    format!("{v}")
}

/// Apply one `key = value` assignment to a config.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let pf = |v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|e| anyhow!("key '{key}': bad number '{v}': {e}"))
    };
    let pu = |v: &str| -> Result<usize> {
        v.parse::<usize>()
            .map_err(|e| anyhow!("key '{key}': bad integer '{v}': {e}"))
    };
    match key {
        "epochs" => cfg.epochs = pu(value)?,
        "episodes_per_epoch" => cfg.episodes_per_epoch = pu(value)?,
        "discount" => cfg.discount = pf(value)?,
        "gae_lambda" => cfg.gae_lambda = pf(value)?,
        "policy_iters" => cfg.policy_iters = pu(value)?,
        "value_iters" => cfg.value_iters = pu(value)?,
        "max_kl" => cfg.max_kl = pf(value)?,
        "clip_eps" => cfg.clip_eps = pf(value)?,
        "lr" => cfg.lr = pf(value)?,
        "seq_len" => cfg.seq_len = pu(value)?,
        "hidden" => cfg.hidden = pu(value)?,
        "privileged" => {
            cfg.privileged = value
                .parse::<bool>()
                .map_err(|e| anyhow!("key '{key}': bad bool '{value}': {e}"))?
        }
        "sigma_init" => cfg.sigma_init = pf(value)?,
        "gain_min" => cfg.ranges.gain.0 = pf(value)?,
        "gain_max" => cfg.ranges.gain.1 = pf(value)?,
        "tau_min" => cfg.ranges.tau.0 = pf(value)?,
        "tau_max" => cfg.ranges.tau.1 = pf(value)?,
        "ratio_min" => cfg.ranges.ratio.0 = pf(value)?,
        "ratio_max" => cfg.ranges.ratio.1 = pf(value)?,
        "seed" => {
            cfg.seed = value
                .parse::<u64>()
                .map_err(|e| anyhow!("key '{key}': bad seed '{value}': {e}"))?
        }
        "checkpoint_every" => cfg.checkpoint_every = pu(value)?,
        "n_steps" => cfg.episode.n_steps = pu(value)?,
        "rl_dt" => cfg.episode.rl_dt = pf(value)?,
        "sim_dt" => cfg.episode.dt = pf(value)?,
        "setpoint_period" => cfg.episode.setpoint_period = pf(value)?,
        "initial_kc" => cfg.episode.initial_kc = pf(value)?,
        "initial_tau_i" => cfg.episode.initial_tau_i = pf(value)?,
        "delta_max" => cfg.episode.delta_max = pf(value)?,
        "gain_lo" => cfg.episode.gain_lo = pf(value)?,
        "gain_hi" => cfg.episode.gain_hi = pf(value)?,
        "beta1" => cfg.episode.beta1 = pf(value)?,
        "beta2" => cfg.episode.beta2 = pf(value)?,
        "init_output_width" => cfg.episode.init_output_width = pf(value)?,
        "cost_cap" => cfg.episode.cost_cap = pf(value)?,
        _ => bail!("unknown config key '{key}'"),
    }
    Ok(())
}

/// Parse a config file's assignments onto a base config.
pub fn apply_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected 'key = value'", path.display(), lineno + 1))?;
        apply(cfg, k.trim(), v.trim())
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
    }
    Ok(())
}

/// Resolve a named preset.
pub fn preset(name: &str) -> Result<TrainConfig> {
    match name {
        "full" => Ok(TrainConfig::default()),
        "scaled" => Ok(TrainConfig::scaled()),
        "smoke" => Ok(TrainConfig::smoke()),
        other => bail!("unknown preset '{other}' (expected full, scaled or smoke)"),
    }
}

/// Render the resolved snapshot text.
pub fn render(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    for (k, v) in to_pairs(cfg) {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

/// FNV-1a hash of the resolved snapshot, recorded in checkpoint metadata.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let text = render(cfg);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// The episode mechanics implied by a config (used by eval subcommands).
pub fn episode_of(cfg: &TrainConfig) -> EpisodeConfig {
    cfg.episode.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_render() {
        let cfg = TrainConfig::scaled();
        let text = render(&cfg);
        let mut cfg2 = TrainConfig::default();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            apply(&mut cfg2, k.trim(), v.trim()).unwrap();
        }
        assert_eq!(render(&cfg2), text);
        assert_eq!(config_hash(&cfg2), config_hash(&cfg));
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = TrainConfig::smoke();
        let err = apply(&mut cfg, "warp_speed", "9").unwrap_err();
        assert!(err.to_string().contains("warp_speed"));
    }
}
