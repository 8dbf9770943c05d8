//! `metatune train` — run the offline training loop.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use metatune_core::agent::save_checkpoint;
use metatune_core::ppo::{self, EpochLog, TrainConfig, TrainSnapshot};

use crate::config;

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Base preset: full, scaled or smoke.
    #[arg(long, default_value = "full")]
    pub preset: String,
    /// Config file of `key = value` lines applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Individual overrides applied last, e.g. --set epochs=10.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Convenience override for the RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (create-only). Defaults under $METATUNE_OUT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a resume-state file written by a previous run.
    #[arg(long)]
    pub resume_from: Option<PathBuf>,
    /// Print one line per epoch while training.
    #[arg(long)]
    pub verbose: bool,
}

/// Build the effective config from preset + file + overrides.
pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = config::preset(&args.preset)?;
    if let Some(path) = &args.config {
        config::apply_file(&mut cfg, path)?;
    }
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{s}'"))?;
        config::apply(&mut cfg, k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn checkpoint_metadata(cfg: &TrainConfig, epoch: usize) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("epoch".into(), epoch.to_string());
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("config_hash".into(), config::config_hash(cfg));
    for (k, v) in config::to_pairs(cfg) {
        meta.insert(format!("train.{k}"), v);
    }
    meta
}

/// Save one checkpoint pair (agent + resume state) for `snap`.
pub fn save_snapshot_files(dir: &Path, cfg: &TrainConfig, snap: &TrainSnapshot) -> Result<()> {
    let meta = checkpoint_metadata(cfg, snap.epoch);
    let tag = if snap.epoch + 1 == cfg.epochs {
        "final".to_string()
    } else {
        format!("epoch{:05}", snap.epoch + 1)
    };
    let ckpt = File::create(dir.join(format!("ckpt_{tag}.bin")))?;
    save_checkpoint(snap.agent, &meta, BufWriter::new(ckpt))
        .context("writing checkpoint")?;
    let res = File::create(dir.join(format!("resume_{tag}.bin")))?;
    ppo::save_resume_state(snap, BufWriter::new(res)).context("writing resume state")?;
    Ok(())
}

fn write_log(dir: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("log.csv"))?);
    writeln!(w, "{}", EpochLog::csv_header())?;
    for l in log {
        writeln!(w, "{}", l.csv_row())?;
    }
    Ok(())
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let dir = crate::prepare_out_dir(args.out.as_deref(), &format!("train-seed{}", cfg.seed))?;
    std::fs::write(dir.join("config.resolved.cfg"), config::render(&cfg))?;

    let resume = match &args.resume_from {
        Some(path) => {
            let f = File::open(path)
                .with_context(|| format!("cannot open resume file {}", path.display()))?;
            Some(ppo::load_resume_state(std::io::BufReader::new(f))?)
        }
        None => None,
    };

    let verbose = args.verbose;
    let dir2 = dir.clone();
    let cfg2 = cfg.clone();
    let out = ppo::train_from(&cfg, resume, &mut |snap: &TrainSnapshot| {
        save_snapshot_files(&dir2, &cfg2, snap)
            .map_err(|e| metatune_core::Error::Checkpoint(format!("{e:#}")))?;
        if verbose {
            if let Some(l) = snap.log.last() {
                eprintln!(
                    "epoch {:>5}  cost {:>10.5}  kl {:>8.5}  iters {:>2}  vloss {:>10.5}",
                    l.epoch, l.mean_cost, l.kl_final, l.policy_iters_used, l.value_loss
                );
            }
        }
        Ok(())
    })?;
    write_log(&dir, &out.log)?;

    let first = out.log.first().map(|l| l.mean_cost).unwrap_or(f64::NAN);
    let last = out.log.last().map(|l| l.mean_cost).unwrap_or(f64::NAN);
    println!(
        "trained {} epochs: mean episode cost {first:.5} -> {last:.5}; artifacts in {}",
        out.log.len(),
        dir.display()
    );
    Ok(())
}
