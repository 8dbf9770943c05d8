//! `metatune tune` — stream closed-loop records through the online actor and
//! emit gain recommendations.
//!
//! Input: CSV lines `t,setpoint,measurement` (header optional), timestamps
//! in seconds (or process time units when the mapping is the identity). The
//! actor sees one observation per `sample_period` of stream time; between
//! boundaries the setpoint error integrates by the rectangle rule. Output:
//! one `t,kp,ki` line per agent step.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use metatune_core::agent::Agent;
use metatune_core::env::RlState;

#[derive(Debug, clap::Args)]
pub struct TuneArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input stream file, or `-` for stdin.
    #[arg(long)]
    pub stream: String,
    /// Output file for `t,kp,ki` records (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stream seconds per agent step.
    #[arg(long, default_value_t = 2.75)]
    pub sample_period: f64,
    /// Stream seconds per agent time unit (the base of the error integral).
    /// 1 when timestamps are already in process time units; equal to
    /// --sample-period for an augmented plant.
    #[arg(long, default_value_t = 1.0)]
    pub time_unit: f64,
    /// Observation centering (same units as the measurement column).
    #[arg(long, default_value_t = 0.0)]
    pub y_offset: f64,
    /// Observation scale divisor.
    #[arg(long, default_value_t = 1.0)]
    pub y_scale: f64,
    /// Fixed record spacing. When set, boundaries fall every
    /// round(sample_period/dt) records and the error integral uses this
    /// exact spacing, reproducing a simulated run bit-for-bit.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Hidden-state forgetting factor for continuous operation.
    #[arg(long, default_value_t = 0.99)]
    pub forget: f64,
    /// Initial controller tuning in standard form.
    #[arg(long, default_value_t = 0.05)]
    pub initial_kc: f64,
    /// Initial integral time.
    #[arg(long, default_value_t = 1.0)]
    pub initial_tau_i: f64,
    /// Gain clamp bounds.
    #[arg(long, default_value_t = 0.01)]
    pub gain_lo: f64,
    #[arg(long, default_value_t = 3.0)]
    pub gain_hi: f64,
}

/// One emitted recommendation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainRecord {
    pub t: f64,
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Default)]
pub struct ReplayStats {
    pub records_seen: usize,
    pub records_skipped: usize,
    pub steps_emitted: usize,
}

/// Replay a `(t, setpoint, measurement)` stream against the online actor.
///
/// Mirrors the simulation environments exactly: at each boundary the agent
/// observes `[kp, ki, e, ∫e]` (integral in agent time units, i.e. stream
/// time divided by `sample_period`), updates the gains through the squashed
/// action, and a record is emitted. Non-monotone timestamps are skipped
/// with a warning.
pub fn replay_stream<R: BufRead, W: Write>(
    agent: &Agent,
    args: &TuneArgs,
    reader: R,
    mut sink: W,
    mut warn: impl FnMut(&str),
) -> Result<(Vec<GainRecord>, ReplayStats)> {
    let mut stats = ReplayStats::default();
    let mut out = Vec::new();

    let mut hs = agent.initial_actor_state();
    let mut kp = args.initial_kc;
    let mut ki = args.initial_kc / args.initial_tau_i;
    let mut ie = 0.0f64;

    // Pending rectangle: error at the previous record, awaiting its width.
    let mut prev: Option<(f64, f64)> = None; // (t, e_scaled)
    let mut record_idx_in_step = 0usize;
    let records_per_step = args
        .dt
        .map(|dt| (args.sample_period / dt).round().max(1.0) as usize);
    let mut next_boundary: Option<f64> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split(',');
        let fields: Vec<&str> = parts.by_ref().take(3).collect();
        if fields.len() < 3 {
            warn(&format!("line {}: expected t,setpoint,measurement", lineno + 1));
            stats.records_skipped += 1;
            continue;
        }
        let parsed: Option<(f64, f64, f64)> = match (
            fields[0].trim().parse(),
            fields[1].trim().parse(),
            fields[2].trim().parse(),
        ) {
            (Ok(t), Ok(sp), Ok(y)) => Some((t, sp, y)),
            _ => None,
        };
        let Some((t, sp, y)) = parsed else {
            if lineno == 0 {
                continue; // header row
            }
            warn(&format!("line {}: unparseable record", lineno + 1));
            stats.records_skipped += 1;
            continue;
        };
        stats.records_seen += 1;

        if let Some((pt, _)) = prev {
            if t <= pt {
                warn(&format!(
                    "line {}: non-monotone timestamp {t} after {pt}; record skipped",
                    lineno + 1
                ));
                stats.records_skipped += 1;
                continue;
            }
        }

        let sp_scaled = (sp - args.y_offset) / args.y_scale;
        let y_scaled = (y - args.y_offset) / args.y_scale;
        let e = sp_scaled - y_scaled;

        // Close the pending rectangle up to this record.
        if let Some((pt, pe)) = prev {
            let width = match args.dt {
                Some(dt) => dt,
                None => t - pt,
            };
            ie += pe * (width / args.time_unit);
        }

        // Boundary?
        let at_boundary = match records_per_step {
            Some(n) => {
                let hit = record_idx_in_step == 0;
                record_idx_in_step = (record_idx_in_step + 1) % n;
                hit
            }
            None => {
                let nb = *next_boundary.get_or_insert(t);
                if t + 1e-9 >= nb {
                    next_boundary = Some(nb + args.sample_period);
                    true
                } else {
                    false
                }
            }
        };

        if at_boundary {
            let state = RlState { kp, ki, e, ie };
            let action = agent.deterministic_action(&state, &mut hs, args.forget)?;
            kp = (kp + action.dkp).clamp(args.gain_lo, args.gain_hi);
            ki = (ki + action.dki).clamp(args.gain_lo, args.gain_hi);
            let rec = GainRecord { t, kp, ki };
            writeln!(sink, "{},{},{}", rec.t, rec.kp, rec.ki)?;
            out.push(rec);
            stats.steps_emitted += 1;
        }

        prev = Some((t, e));
    }
    Ok((out, stats))
}

pub fn run(args: &TuneArgs) -> Result<()> {
    let f = File::open(&args.checkpoint)
        .with_context(|| format!("cannot open checkpoint {}", args.checkpoint.display()))?;
    let (agent, _meta) = metatune_core::agent::load_checkpoint(BufReader::new(f))?;

    let reader: Box<dyn Read> = if args.stream == "-" {
        Box::new(std::io::stdin())
    } else {
        Box::new(
            File::open(&args.stream)
                .with_context(|| format!("cannot open stream {}", args.stream))?,
        )
    };
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };

    let (_records, stats) = replay_stream(
        &agent,
        args,
        BufReader::new(reader),
        std::io::BufWriter::new(sink),
        |msg| eprintln!("warning: {msg}"),
    )?;
    eprintln!(
        "processed {} records ({} skipped), emitted {} gain updates",
        stats.records_seen, stats.records_skipped, stats.steps_emitted
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_args() -> TuneArgs {
        TuneArgs {
            checkpoint: PathBuf::new(),
            stream: String::new(),
            out: None,
            sample_period: 2.75,
            time_unit: 1.0,
            y_offset: 0.0,
            y_scale: 1.0,
            dt: Some(0.05),
            forget: 1.0,
            initial_kc: 0.05,
            initial_tau_i: 1.0,
            gain_lo: 0.01,
            gain_hi: 3.0,
        }
    }

    fn zero_agent() -> Agent {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut agent = Agent::new(
            metatune_core::agent::AgentConfig {
                hidden: 8,
                ..Default::default()
            },
            &mut rng,
        );
        for v in agent.params.flat_mut() {
            *v = 0.0;
        }
        agent
    }

    #[test]
    fn empty_stream_is_clean() {
        let agent = zero_agent();
        let args = default_args();
        let mut sink = Vec::new();
        let (recs, stats) =
            replay_stream(&agent, &args, "".as_bytes(), &mut sink, |_| {}).unwrap();
        assert!(recs.is_empty());
        assert_eq!(stats.records_seen, 0);
        assert!(sink.is_empty());
    }

    #[test]
    fn non_monotone_records_are_skipped() {
        let agent = zero_agent();
        let args = default_args();
        let stream = "t,setpoint,measurement\n0,1,0\n0.05,1,0\n0.04,1,0\n0.10,1,0\n";
        let mut warnings = Vec::new();
        let (_recs, stats) = replay_stream(
            &agent,
            &args,
            stream.as_bytes(),
            std::io::sink(),
            |m| warnings.push(m.to_string()),
        )
        .unwrap();
        assert_eq!(stats.records_skipped, 1);
        assert_eq!(stats.records_seen, 4);
        assert!(warnings[0].contains("non-monotone"));
    }

    #[test]
    fn zero_agent_emits_constant_initial_gains() {
        let agent = zero_agent();
        let args = default_args();
        let mut stream = String::from("t,setpoint,measurement\n");
        for k in 0..120 {
            stream.push_str(&format!("{},1,0\n", k as f64 * 0.05));
        }
        let (recs, stats) =
            replay_stream(&agent, &args, stream.as_bytes(), std::io::sink(), |_| {}).unwrap();
        assert_eq!(stats.steps_emitted, recs.len());
        assert!(recs.len() >= 2);
        for r in &recs {
            assert_eq!((r.kp, r.ki), (0.05, 0.05));
        }
    }
}
