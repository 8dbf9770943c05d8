//! End-to-end checks of the command surfaces: config handling, artifact
//! layout, and the stream-replay path agreeing exactly with the simulation
//! path.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metatune_cli::commands::tune::{replay_stream, TuneArgs};
use metatune_cli::config;
use metatune_core::agent::{Agent, AgentConfig};
use metatune_core::env::EpisodeConfig;
use metatune_core::eval::record_episode;
use metatune_core::ppo::TrainConfig;
use metatune_core::sim::FoptdTask;

fn test_agent(seed: u64) -> Agent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Agent::new(
        AgentConfig {
            hidden: 8,
            ..AgentConfig::default()
        },
        &mut rng,
    )
}

fn tune_args() -> TuneArgs {
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

/// Replaying a recorded closed-loop log must reproduce the gains the
/// simulated run applied, exactly: both sides run the identical actor on
/// identical inputs.
#[test]
fn stream_replay_matches_simulated_gains_exactly() {
    let agent = test_agent(42);
    let episode = EpisodeConfig::default();
    let task = FoptdTask::new(0.5, 1.0, 0.2).unwrap();
    let rec = record_episode(&agent, task, &episode).unwrap();

    // Reference gains: re-run the same episode, collecting per-step gains.
    let mut env =
        metatune_core::env::FoptdEnv::with_initial_output(task, episode.clone(), 0.0).unwrap();
    let mut hs = agent.initial_actor_state();
    let mut expected = Vec::new();
    for _ in 0..episode.n_steps {
        let state = env.state();
        let a = agent.deterministic_action(&state, &mut hs, 1.0).unwrap();
        env.step(a).unwrap();
        let g = env.gains();
        expected.push((g.kp, g.ki));
    }

    // Stream the recorded rows through the online replay path.
    let mut stream = String::from("t,setpoint,measurement\n");
    for row in &rec.rows {
        writeln!(stream, "{},{},{}", row.t, row.setpoint, row.y).unwrap();
    }
    let (records, stats) = replay_stream(
        &agent,
        &tune_args(),
        stream.as_bytes(),
        std::io::sink(),
        |m| panic!("unexpected warning: {m}"),
    )
    .unwrap();
    assert_eq!(stats.records_skipped, 0);
    assert!(records.len() >= episode.n_steps);

    for (i, (kp, ki)) in expected.iter().enumerate() {
        assert_eq!(
            records[i].kp, *kp,
            "step {i}: kp {} vs {kp}",
            records[i].kp
        );
        assert_eq!(
            records[i].ki, *ki,
            "step {i}: ki {} vs {ki}",
            records[i].ki
        );
    }
}

#[test]
fn config_presets_and_strictness() {
    let cfg = config::preset("scaled").unwrap();
    assert_eq!(cfg.hidden, 32);
    assert!(config::preset("enormous").is_err());

    let mut cfg = TrainConfig::smoke();
    assert!(config::apply(&mut cfg, "epochs", "3").is_ok());
    assert_eq!(cfg.epochs, 3);
    let err = config::apply(&mut cfg, "nonsense_key", "1").unwrap_err();
    assert!(err.to_string().contains("nonsense_key"));
    assert!(config::apply(&mut cfg, "epochs", "many").is_err());
}

#[test]
fn out_dirs_are_create_only() {
    let base = std::env::temp_dir().join(format!("metatune-test-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    let dir = metatune_cli::prepare_out_dir(Some(&base), "unused").unwrap();
    std::fs::write(dir.join("artifact.txt"), "x").unwrap();
    let err = metatune_cli::prepare_out_dir(Some(&base), "unused").unwrap_err();
    assert!(err.to_string().contains("create-only"));
    std::fs::remove_dir_all(&base).unwrap();
}

#[test]
fn trajectory_csv_grows_from_start_row() {
    let agent = test_agent(3);
    let episode = EpisodeConfig::default();
    let task = FoptdTask::new(0.6, 0.8, 0.1).unwrap();
    let rec = record_episode(&agent, task, &episode).unwrap();
    // Start row plus n_steps * substeps rows.
    assert_eq!(
        rec.rows.len(),
        1 + episode.n_steps * episode.substeps_per_step()
    );
    assert_eq!(rec.rows[0].t, 0.0);
    // The per-step cost is stamped onto every row.
    assert!(rec.rows.iter().all(|r| r.cost.is_finite()));
}
