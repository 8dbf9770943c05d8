//! Property tests for the simulation, control and estimation invariants.

use proptest::prelude::*;

use metatune_core::env::{sample_task, step_cost, GainDelta, TaskRanges};
use metatune_core::pca::pca;
use metatune_core::pi::{simc_tune_standard, PiGains};
use metatune_core::ppo::gae;
use metatune_core::sim::{FoptdSim, FoptdTask};
use metatune_core::tank::{two_tank_step, TwoTankParams, TwoTankState};

fn task_strategy() -> impl Strategy<Value = FoptdTask> {
    (0.25f64..=1.0, 0.25f64..=1.0, 0.0f64..=1.0)
        .prop_map(|(gain, tau, ratio)| FoptdTask {
            gain,
            tau,
            theta: ratio * tau,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn foptd_is_linear(task in task_strategy(), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dt = 0.05;
        let u1: Vec<f64> = (0..60).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let u2: Vec<f64> = (0..60).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let run = |u: &dyn Fn(usize) -> f64| {
            let mut sim = FoptdSim::new(&task, dt, 0.0, 0.0).unwrap();
            (0..60).map(|k| sim.step(&task, u(k)).unwrap()).collect::<Vec<_>>()
        };
        let y1 = run(&|k| u1[k]);
        let y2 = run(&|k| u2[k]);
        let y12 = run(&|k| u1[k] + u2[k]);
        for k in 0..60 {
            prop_assert!((y12[k] - y1[k] - y2[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn foptd_time_scaling_power_of_two(task in task_strategy(), pow in -2i32..=3) {
        let c = 2f64.powi(pow);
        let dt = 0.05;
        let scaled = FoptdTask { gain: task.gain, tau: c * task.tau, theta: c * task.theta };
        let mut a = FoptdSim::new(&task, dt, 0.07, 0.0).unwrap();
        let mut b = FoptdSim::new(&scaled, c * dt, 0.07, 0.0).unwrap();
        for k in 0..120 {
            let u = ((k as f64) * 0.31).sin();
            prop_assert_eq!(a.step(&task, u).unwrap(), b.step(&scaled, u).unwrap());
        }
    }

    #[test]
    fn tank_stays_nonnegative(seed in 0u64..500, level0 in 0.1f64..10.0) {
        use rand::{Rng, SeedableRng};
        let params = TwoTankParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = TwoTankState::equilibrium(&params, level0);
        for _ in 0..400 {
            let pump: f64 = rng.gen_range(0.0..100.0);
            s = two_tank_step(&s, pump, &params);
            prop_assert!(s.level >= 0.0 && s.level <= params.height);
            prop_assert!(s.f_in >= 0.0 && s.f_out >= 0.0 && s.m >= 0.0);
        }
    }

    #[test]
    fn pi_standard_form_round_trip(kc in 0.001f64..100.0, ti in 0.001f64..100.0) {
        let g = PiGains::from_standard(kc, ti);
        let (kc2, ti2) = g.to_standard().unwrap();
        prop_assert_eq!(kc, kc2);
        prop_assert!((ti - ti2).abs() <= 1e-12 * ti);
    }

    #[test]
    fn simc_is_scale_covariant(task in task_strategy(), c in 0.1f64..10.0, tau_cl in 0.1f64..5.0) {
        let scaled = FoptdTask { gain: task.gain, tau: c * task.tau, theta: c * task.theta };
        let (kc1, ti1) = simc_tune_standard(&task, tau_cl).unwrap();
        let (kc2, ti2) = simc_tune_standard(&scaled, c * tau_cl).unwrap();
        prop_assert!((kc1 - kc2).abs() < 1e-9 * kc1.abs().max(1.0));
        prop_assert!((ti2 - c * ti1).abs() < 1e-9 * (c * ti1).abs().max(1.0));
    }

    #[test]
    fn cost_is_nonnegative_and_zero_iff_perfect(
        errs in prop::collection::vec(-2.0f64..2.0, 5..50),
        dkp in -0.1f64..0.1,
        dki in -0.1f64..0.1,
    ) {
        let y: Vec<f64> = errs.iter().map(|e| 0.3 + e).collect();
        let yd = vec![0.3; y.len()];
        let a = GainDelta { dkp, dki };
        let c = step_cost(&y, &yd, &a, 0.5, 0.5);
        prop_assert!(c >= 0.0);
        let perfect = step_cost(&yd, &yd, &GainDelta::zero(), 0.5, 0.5);
        prop_assert_eq!(perfect, 0.0);
        if c == 0.0 {
            prop_assert!(errs.iter().all(|e| *e == 0.0));
            prop_assert!(dkp == 0.0 && dki == 0.0);
        }
    }

    #[test]
    fn sampled_tasks_stay_in_box(seed in 0u64..2000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t = sample_task(&mut rng, &TaskRanges::default());
        prop_assert!(t.in_training_box());
        prop_assert!(t.theta <= t.tau);
    }

    #[test]
    fn gae_lambda_one_matches_brute_force(
        costs in prop::collection::vec(-3.0f64..3.0, 40),
        discount in 0.9f64..0.999,
    ) {
        let values = vec![0.0; costs.len()];
        let (adv, _) = gae(&costs, &values, discount, 1.0).unwrap();
        for t in 0..costs.len() {
            let mut ret = 0.0;
            let mut g = 1.0;
            for k in t..costs.len() {
                ret += g * -costs[k];
                g *= discount;
            }
            prop_assert!((adv[t] - ret).abs() < 1e-9);
        }
    }

    #[test]
    fn pca_ratios_are_normalized(seed in 0u64..300, n in 5usize..40, d in 2usize..10) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let p = pca(&rows).unwrap();
        let sum: f64 = p.explained_variance.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        for w in p.explained_variance.windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-12);
        }
        // Reconstruction from the full basis recovers the centered data.
        for r in rows.iter().take(3) {
            let proj = p.project(r, d);
            let rec = p.reconstruct_centered(&proj);
            for i in 0..d {
                prop_assert!((rec[i] - (r[i] - p.mean[i])).abs() < 1e-8);
            }
        }
    }
}

/// SIMC tunings stabilize their own process across the training box:
/// bounded output under the alternating setpoint for 200 time units.
#[test]
fn simc_closed_loop_is_stable_across_training_box() {
    use metatune_core::env::{ClosedLoop, EpisodeConfig};
    use metatune_core::pi::{default_tau_cl, simc_tune};

    let cfg = EpisodeConfig::default();
    for gain in [0.25, 0.5, 0.75, 1.0] {
        for tau in [0.25, 0.5, 0.75, 1.0] {
            for ratio in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let task = FoptdTask {
                    gain,
                    tau,
                    theta: ratio * tau,
                };
                let gains = simc_tune(&task, default_tau_cl(&task)).unwrap();
                let mut lp = ClosedLoop::new(task, cfg.dt, 0.0, gains).unwrap();
                let n = (200.0 / cfg.dt).round() as usize;
                let mut y = Vec::new();
                let mut yd = Vec::new();
                lp.run_substeps(n, &mut |k| cfg.setpoint_at_substep(k), &mut y, &mut yd, None);
                let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(
                    max < 10.0,
                    "task {task:?}: |y| reached {max}"
                );
            }
        }
    }
}
