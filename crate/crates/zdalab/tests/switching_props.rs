mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use zdalab::attack::{simulate_plant, PlantSetup};
use zdalab::dynamics::{consensus_error, system_matrix, OutputConfig};
use zdalab::linalg::solve_lyapunov;
use zdalab::switching::{
    active_topology, certify_consensus, is_hurwitz, matrix_measure, observer_error_matrix, tune_dwell, StepSwitcher,
    SwitchingSchedule,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedule_is_periodic(d1 in 1u32..20, d2 in 1u32..20, d3 in 1u32..20, t in 0.0f64..50.0) {
        let s = SwitchingSchedule::new(vec![(4, d1 as f64 * 0.25), (9, d2 as f64 * 0.25), (4, d3 as f64 * 0.25)]).unwrap();
        prop_assert_eq!(active_topology(&s, 0.0, t), active_topology(&s, 0.0, t + s.period));
        prop_assert_eq!(active_topology(&s, 1.0, t + 1.0), active_topology(&s, 0.0, t));
    }

    #[test]
    fn step_switcher_agrees_with_active_topology(d1 in 1u32..8, d2 in 1u32..8, step in 0usize..20_000) {
        let s = SwitchingSchedule::new(vec![(1, d1 as f64 * 0.5), (2, d2 as f64 * 0.5)]).unwrap();
        let sw = StepSwitcher::new(&s, 1e-3).unwrap();
        // sample in the middle of the step to stay clear of the switching instants
        let t = (step as f64 + 0.5) * 1e-3;
        prop_assert_eq!(sw.at(step).1, active_topology(&s, 0.0, t));
    }

    #[test]
    fn matrix_measure_is_subadditive(seed in any::<u64>(), k in 2usize..=6) {
        let mut r = common::rng(seed);
        let a = DMatrix::from_fn(k, k, |_, _| r.random_range(-2.0..2.0));
        let b = DMatrix::from_fn(k, k, |_, _| r.random_range(-2.0..2.0));
        let h = DMatrix::from_fn(k, k, |_, _| r.random_range(-1.0..1.0));
        let p = &h * h.transpose() + DMatrix::identity(k, k) * 0.5;
        let lhs = matrix_measure(&(&a + &b), &p).unwrap();
        let rhs = matrix_measure(&a, &p).unwrap() + matrix_measure(&b, &p).unwrap();
        prop_assert!(lhs <= rhs + 1e-10, "{} > {}", lhs, rhs);
    }

    #[test]
    fn observer_error_matrix_is_hurwitz(seed in any::<u64>(), n in 2usize..=10) {
        let mut r = common::rng(seed);
        let t = common::random_connected(&mut r, 1, n, 0.3);
        let monitored = common::random_subset(&mut r, n, 3);
        let mut chat = DMatrix::zeros(n, n);
        for &i in &monitored {
            chat[(i, i)] = r.random_range(0.2..2.0);
        }
        let a = observer_error_matrix(&t.laplacian(), &chat);
        prop_assert!(is_hurwitz(&a));
        // and a Lyapunov certificate exists
        let p = solve_lyapunov(&a, &DMatrix::identity(2 * n, 2 * n)).unwrap();
        prop_assert!(p.symmetric_eigenvalues().iter().all(|&e| e > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn certified_schedules_reach_consensus(seed in any::<u64>(), n in 3usize..=16) {
        let mut r = common::rng(seed);
        let tops = vec![common::random_connected(&mut r, 1, n, 0.6), common::random_connected(&mut r, 2, n, 0.6)];
        let sched = SwitchingSchedule::new(vec![(1, 1.0), (2, 2.0)]).unwrap();
        let tuned = tune_dwell(&sched, &tops, 4).unwrap();
        prop_assume!(tuned.is_some());
        let (sched, cert) = tuned.unwrap();
        prop_assert!(cert.passed);
        prop_assert!(certify_consensus(&sched, &tops, None).unwrap().passed);
        let cfg = OutputConfig::velocity(n, vec![0]).unwrap();
        let init = common::random_vector(&mut r, 2 * n, 1.0);
        let horizon = 10.0 * sched.period;
        let setup = PlantSetup { topologies: &tops, schedule: &sched, cfg: &cfg, init, t0: 0.0, horizon, dt: 1e-3 };
        let tr = simulate_plant(&setup, None, None).unwrap();
        let last = tr.states.last().unwrap();
        let (spread, vmax) = consensus_error(&last.rows(0, n).into_owned(), &last.rows(n, n).into_owned());
        prop_assert!(spread < 1e-3 && vmax < 1e-3, "spread {} vmax {}", spread, vmax);
    }
}

#[test]
fn system_matrix_of_a_connected_graph_is_marginally_stable() {
    let t = common::p3();
    let a = system_matrix(&t.laplacian());
    assert!(!is_hurwitz(&a));
}
