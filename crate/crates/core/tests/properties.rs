//! Randomized invariants across modules.

use proptest::prelude::*;
use qsdlab::config::ExperimentConfig;
use qsdlab::flow;
use qsdlab::ldp::RateFunctional;
use qsdlab::qsd::{self, QsdOptions};
use qsdlab::simplex::{self, SimplexGrid};
use qsdlab::{PayoffGame, RevisionProtocol, TransitionKernel};

fn payoff(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), d)
}

fn interior_point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, d).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn aspiration(rows: &[Vec<f64>], scale: f64) -> RevisionProtocol {
    RevisionProtocol::aspiration_uniform(PayoffGame::new(rows).unwrap(), scale).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ranks_round_trip(d in 2usize..5, n in 2u32..12, seed in any::<u64>()) {
        let grid = SimplexGrid::new(d, n).unwrap();
        prop_assert_eq!(grid.len() as u128, simplex::state_count(d, n));
        prop_assert_eq!(grid.interior_len() as u128, simplex::interior_count(d, n));
        let r = (seed % grid.len() as u64) as usize;
        let point = grid.unrank(r).unwrap().to_vec();
        prop_assert_eq!(point.iter().sum::<u32>(), n);
        prop_assert_eq!(grid.rank(&point).unwrap(), r);
    }

    #[test]
    fn kernel_rows_are_stochastic(rows in payoff(3), scale in 0.05f64..1.0, n in 3u32..10) {
        let grid = SimplexGrid::new(3, n).unwrap();
        let kernel = TransitionKernel::assemble(&aspiration(&rows, scale), &grid).unwrap();
        for s in kernel.rows().row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let q = kernel.interior();
        for (s, leak) in q.matrix().row_sums().iter().zip(q.leak()) {
            prop_assert!((s + leak - 1.0).abs() < 1e-12);
        }
        for &r in grid.interior_ranks() {
            prop_assert!(kernel.leave_probability(r) <= 1.0);
        }
    }

    #[test]
    fn mean_field_is_tangent(rows in payoff(3), scale in 0.05f64..1.0, x in interior_point(3)) {
        let f = aspiration(&rows, scale).mean_field(&x).unwrap();
        prop_assert!(f.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn projection_lands_on_simplex(mut x in prop::collection::vec(-0.2f64..1.0, 2..6)) {
        x[0] = x[0].abs() + 0.1;
        flow::project(&mut x);
        prop_assert!(x.iter().all(|v| *v >= 0.0));
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn qsd_is_a_fixed_probability_vector(rows in payoff(2), scale in 0.1f64..1.0, n in 4u32..30) {
        let grid = SimplexGrid::new(2, n).unwrap();
        let kernel = TransitionKernel::assemble(&aspiration(&rows, scale), &grid).unwrap();
        let sol = qsd::solve_qsd(kernel.interior(), QsdOptions::default()).unwrap();
        prop_assert!(sol.mu.iter().all(|v| *v >= 0.0));
        prop_assert!((sol.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(sol.rho > 0.0 && sol.rho < 1.0);
        let pushed = qsd::conditional_pushforward(kernel.interior(), &sol.mu).unwrap();
        let defect: f64 = pushed.iter().zip(&sol.mu).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(defect < 1e-9, "defect {}", defect);
    }

    #[test]
    fn local_rate_is_nonnegative(rows in payoff(3), x in interior_point(3), b in prop::collection::vec(-0.3f64..0.3, 2)) {
        let rf = RateFunctional::new(&aspiration(&rows, 0.5));
        let beta = [b[0], b[1], -b[0] - b[1]];
        prop_assert!(rf.local_rate(&x, &beta).unwrap() >= 0.0);
        prop_assert_eq!(rf.log_mgf(&x, &[0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn normalized_config_is_a_fixed_point(n in 2u32..500, seed in any::<u32>(), m in 10u32..80) {
        let text = format!(
            "[model]\npayoff = [[1.0, 0.0], [0.0, 2.0]]\n[grid]\nN = {n}\n[sim]\nseed = {seed}\n[ldp]\nM = {m}\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let echo = cfg.normalized();
        let again = ExperimentConfig::from_toml(&echo).unwrap();
        prop_assert_eq!(again.normalized(), echo);
        prop_assert_eq!(again.n(), n);
    }
}
