use proptest::prelude::*;

use freqctl::control::{ControlLaw, Cost};
use freqctl::ofc::{OfcBus, OfcProblem};

fn bus() -> impl Strategy<Value = OfcBus> {
    (
        -1.0f64..1.0,
        0.0f64..1.0,
        0.0f64..1.0,
        0.05f64..2.0,
        0.5f64..2.0,
        -1.0f64..1.0,
        prop::bool::weighted(0.15),
    )
        .prop_map(|(p_set, below, above, r, damping, offset, fixed)| OfcBus {
            law: if fixed {
                ControlLaw::constant(p_set)
            } else {
                ControlLaw::new(Cost::quadratic(r, p_set), p_set - below, p_set + above).unwrap()
            },
            damping,
            offset,
        })
}

fn problem() -> impl Strategy<Value = OfcProblem> {
    prop::collection::vec(bus(), 1..=20).prop_map(|b| OfcProblem::new(b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn residual_strictly_decreasing(p in problem(), a in -20.0f64..20.0, step in 1e-6f64..5.0) {
        prop_assert!(p.balance_residual(a + step) < p.balance_residual(a));
    }

    #[test]
    fn solve_agrees_with_grid_oracle(p in problem()) {
        let solved = p.solve().unwrap();
        let oracle = p.oracle_solve((-10.0, 10.0), 1e-3).unwrap();
        prop_assert!((solved.lambda_star - oracle.lambda_star).abs() <= 1e-2);
        let kkt = p.kkt_check(&solved.p_star, &solved.d_star, solved.lambda_star, 1e-9).unwrap();
        prop_assert!(kkt.passed(), "{:?}", kkt);
    }

    #[test]
    fn multiplier_is_unique(p in problem(), eps in 1e-6f64..1e-2) {
        let l = p.solve().unwrap().lambda_star;
        prop_assert!(p.balance_residual(l - eps) > 0.0);
        prop_assert!(p.balance_residual(l + eps) < 0.0);
    }

    #[test]
    fn optimum_beats_feasible_perturbations(
        p in problem(),
        noise in prop::collection::vec(-0.5f64..0.5, 20),
        spread in prop::collection::vec(0.0f64..1.0, 20),
    ) {
        let best = p.solve().unwrap();
        let buses = p.buses();
        let n = buses.len();
        let moved: Vec<f64> = buses
            .iter()
            .zip(&best.p_star)
            .zip(&noise)
            .map(|((b, &x), &e)| (x + e).clamp(b.law.lo(), b.law.hi()))
            .collect();
        // Restore power balance by spreading the change over d.
        let supply: f64 = moved.iter().zip(buses).map(|(x, b)| x + b.offset).sum();
        let weights: Vec<f64> = spread[..n].iter().map(|w| w + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        let base: f64 = best.d_star.iter().sum();
        let d: Vec<f64> = best
            .d_star
            .iter()
            .zip(&weights)
            .map(|(&d, w)| d + (supply - base) * w / total)
            .collect();
        let ours = p.objective(&best.p_star, &best.d_star);
        let theirs = p.objective(&moved, &d);
        prop_assert!(ours <= theirs + 1e-9 * (1.0 + theirs.abs()), "{ours} > {theirs}");
    }
}
