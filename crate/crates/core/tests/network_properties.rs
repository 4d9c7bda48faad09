use proptest::prelude::*;

use freqctl::network::{Bus, Line, NetworkModel, Turbine};

/// Random connected graph: a spanning tree plus optional chords.
fn network() -> impl Strategy<Value = NetworkModel> {
    (2usize..10)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((any::<prop::sample::Index>(), 0.5f64..10.0), n - 1),
                prop::collection::vec(
                    (
                        any::<prop::sample::Index>(),
                        any::<prop::sample::Index>(),
                        0.5f64..10.0,
                    ),
                    0..4,
                ),
            )
        })
        .prop_map(|(n, tree, chords)| {
            let mut lines: Vec<Line> = tree
                .iter()
                .enumerate()
                .map(|(k, (parent, y))| Line {
                    from: parent.index(k + 1),
                    to: k + 1,
                    y: *y,
                })
                .collect();
            for (a, b, y) in chords {
                let (from, to) = (a.index(n), b.index(n));
                let taken = lines
                    .iter()
                    .any(|l| (l.from, l.to) == (from, to) || (l.from, l.to) == (to, from));
                if from != to && !taken {
                    lines.push(Line { from, to, y });
                }
            }
            let buses = (0..n)
                .map(|i| {
                    if i == 0 {
                        Bus::generator(
                            0,
                            1.0,
                            1.0,
                            Turbine {
                                tau_g: 0.1,
                                tau_b: 0.5,
                            },
                            0.0,
                            0.0,
                            0.0,
                        )
                    } else {
                        Bus::load(i, 1.0, 0.0, 0.0, 0.0)
                    }
                })
                .collect();
            NetworkModel::new(buses, lines).unwrap()
        })
}

fn with_angles() -> impl Strategy<Value = (NetworkModel, Vec<f64>)> {
    network().prop_flat_map(|m| {
        let n = m.n_buses();
        (Just(m), prop::collection::vec(-6.0f64..6.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn flows_sum_to_zero((m, theta) in with_angles()) {
        let flows = m.net_power_flow(&theta).unwrap();
        let scale: f64 = m.lines().iter().map(|l| l.y).sum();
        prop_assert!(flows.iter().sum::<f64>().abs() <= 1e-12 * scale);
    }

    #[test]
    fn flows_ignore_common_rotation((m, theta) in with_angles(), shift in -10.0f64..10.0) {
        let a = m.net_power_flow(&theta).unwrap();
        let moved: Vec<f64> = theta.iter().map(|t| t + shift).collect();
        let b = m.net_power_flow(&moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn solved_angles_reproduce_injections(
        (m, raw) in network().prop_flat_map(|m| {
            let n = m.n_buses();
            (Just(m), prop::collection::vec(-0.3f64..0.3, n))
        })
    ) {
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let injections: Vec<f64> = raw.iter().map(|p| p - mean).collect();
        let sol = m.solve_equilibrium_angles(&injections).unwrap();
        prop_assert_eq!(sol.theta[0], 0.0);
        let flows = m.net_power_flow(&sol.theta).unwrap();
        for (f, p) in flows.iter().zip(&injections) {
            prop_assert!((f - p).abs() <= 1e-9);
        }
        prop_assert!(sol.secure);
    }
}
