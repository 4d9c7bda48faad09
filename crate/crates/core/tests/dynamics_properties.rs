use proptest::prelude::*;

use freqctl::control::{ControlLaw, Cost};
use freqctl::dynamics::{ClosedLoop, Disturbance, SimulationOptions, SystemState};
use freqctl::lyapunov::{certify, Verdict, DEFAULT_DELTA};
use freqctl::network::{Bus, Line, NetworkModel, Turbine};

#[derive(Debug, Clone)]
struct Case {
    system: ClosedLoop,
    disturbance: Disturbance,
}

/// Generator with a slope below its damping, two controllable loads in a
/// triangle; the equilibrium is always certified.
fn certified_case() -> impl Strategy<Value = Case> {
    (
        0.5f64..2.0,
        1.0f64..2.0,
        0.0f64..0.9,
        5.0f64..15.0,
        5.0f64..30.0,
        -0.4f64..0.4,
        0usize..3,
    )
        .prop_map(|(m, d, slope, y, load_gain, delta, bus)| {
            let turbine = Turbine {
                tau_g: 0.1,
                tau_b: 0.5,
            };
            let model = NetworkModel::new(
                vec![
                    Bus::generator(0, m, d, turbine, 1.0, 0.0, 2.0),
                    Bus::load(1, 1.0, -0.5, -1.0, 0.0),
                    Bus::load(2, 1.0, -0.5, -1.0, 0.0),
                ],
                vec![
                    Line { from: 0, to: 1, y },
                    Line { from: 1, to: 2, y },
                    Line { from: 0, to: 2, y },
                ],
            )
            .unwrap();
            let gen_law = if slope < 0.05 {
                ControlLaw::constant(1.0)
            } else {
                ControlLaw::new(Cost::quadratic(1.0 / (slope * d), 1.0), 0.0, 2.0).unwrap()
            };
            let load = ControlLaw::new(Cost::quadratic(1.0 / load_gain, -0.5), -1.0, 0.0).unwrap();
            Case {
                system: ClosedLoop::new(model, vec![gen_law, load, load]).unwrap(),
                disturbance: Disturbance {
                    time: 0.0,
                    bus,
                    delta_p: delta,
                },
            }
        })
}

fn constants(case: &Case) -> Vec<f64> {
    let mut c = vec![0.0; 3];
    c[case.disturbance.bus] += case.disturbance.delta_p;
    c
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn equilibrium_is_stationary(case in certified_case()) {
        let eq = case.system.equilibrium(&constants(&case)).unwrap();
        let rate = case.system.rhs(&eq.state, &constants(&case)).unwrap();
        prop_assert!(rate.max_non_angle() <= 1e-9, "{:?}", rate);
        let spread = rate.theta.iter().fold(0.0f64, |a, t| a.max((t - rate.theta[0]).abs()));
        prop_assert!(spread <= 1e-9);
    }

    #[test]
    fn trajectories_reach_the_ofc_optimum(case in certified_case()) {
        let setpoint = case.system.equilibrium(&[0.0; 3]).unwrap();
        let target = case.system.equilibrium(&constants(&case)).unwrap();
        let opts = SimulationOptions { t_end: 60.0, dt: 0.005, sample_every: 100 };
        let traj = case.system.simulate(&setpoint.state, &[case.disturbance], &opts, None).unwrap();
        let last = traj.states.last().unwrap();
        let loads = traj.loads.last().unwrap();
        prop_assert!((last.power[0] - target.ofc.p_star[0]).abs() <= 1e-4);
        for (load, want) in loads.iter().zip(&target.ofc.p_star[1..]) {
            prop_assert!((load - want).abs() <= 1e-4);
        }
        for w in &last.omega {
            prop_assert!((w - target.ofc.lambda_star).abs() <= 1e-4);
        }
    }

    #[test]
    fn certified_energy_never_increases(case in certified_case()) {
        let setpoint = case.system.equilibrium(&[0.0; 3]).unwrap();
        let target = case.system.equilibrium(&constants(&case)).unwrap();
        let cert = certify(&case.system, &target.state, DEFAULT_DELTA).unwrap();
        prop_assert_eq!(cert.verdict, Verdict::Certified);
        let model = case.system.model();
        let energy = |s: &SystemState| cert.energy_total(model, s, &target.state).unwrap();
        let opts = SimulationOptions { t_end: 10.0, dt: 0.002, sample_every: 5 };
        let traj = case
            .system
            .simulate(&setpoint.state, &[case.disturbance], &opts, Some(&energy))
            .unwrap();
        let values: Vec<f64> = traj.energy.iter().map(|v| v.unwrap()).collect();
        prop_assert!(values[0] >= 0.0);
        for w in values.windows(2) {
            prop_assert!(w[1] - w[0] <= 1e-8 * w[0].max(1.0), "{} -> {}", w[0], w[1]);
        }
    }
}
