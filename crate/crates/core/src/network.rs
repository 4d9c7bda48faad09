//! Network graph, lossless power flows and equilibrium angles.
//!
//! Powers are per-unit on a common base, angles are radians and frequency
//! deviations are rad/s relative to the nominal frequency.

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

/// Governor and turbine time constants of a generator, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Turbine {
    pub tau_g: f64,
    pub tau_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Rotor inertia M; zero on load buses.
    pub inertia: f64,
    /// Damping / frequency-sensitive load coefficient D.
    pub damping: f64,
    pub p_set: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    /// Present iff the bus is a generator.
    pub turbine: Option<Turbine>,
}

impl Bus {
    pub fn generator(
        id: usize,
        inertia: f64,
        damping: f64,
        turbine: Turbine,
        p_set: f64,
        p_lo: f64,
        p_hi: f64,
    ) -> Self {
        Bus {
            id,
            kind: BusKind::Generator,
            inertia,
            damping,
            p_set,
            p_lo,
            p_hi,
            turbine: Some(turbine),
        }
    }

    pub fn load(id: usize, damping: f64, p_set: f64, p_lo: f64, p_hi: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Load,
            inertia: 0.0,
            damping,
            p_set,
            p_lo,
            p_hi,
            turbine: None,
        }
    }

    pub fn is_generator(&self) -> bool {
        self.kind == BusKind::Generator
    }

    fn validate(&self, issues: &mut Vec<String>) {
        let id = self.id;
        match self.kind {
            BusKind::Generator => {
                if !(self.inertia > 0.0) {
                    issues.push(format!("bus {id}: generator inertia must be > 0"));
                }
                match self.turbine {
                    Some(t) if t.tau_g > 0.0 && t.tau_b > 0.0 => {}
                    Some(_) => issues.push(format!("bus {id}: tau_g and tau_b must be > 0")),
                    None => issues.push(format!("bus {id}: generator needs tau_g and tau_b")),
                }
            }
            BusKind::Load => {
                if self.inertia != 0.0 {
                    issues.push(format!("bus {id}: load inertia must be exactly 0"));
                }
                if self.turbine.is_some() {
                    issues.push(format!("bus {id}: load bus cannot carry a turbine"));
                }
            }
        }
        if !(self.damping > 0.0) {
            issues.push(format!("bus {id}: damping must be > 0"));
        }
        if !(self.p_lo <= self.p_set && self.p_set <= self.p_hi) {
            issues.push(format!(
                "bus {id}: bounds must satisfy p_lo <= p_set <= p_hi (got {} <= {} <= {})",
                self.p_lo, self.p_set, self.p_hi
            ));
        }
    }
}

/// Directed line; `y` is the maximum real power transfer |V_i||V_j|/x_ij.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    n_generators: usize,
}

/// Result of the static power-flow solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleSolution {
    pub theta: Vec<f64>,
    /// Per line, whether `-pi/2 < theta_from - theta_to < pi/2`.
    pub line_secure: Vec<bool>,
    pub secure: bool,
    pub iterations: usize,
    pub residual: f64,
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;

impl NetworkModel {
    /// Builds a validated model. Buses must be ordered generators first with
    /// ids `0..N`, and the graph must be connected.
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self> {
        let mut issues = Vec::new();
        let n = buses.len();
        if n == 0 {
            issues.push("network has no buses".to_string());
        }
        for (i, bus) in buses.iter().enumerate() {
            if bus.id != i {
                issues.push(format!(
                    "bus at position {i} has id {}; ids must be 0..N-1 in order",
                    bus.id
                ));
            }
            bus.validate(&mut issues);
        }
        let n_generators = buses.iter().take_while(|b| b.is_generator()).count();
        if buses[n_generators..].iter().any(Bus::is_generator) {
            issues.push("generator buses must precede load buses".to_string());
        }

        let mut seen = HashSet::new();
        for (k, line) in lines.iter().enumerate() {
            if line.from >= n || line.to >= n {
                issues.push(format!(
                    "line {k}: endpoint out of range ({} -> {})",
                    line.from, line.to
                ));
                continue;
            }
            if line.from == line.to {
                issues.push(format!("line {k}: self-loop on bus {}", line.from));
            }
            if !(line.y > 0.0) {
                issues.push(format!("line {k}: y must be > 0"));
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !seen.insert(key) {
                issues.push(format!(
                    "line {k}: duplicate connection {} - {}",
                    key.0, key.1
                ));
            }
        }

        if issues.is_empty() && !is_connected(n, &lines) {
            issues.push("network graph is not connected".to_string());
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(NetworkModel {
            buses,
            lines,
            n_generators,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.n_generators
    }

    pub fn generators(&self) -> &[Bus] {
        &self.buses[..self.n_generators]
    }

    pub fn load_buses(&self) -> &[Bus] {
        &self.buses[self.n_generators..]
    }

    /// Net real power flowing out of every bus for the given angles.
    pub fn net_power_flow(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(theta.len(), "theta")?;
        let mut flows = vec![0.0; self.n_buses()];
        self.net_power_flow_into(theta, &mut flows);
        Ok(flows)
    }

    /// Unchecked variant writing into `out`; lengths must equal the bus count.
    pub(crate) fn net_power_flow_into(&self, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|f| *f = 0.0);
        for line in &self.lines {
            let flow = line.y * (theta[line.from] - theta[line.to]).sin();
            out[line.from] += flow;
            out[line.to] -= flow;
        }
    }

    /// Angle difference across each line, `theta_from - theta_to`.
    pub fn line_angles(&self, theta: &[f64]) -> Vec<f64> {
        self.lines
            .iter()
            .map(|l| theta[l.from] - theta[l.to])
            .collect()
    }

    /// Solves `F(theta) = injections` by damped Newton from a flat start with
    /// bus 0 as the angle reference.
    pub fn solve_equilibrium_angles(&self, injections: &[f64]) -> Result<AngleSolution> {
        self.check_dim(injections.len(), "injections")?;
        let total: f64 = injections.iter().sum();
        if total.abs() > 1e-9 {
            return Err(Error::input(format!(
                "injections must sum to zero, got {total:e}"
            )));
        }
        let n = self.n_buses();
        let mut theta = vec![0.0; n];
        let mut flows = vec![0.0; n];

        let residual = |theta: &[f64], flows: &mut Vec<f64>| {
            self.net_power_flow_into(theta, flows);
            flows
                .iter()
                .zip(injections)
                .map(|(f, p)| (f - p).abs())
                .fold(0.0, f64::max)
        };

        let mut res = residual(&theta, &mut flows);
        let mut iterations = 0;
        while res > NEWTON_TOL {
            if iterations == NEWTON_MAX_ITER {
                return Err(Error::PowerFlowInfeasible(format!(
                    "Newton did not converge in {NEWTON_MAX_ITER} iterations (residual {res:e})"
                )));
            }
            iterations += 1;
            if n == 1 {
                break;
            }

            let mismatch = DVector::from_iterator(n - 1, (1..n).map(|j| injections[j] - flows[j]));
            let step = self
                .reduced_jacobian(&theta)
                .lu()
                .solve(&mismatch)
                .ok_or_else(|| {
                    Error::PowerFlowInfeasible("singular power-flow Jacobian".to_string())
                })?;

            let mut scale = 1.0;
            let mut trial = theta.clone();
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                for j in 1..n {
                    trial[j] = theta[j] + scale * step[j - 1];
                }
                let trial_res = residual(&trial, &mut flows);
                if trial_res.is_finite() && trial_res < res {
                    theta.copy_from_slice(&trial);
                    res = trial_res;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                return Err(Error::PowerFlowInfeasible(format!(
                    "damped Newton stalled at residual {res:e}"
                )));
            }
        }

        let line_secure: Vec<bool> = self
            .line_angles(&theta)
            .into_iter()
            .map(|d| d > -FRAC_PI_2 && d < FRAC_PI_2)
            .collect();
        Ok(AngleSolution {
            secure: line_secure.iter().all(|&s| s),
            line_secure,
            theta,
            iterations,
            residual: res,
        })
    }

    /// Jacobian of the flows on buses `1..N` with respect to `theta_1..theta_{N-1}`.
    fn reduced_jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = self.n_buses();
        let mut jac = DMatrix::zeros(n - 1, n - 1);
        for line in &self.lines {
            let k = line.y * (theta[line.from] - theta[line.to]).cos();
            let (i, j) = (line.from, line.to);
            if i > 0 {
                jac[(i - 1, i - 1)] += k;
            }
            if j > 0 {
                jac[(j - 1, j - 1)] += k;
            }
            if i > 0 && j > 0 {
                jac[(i - 1, j - 1)] -= k;
                jac[(j - 1, i - 1)] -= k;
            }
        }
        jac
    }

    fn check_dim(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n_buses() {
            return Err(Error::input(format!(
                "{what} has {len} entries, network has {} buses",
                self.n_buses()
            )));
        }
        Ok(())
    }
}

fn is_connected(n: usize, lines: &[Line]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adjacency = vec![Vec::new(); n];
    for l in lines {
        adjacency[l.from].push(l.to);
        adjacency[l.to].push(l.from);
    }
    let mut visited = vec![false; n];
    let mut stack = vec![0];
    visited[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adjacency[u] {
            if !visited[v] {
                visited[v] = true;
                stack.push(v);
            }
        }
    }
    visited.into_iter().all(|v| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn load(id: usize) -> Bus {
        Bus::load(id, 1.0, 0.0, 0.0, 0.0)
    }

    fn gen(id: usize) -> Bus {
        let t = Turbine {
            tau_g: 0.1,
            tau_b: 0.5,
        };
        Bus::generator(id, 1.0, 1.0, t, 0.0, 0.0, 0.0)
    }

    pub(crate) fn two_bus() -> NetworkModel {
        NetworkModel::new(
            vec![gen(0), load(1)],
            vec![Line {
                from: 0,
                to: 1,
                y: 1.0,
            }],
        )
        .unwrap()
    }

    fn chain3() -> NetworkModel {
        NetworkModel::new(
            vec![gen(0), load(1), load(2)],
            vec![
                Line {
                    from: 0,
                    to: 1,
                    y: 1.0,
                },
                Line {
                    from: 1,
                    to: 2,
                    y: 1.0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn flat_angles_give_zero_flow() {
        let f = chain3().net_power_flow(&[0.0; 3]).unwrap();
        assert!(f.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_bus_flow_matches_arcsine() {
        let f = two_bus().net_power_flow(&[0.304693, 0.0]).unwrap();
        assert!((f[0] - 0.3).abs() < 1e-6);
        assert!((f[1] + 0.3).abs() < 1e-6);
    }

    #[test]
    fn chain_flow() {
        let f = chain3()
            .net_power_flow(&[PI / 6.0, 0.0, -PI / 6.0])
            .unwrap();
        assert!((f[0] - 0.5).abs() < 1e-12);
        assert!(f[1].abs() < 1e-12);
        assert!((f[2] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            two_bus().net_power_flow(&[0.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_injections_flat_solution() {
        let sol = chain3().solve_equilibrium_angles(&[0.0; 3]).unwrap();
        assert_eq!(sol.theta, vec![0.0; 3]);
        assert!(sol.secure);
    }

    #[test]
    fn two_bus_angles() {
        let sol = two_bus().solve_equilibrium_angles(&[0.3, -0.3]).unwrap();
        // Bus 0 is the reference; only the difference is physical.
        assert_eq!(sol.theta[0], 0.0);
        assert!((sol.theta[0] - sol.theta[1] - 0.3f64.asin()).abs() < 1e-10);
        assert!((sol.theta[0] - sol.theta[1] - 0.304693).abs() < 1e-6);
        assert!(sol.residual <= 1e-10);
        assert!(sol.secure);
    }

    #[test]
    fn overloaded_line_is_infeasible() {
        let err = two_bus()
            .solve_equilibrium_angles(&[1.5, -1.5])
            .unwrap_err();
        assert!(matches!(err, Error::PowerFlowInfeasible(_)), "{err}");
    }

    #[test]
    fn unbalanced_injections_rejected() {
        assert!(matches!(
            two_bus().solve_equilibrium_angles(&[0.3, -0.2]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn rejects_bad_topology() {
        let disconnected = NetworkModel::new(
            vec![gen(0), load(1), load(2)],
            vec![Line {
                from: 0,
                to: 1,
                y: 1.0,
            }],
        );
        assert!(matches!(disconnected, Err(Error::Validation(_))));

        let antiparallel = NetworkModel::new(
            vec![gen(0), load(1)],
            vec![
                Line {
                    from: 0,
                    to: 1,
                    y: 1.0,
                },
                Line {
                    from: 1,
                    to: 0,
                    y: 1.0,
                },
            ],
        );
        assert!(matches!(antiparallel, Err(Error::Validation(_))));

        let misordered = NetworkModel::new(
            vec![load(0), gen(1)],
            vec![Line {
                from: 0,
                to: 1,
                y: 1.0,
            }],
        );
        assert!(matches!(misordered, Err(Error::Validation(_))));
    }
}
