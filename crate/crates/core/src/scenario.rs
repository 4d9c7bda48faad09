//! JSON scenarios, experiment runs and result files.
//!
//! A scenario lists buses in id order (generators first), lines,
//! disturbances, run parameters and optionally the two-case comparison
//! setup. Control boxes are derived from a capacity fraction `c`:
//! `[p_set(1 - c), p_set(1 + c)]` on generators and
//! `[p_set(1 + c/2), p_set(1 - c/2)]` on loads (`p_set <= 0`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ControlLaw, Cost, DEFAULT_LIPSCHITZ_DELTA};
use crate::deviation_to_hz;
use crate::dynamics::{
    ClosedLoop, Disturbance, Equilibrium, SimulationOptions, SystemState, Trajectory,
};
use crate::error::{Error, Result};
use crate::lyapunov::{certify, StabilityCertificate, Verdict};
use crate::network::{Bus, BusKind, Line, NetworkModel, Turbine};
use crate::ofc::OfcSolution;

/// Droop gain `1/R` per unit of `|p_set|` used when `R` is omitted.
pub const DEFAULT_GAIN_PER_PU: f64 = 25.0;

/// Relative tolerance of the per-sample monotonicity test on `V_total`.
pub const LYAPUNOV_STEP_TOL: f64 = 1e-8;

const CAPACITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub kind: ControlKind,
    pub p_set: f64,
    /// Cost curvature; the droop gain is `1/R`.
    #[serde(
        default,
        rename = "R",
        alias = "r",
        skip_serializing_if = "Option::is_none"
    )]
    pub r: Option<f64>,
    /// Capacity fraction `c`.
    #[serde(default)]
    pub capacity: f64,
    #[serde(default = "yes")]
    pub controllable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub kind: BusKind,
    #[serde(default)]
    pub inertia: f64,
    pub damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_b: Option<f64>,
    pub control: ControlSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
    pub lipschitz_delta: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        let opts = SimulationOptions::default();
        RunSpec {
            t_end: opts.t_end,
            dt: opts.dt,
            sample_every: opts.sample_every,
            lipschitz_delta: DEFAULT_LIPSCHITZ_DELTA,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for the CSV and JSON files; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Two-case setup: case 1 controls every generator at capacity `c`; case 2
/// controls `case2_generators` at `c` and every load at `c/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub capacity: f64,
    pub case2_generators: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub buses: Vec<BusSpec>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSpec>,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Scenario::from_json(&text).map_err(|e| e.context(path.display().to_string()))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut scenario: Scenario = serde_json::from_str(text)?;
        scenario
            .disturbances
            .sort_by(|a, b| a.time.total_cmp(&b.time));
        scenario.closed_loop()?;
        Ok(scenario)
    }

    pub fn options(&self) -> SimulationOptions {
        SimulationOptions {
            t_end: self.run.t_end,
            dt: self.run.dt,
            sample_every: self.run.sample_every,
        }
    }

    /// Constant injections once every disturbance has been applied.
    pub fn final_constants(&self) -> Vec<f64> {
        let mut constants = vec![0.0; self.buses.len()];
        for d in &self.disturbances {
            if let Some(c) = constants.get_mut(d.bus) {
                *c += d.delta_p;
            }
        }
        constants
    }

    /// Validates the whole scenario, reporting every problem at once, and
    /// builds the closed-loop system.
    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        let mut issues = Vec::new();
        let n = self.buses.len();
        if self.name.trim().is_empty() {
            issues.push("name must not be empty".to_string());
        }
        if !(self.run.dt > 0.0) || !self.run.dt.is_finite() {
            issues.push(format!("run.dt must be > 0 (got {})", self.run.dt));
        }
        if !(self.run.t_end > self.run.dt) || !self.run.t_end.is_finite() {
            issues.push(format!(
                "run.t_end must exceed run.dt (got {})",
                self.run.t_end
            ));
        }
        if self.run.sample_every == 0 {
            issues.push("run.sample_every must be >= 1".to_string());
        }
        if !(self.run.lipschitz_delta > 0.0) {
            issues.push("run.lipschitz_delta must be > 0".to_string());
        }
        for (k, d) in self.disturbances.iter().enumerate() {
            if d.bus >= n {
                issues.push(format!("disturbances[{k}]: unknown bus {}", d.bus));
            }
            if !(d.time >= 0.0) || !d.delta_p.is_finite() {
                issues.push(format!(
                    "disturbances[{k}]: time must be >= 0 and delta_p finite"
                ));
            }
        }
        if let Some(cmp) = &self.comparison {
            if !(cmp.capacity >= 0.0) {
                issues.push(format!(
                    "comparison.capacity must be >= 0 (got {})",
                    cmp.capacity
                ));
            }
            for &g in &cmp.case2_generators {
                if self.buses.get(g).map(|b| b.kind) != Some(BusKind::Generator) {
                    issues.push(format!(
                        "comparison.case2_generators: bus {g} is not a generator"
                    ));
                }
            }
        }

        let mut buses = Vec::with_capacity(n);
        let mut laws = Vec::with_capacity(n);
        for (id, spec) in self.buses.iter().enumerate() {
            let before = issues.len();
            let (lo, hi) = spec.bounds(id, &mut issues);
            let law = spec.law(id, lo, hi, &mut issues);
            if issues.len() > before {
                continue;
            }
            let bus = match spec.kind {
                BusKind::Generator => Bus::generator(
                    id,
                    spec.inertia,
                    spec.damping,
                    Turbine {
                        tau_g: spec.tau_g.unwrap_or(f64::NAN),
                        tau_b: spec.tau_b.unwrap_or(f64::NAN),
                    },
                    spec.control.p_set,
                    lo,
                    hi,
                ),
                BusKind::Load => {
                    if spec.tau_g.is_some() || spec.tau_b.is_some() {
                        issues.push(format!("buses[{id}]: load buses take no tau_g/tau_b"));
                    }
                    Bus {
                        inertia: spec.inertia,
                        ..Bus::load(id, spec.damping, spec.control.p_set, lo, hi)
                    }
                }
            };
            buses.push(bus);
            laws.extend(law);
        }
        if buses.len() == n {
            match NetworkModel::new(buses, self.lines.clone()) {
                Ok(model) if issues.is_empty() => return ClosedLoop::new(model, laws),
                Ok(_) => {}
                Err(Error::Validation(more)) => issues.extend(more),
                Err(e) => issues.push(e.to_string()),
            }
        }
        Err(Error::Validation(issues))
    }

    /// Total control range `sum (p_hi - p_lo)` over every bus.
    pub fn control_capacity(&self) -> Result<f64> {
        let system = self.closed_loop()?;
        Ok(system.laws().iter().map(|l| l.hi() - l.lo()).sum())
    }

    /// Scenario for comparison case 1 (`case == 1`) or case 2 (`case == 2`).
    pub fn comparison_case(&self, case: u8) -> Result<Scenario> {
        let cmp = self
            .comparison
            .as_ref()
            .ok_or_else(|| Error::input("scenario has no comparison section"))?;
        if case != 1 && case != 2 {
            return Err(Error::input(format!(
                "comparison case must be 1 or 2, got {case}"
            )));
        }
        let mut out = self.clone();
        out.name = format!("{}_case{case}", self.name);
        out.comparison = None;
        for (id, bus) in out.buses.iter_mut().enumerate() {
            let active = match (bus.kind, case) {
                (BusKind::Generator, 1) => true,
                (BusKind::Generator, _) => cmp.case2_generators.contains(&id),
                (BusKind::Load, 1) => false,
                (BusKind::Load, _) => true,
            };
            bus.control.controllable = active;
            bus.control.capacity = if active { cmp.capacity } else { 0.0 };
        }
        Ok(out)
    }
}

impl BusSpec {
    fn bounds(&self, id: usize, issues: &mut Vec<String>) -> (f64, f64) {
        let c = &self.control;
        if !c.p_set.is_finite() {
            issues.push(format!("buses[{id}].control.p_set must be finite"));
            return (0.0, 0.0);
        }
        if !(c.capacity >= 0.0) {
            issues.push(format!(
                "buses[{id}].control.capacity must be >= 0 (got {})",
                c.capacity
            ));
            return (c.p_set, c.p_set);
        }
        if !c.controllable {
            return (c.p_set, c.p_set);
        }
        match self.kind {
            BusKind::Generator => {
                let (a, b) = (c.p_set * (1.0 - c.capacity), c.p_set * (1.0 + c.capacity));
                (a.min(b), a.max(b))
            }
            BusKind::Load => {
                if c.p_set > 0.0 {
                    issues.push(format!("buses[{id}]: controllable load needs p_set <= 0"));
                }
                let half = 0.5 * c.capacity;
                (c.p_set * (1.0 + half), c.p_set * (1.0 - half))
            }
        }
    }

    fn law(&self, id: usize, lo: f64, hi: f64, issues: &mut Vec<String>) -> Option<ControlLaw> {
        let c = &self.control;
        if !c.controllable {
            return Some(ControlLaw::constant(c.p_set));
        }
        let r = match c.r {
            Some(r) => r,
            None if c.p_set != 0.0 => 1.0 / (DEFAULT_GAIN_PER_PU * c.p_set.abs()),
            None => {
                issues.push(format!("buses[{id}].control.R is required when p_set = 0"));
                return None;
            }
        };
        if !(r > 0.0) || !r.is_finite() {
            issues.push(format!("buses[{id}].control.R must be > 0 (got {r})"));
            return None;
        }
        match c.kind {
            ControlKind::Quadratic => match ControlLaw::new(Cost::quadratic(r, c.p_set), lo, hi) {
                Ok(law) => Some(law),
                Err(e) => {
                    issues.push(format!("buses[{id}]: {e}"));
                    None
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub lambda_star: f64,
    pub ofc: OfcSolution,
    pub terminal_time: f64,
    /// Per-bus frequency deviation at the end of the run, rad/s.
    pub terminal_omega: Vec<f64>,
    pub terminal_valve: Vec<f64>,
    pub terminal_power: Vec<f64>,
    /// Mean terminal deviation, rad/s, and the same in Hz.
    pub terminal_deviation: f64,
    pub terminal_hz: f64,
    pub terminal_sync_gap: f64,
    pub terminal_v_total: Option<f64>,
    /// Per-bus extreme deviation in the direction of the net disturbance.
    pub nadir: Vec<f64>,
    pub nadir_hz: Vec<f64>,
    /// Nadir of largest magnitude across buses.
    pub worst_nadir: f64,
    pub settled: bool,
    pub settling_time: Option<f64>,
    pub verdict: Verdict,
    pub certificate: StabilityCertificate,
    /// Sampled increases of `V_total` beyond tolerance after the last
    /// disturbance.
    pub lyapunov_violations: usize,
    pub control_capacity: f64,
    pub csv_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
}

/// Report together with the data it was computed from.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trajectory: Trajectory,
    pub system: ClosedLoop,
    pub setpoint: Equilibrium,
    pub equilibrium: Equilibrium,
}

/// Runs the scenario and writes its files into `scenario.output.dir`.
pub fn run(scenario: &Scenario) -> Result<RunReport> {
    Ok(execute(scenario, scenario.output.dir.as_deref())?.report)
}

/// Setpoint equilibrium, disturbed simulation with the `V_total` monitor,
/// certificate of the post-disturbance equilibrium, and optional output.
pub fn execute(scenario: &Scenario, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let ctx = |e: Error| e.context(format!("scenario '{}'", scenario.name));
    let system = scenario.closed_loop().map_err(ctx)?;
    let n = system.model().n_buses();
    let setpoint = system.equilibrium(&vec![0.0; n]).map_err(ctx)?;
    let constants = scenario.final_constants();
    let equilibrium = system.equilibrium(&constants).map_err(ctx)?;
    let certificate =
        certify(&system, &equilibrium.state, scenario.run.lipschitz_delta).map_err(ctx)?;

    let target = equilibrium.state.clone();
    let energy = |s: &SystemState| {
        certificate
            .energy_total(system.model(), s, &target)
            .unwrap_or(f64::NAN)
    };
    let has_energy = certificate
        .generators
        .iter()
        .all(|g| g.construction.coefficients().is_some());
    let monitor: Option<&dyn Fn(&SystemState) -> f64> =
        if has_energy { Some(&energy) } else { None };
    let trajectory = system
        .simulate(
            &setpoint.state,
            &scenario.disturbances,
            &scenario.options(),
            monitor,
        )
        .map_err(ctx)?;

    let report = build_report(
        scenario,
        &system,
        &equilibrium,
        certificate.clone(),
        &trajectory,
    );
    let mut outcome = RunOutcome {
        report,
        trajectory,
        system,
        setpoint,
        equilibrium,
    };
    if let Some(dir) = out_dir {
        write_outputs(&mut outcome, dir, &scenario.name).map_err(ctx)?;
    }
    Ok(outcome)
}

fn build_report(
    scenario: &Scenario,
    system: &ClosedLoop,
    equilibrium: &Equilibrium,
    certificate: StabilityCertificate,
    traj: &Trajectory,
) -> RunReport {
    let last = traj
        .states
        .last()
        .expect("trajectory has at least one sample");
    let s = &traj.summary;
    let net: f64 = scenario.disturbances.iter().map(|d| d.delta_p).sum();
    let nadir: Vec<f64> = s
        .omega_min
        .iter()
        .zip(&s.omega_max)
        .map(|(&lo, &hi)| {
            let upward = net > 0.0 || (net == 0.0 && hi.abs() > lo.abs());
            if upward {
                hi
            } else {
                lo
            }
        })
        .collect();
    let worst_nadir = nadir
        .iter()
        .copied()
        .fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
    let terminal_deviation = last.mean_frequency();

    let last_disturbance = scenario.disturbances.last().map_or(0.0, |d| d.time);
    let mut lyapunov_violations = 0;
    for (k, w) in traj.energy.windows(2).enumerate() {
        if traj.times[k] + 1e-12 < last_disturbance {
            continue;
        }
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            if b - a > LYAPUNOV_STEP_TOL * a.abs().max(1.0) {
                lyapunov_violations += 1;
            }
        }
    }

    RunReport {
        scenario: scenario.name.clone(),
        lambda_star: equilibrium.ofc.lambda_star,
        ofc: equilibrium.ofc.clone(),
        terminal_time: *traj.times.last().expect("non-empty"),
        terminal_omega: last.omega.clone(),
        terminal_valve: last.valve.clone(),
        terminal_power: last.power.clone(),
        terminal_deviation,
        terminal_hz: deviation_to_hz(terminal_deviation),
        terminal_sync_gap: s.terminal_sync_gap,
        terminal_v_total: traj.energy.last().copied().flatten(),
        nadir_hz: nadir.iter().map(|&w| deviation_to_hz(w)).collect(),
        nadir,
        worst_nadir,
        settled: s.settled,
        settling_time: s.settling_time,
        verdict: certificate.verdict,
        certificate,
        lyapunov_violations,
        control_capacity: system.laws().iter().map(|l| l.hi() - l.lo()).sum(),
        csv_path: None,
        report_path: None,
    }
}

/// Trajectory as CSV: `t, theta_i, omega_i, a_g, p_g, V_total`, twelve
/// significant digits, empty `V_total` when no certificate is available.
pub fn trajectory_csv(system: &ClosedLoop, traj: &Trajectory) -> String {
    let n = system.model().n_buses();
    let g = system.model().n_generators();
    let mut out = String::from("t");
    for prefix in ["theta", "omega"] {
        for i in 0..n {
            let _ = write!(out, ",{prefix}_{i}");
        }
    }
    for prefix in ["a", "p"] {
        for i in 0..g {
            let _ = write!(out, ",{prefix}_{i}");
        }
    }
    out.push_str(",V_total\n");
    for ((t, s), v) in traj.times.iter().zip(&traj.states).zip(&traj.energy) {
        let _ = write!(out, "{t:.11e}");
        for x in s
            .theta
            .iter()
            .chain(&s.omega)
            .chain(&s.valve)
            .chain(&s.power)
        {
            let _ = write!(out, ",{x:.11e}");
        }
        match v {
            Some(v) => {
                let _ = writeln!(out, ",{v:.11e}");
            }
            None => out.push_str(",\n"),
        }
    }
    out
}

fn write_outputs(outcome: &mut RunOutcome, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let report_path = dir.join(format!("{stem}.report.json"));
    fs::write(
        &csv_path,
        trajectory_csv(&outcome.system, &outcome.trajectory),
    )?;
    outcome.report.csv_path = Some(csv_path);
    outcome.report.report_path = Some(report_path.clone());
    fs::write(&report_path, serde_json::to_string_pretty(&outcome.report)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub capacity_case1: f64,
    pub capacity_case2: f64,
    pub case1: RunReport,
    pub case2: RunReport,
    /// `|worst nadir|` of case 2 does not exceed that of case 1.
    pub case2_nadir_not_worse: bool,
    /// `terminal_hz(case 2) - terminal_hz(case 1)`; reported, not asserted.
    pub steady_state_gap_hz: f64,
    pub report_path: Option<PathBuf>,
}

/// Runs both comparison cases in parallel with identical disturbances.
pub fn compare_cases(scenario: &Scenario) -> Result<ComparisonReport> {
    compare_cases_in(scenario, scenario.output.dir.as_deref())
}

pub fn compare_cases_in(scenario: &Scenario, out_dir: Option<&Path>) -> Result<ComparisonReport> {
    let ctx = |e: Error| e.context(format!("scenario '{}'", scenario.name));
    let case1 = scenario.comparison_case(1).map_err(ctx)?;
    let case2 = scenario.comparison_case(2).map_err(ctx)?;
    let capacity_case1 = case1.control_capacity().map_err(ctx)?;
    let capacity_case2 = case2.control_capacity().map_err(ctx)?;
    if (capacity_case1 - capacity_case2).abs() > CAPACITY_TOL {
        return Err(ctx(Error::CapacityMismatch {
            case1: capacity_case1,
            case2: capacity_case2,
        }));
    }

    let (r1, r2) = std::thread::scope(|s| {
        let h1 = s.spawn(|| execute(&case1, out_dir));
        let h2 = s.spawn(|| execute(&case2, out_dir));
        (
            h1.join().expect("case 1 worker panicked"),
            h2.join().expect("case 2 worker panicked"),
        )
    });
    let case1 = r1?.report;
    let case2 = r2?.report;
    let mut report = ComparisonReport {
        scenario: scenario.name.clone(),
        capacity_case1,
        capacity_case2,
        case2_nadir_not_worse: case2.worst_nadir.abs() <= case1.worst_nadir.abs(),
        steady_state_gap_hz: case2.terminal_hz - case1.terminal_hz,
        case1,
        case2,
        report_path: None,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| ctx(e.into()))?;
        let path = dir.join(format!("{}.comparison.json", scenario.name));
        report.report_path = Some(path.clone());
        let json = serde_json::to_string_pretty(&report).map_err(|e| ctx(e.into()))?;
        fs::write(&path, json).map_err(|e| ctx(e.into()))?;
    }
    Ok(report)
}
