//! Closed-loop frequency dynamics.
//!
//! Generators follow the swing equation with a governor and turbine lag
//! driven by the feedback command; load buses have zero inertia, so their
//! frequency is the root of the algebraic balance
//! `D_j w_j = p_j(w_j) + p_const_j - F_j(theta)`, which is re-solved at every
//! stage of the fixed-step RK4 integrator.

use serde::Serialize;

use crate::control::ControlLaw;
use crate::error::{Error, Result};
use crate::network::{AngleSolution, NetworkModel};
use crate::ofc::{OfcBus, OfcProblem, OfcSolution};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemState {
    /// Absolute phase angle per bus, rad.
    pub theta: Vec<f64>,
    /// Frequency deviation per bus, rad/s; load entries are algebraic.
    pub omega: Vec<f64>,
    /// Valve position per generator.
    pub valve: Vec<f64>,
    /// Mechanical power per generator.
    pub power: Vec<f64>,
}

impl SystemState {
    pub fn is_finite(&self) -> bool {
        self.theta
            .iter()
            .chain(&self.omega)
            .chain(&self.valve)
            .chain(&self.power)
            .all(|x| x.is_finite())
    }

    /// `max_j |w_j - mean(w)|`.
    pub fn synchronization_gap(&self) -> f64 {
        let mean = self.omega.iter().sum::<f64>() / self.omega.len() as f64;
        self.omega
            .iter()
            .map(|w| (w - mean).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_frequency(&self) -> f64 {
        self.omega.iter().sum::<f64>() / self.omega.len() as f64
    }
}

/// Time derivatives of the differential variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateDerivative {
    pub theta: Vec<f64>,
    pub omega_gen: Vec<f64>,
    pub valve: Vec<f64>,
    pub power: Vec<f64>,
}

impl StateDerivative {
    /// Largest rate among the non-angle variables.
    pub fn max_non_angle(&self) -> f64 {
        self.omega_gen
            .iter()
            .chain(&self.valve)
            .chain(&self.power)
            .map(|x| x.abs())
            .fold(0.0, f64::max)
    }
}

/// Step change of a bus's constant injection (negative for more consumption).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Disturbance {
    pub time: f64,
    pub bus: usize,
    pub delta_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationOptions {
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            t_end: 10.0,
            dt: 1e-3,
            sample_every: 10,
        }
    }
}

/// Largest per-bus frequency change over the trailing second that still
/// counts as settled, rad/s.
pub const SETTLING_THRESHOLD: f64 = 1e-7;
/// Look-back window of the settling test, s.
pub const SETTLING_WINDOW: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    /// Generator commands `p^c(w)` per sample.
    pub commands: Vec<Vec<f64>>,
    /// Load-bus injections `p_L(w)` per sample.
    pub loads: Vec<Vec<f64>>,
    /// Monitored energy per sample, when a monitor was attached.
    pub energy: Vec<Option<f64>>,
    pub summary: SimulationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    /// Per-bus minimum and maximum frequency deviation over every step.
    pub omega_min: Vec<f64>,
    pub omega_max: Vec<f64>,
    pub settled: bool,
    /// Time after which the settling test held until the end of the run.
    pub settling_time: Option<f64>,
    pub terminal_sync_gap: f64,
    /// Largest `|dw/dt|, |da/dt|, |dp/dt|` at the terminal state.
    pub terminal_rate: f64,
    /// Constant injections in force at the end of the run.
    pub terminal_constants: Vec<f64>,
    pub steps: usize,
}

/// Closed-loop equilibrium together with the optimization and power-flow
/// solutions it was assembled from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equilibrium {
    pub state: SystemState,
    pub ofc: OfcSolution,
    pub angles: AngleSolution,
}

const LOAD_RESIDUAL_TOL: f64 = 1e-12;
const LOAD_MAX_ITER: usize = 200;

/// Network plus one feedback law per bus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoop {
    model: NetworkModel,
    laws: Vec<ControlLaw>,
}

impl ClosedLoop {
    pub fn new(model: NetworkModel, laws: Vec<ControlLaw>) -> Result<Self> {
        if laws.len() != model.n_buses() {
            return Err(Error::input(format!(
                "{} control laws for {} buses",
                laws.len(),
                model.n_buses()
            )));
        }
        Ok(ClosedLoop { model, laws })
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn laws(&self) -> &[ControlLaw] {
        &self.laws
    }

    fn check_constants(&self, constants: &[f64]) -> Result<()> {
        if constants.len() != self.model.n_buses() {
            return Err(Error::input(format!(
                "{} constant injections for {} buses",
                constants.len(),
                self.model.n_buses()
            )));
        }
        Ok(())
    }

    fn check_state(&self, state: &SystemState) -> Result<()> {
        let (n, g) = (self.model.n_buses(), self.model.n_generators());
        if state.theta.len() != n
            || state.omega.len() != n
            || state.valve.len() != g
            || state.power.len() != g
        {
            return Err(Error::input("state dimensions do not match the network"));
        }
        Ok(())
    }

    /// Frequency of every load bus (in load-bus order) given the angles.
    pub fn load_bus_frequency(&self, theta: &[f64], constants: &[f64]) -> Result<Vec<f64>> {
        self.check_constants(constants)?;
        let flows = self.model.net_power_flow(theta)?;
        let mut out = vec![0.0; self.model.n_buses() - self.model.n_generators()];
        self.solve_load_frequencies(&flows, constants, &mut out);
        Ok(out)
    }

    fn solve_load_frequencies(&self, flows: &[f64], constants: &[f64], out: &mut [f64]) {
        let g = self.model.n_generators();
        for (k, bus) in self.model.load_buses().iter().enumerate() {
            let j = g + k;
            out[k] = solve_load_balance(&self.laws[j], bus.damping, constants[j] - flows[j]);
        }
    }

    /// Right-hand side of the closed-loop system.
    pub fn rhs(&self, state: &SystemState, constants: &[f64]) -> Result<StateDerivative> {
        self.check_state(state)?;
        self.check_constants(constants)?;
        let layout = Layout::of(&self.model);
        let y = layout.pack(state);
        let mut dy = vec![0.0; layout.len()];
        let mut ws = Workspace::new(&self.model);
        self.eval(&y, constants, &mut dy, &mut ws);
        Ok(layout.unpack_derivative(&dy))
    }

    /// Evaluates the derivative of the packed differential state.
    fn eval(&self, y: &[f64], constants: &[f64], dy: &mut [f64], ws: &mut Workspace) {
        let n = self.model.n_buses();
        let g = self.model.n_generators();
        let theta = &y[..n];
        self.model.net_power_flow_into(theta, &mut ws.flows);
        self.solve_load_frequencies(&ws.flows, constants, &mut ws.load_omega);

        let omega_gen = &y[n..n + g];
        let valve = &y[n + g..n + 2 * g];
        let power = &y[n + 2 * g..n + 3 * g];
        dy[..g].copy_from_slice(&omega_gen[..g]);
        dy[g..n].copy_from_slice(&ws.load_omega[..n - g]);
        for (j, bus) in self.model.generators().iter().enumerate() {
            let turbine = bus.turbine.expect("generator without turbine");
            let w = omega_gen[j];
            dy[n + j] = (-bus.damping * w + power[j] + constants[j] - ws.flows[j]) / bus.inertia;
            dy[n + g + j] = (self.laws[j].feedback(w) - valve[j]) / turbine.tau_g;
            dy[n + 2 * g + j] = (valve[j] - power[j]) / turbine.tau_b;
        }
    }

    /// One classical RK4 step of length `dt`. Load-bus frequencies of the
    /// returned state are consistent with its angles.
    pub fn step_rk4(&self, state: &SystemState, constants: &[f64], dt: f64) -> Result<SystemState> {
        if !(dt > 0.0) {
            return Err(Error::input(format!("dt must be > 0, got {dt}")));
        }
        self.check_state(state)?;
        self.check_constants(constants)?;
        let layout = Layout::of(&self.model);
        let mut stepper = Stepper::new(&self.model, layout);
        let mut y = layout.pack(state);
        stepper.step(self, &mut y, constants, dt);
        let next = self.finish_state(&layout, &y, constants, &mut stepper.ws);
        if !next.is_finite() {
            return Err(Error::BlowUp { time: dt });
        }
        Ok(next)
    }

    fn finish_state(
        &self,
        layout: &Layout,
        y: &[f64],
        constants: &[f64],
        ws: &mut Workspace,
    ) -> SystemState {
        let n = self.model.n_buses();
        let g = self.model.n_generators();
        self.model.net_power_flow_into(&y[..n], &mut ws.flows);
        self.solve_load_frequencies(&ws.flows, constants, &mut ws.load_omega);
        let mut state = layout.unpack(y);
        state.omega[g..].copy_from_slice(&ws.load_omega);
        state
    }

    /// Integrates from `initial` to `opts.t_end`, applying each disturbance at
    /// the first step boundary at or after its time. `monitor`, when given,
    /// is evaluated on every sampled state. The run length is rounded up to a
    /// whole number of sampling intervals so the last sample is the terminal
    /// state.
    pub fn simulate(
        &self,
        initial: &SystemState,
        disturbances: &[Disturbance],
        opts: &SimulationOptions,
        monitor: Option<&dyn Fn(&SystemState) -> f64>,
    ) -> Result<Trajectory> {
        self.check_state(initial)?;
        let n = self.model.n_buses();
        let g = self.model.n_generators();
        if !(opts.dt > 0.0) || !(opts.t_end > 0.0) || opts.sample_every == 0 {
            return Err(Error::input(
                "simulation needs dt > 0, t_end > 0 and sample_every >= 1",
            ));
        }
        for w in disturbances.windows(2) {
            if w[1].time < w[0].time {
                return Err(Error::input("disturbances must be sorted by time"));
            }
        }
        if let Some(d) = disturbances.iter().find(|d| d.bus >= n || !(d.time >= 0.0)) {
            return Err(Error::input(format!("invalid disturbance {d:?}")));
        }

        let raw_steps = (opts.t_end / opts.dt).round().max(1.0) as usize;
        let steps = raw_steps.div_ceil(opts.sample_every) * opts.sample_every;
        let window = ((SETTLING_WINDOW / opts.dt).round() as usize).max(1);

        let layout = Layout::of(&self.model);
        let mut stepper = Stepper::new(&self.model, layout);
        let mut constants = vec![0.0; n];
        let mut pending = disturbances.iter().peekable();

        // Load frequencies of the initial state follow from its angles.
        let mut y = layout.pack(initial);
        let mut state = self.finish_state(&layout, &y, &constants, &mut stepper.ws);
        let mut history: Vec<Vec<f64>> = vec![state.omega.clone(); window];
        let mut omega_min = state.omega.clone();
        let mut omega_max = state.omega.clone();
        let mut last_violation: Option<f64> = None;

        let capacity = steps / opts.sample_every + 1;
        let mut traj = Trajectory {
            times: Vec::with_capacity(capacity),
            states: Vec::with_capacity(capacity),
            commands: Vec::with_capacity(capacity),
            loads: Vec::with_capacity(capacity),
            energy: Vec::with_capacity(capacity),
            summary: SimulationSummary {
                omega_min: Vec::new(),
                omega_max: Vec::new(),
                settled: false,
                settling_time: None,
                terminal_sync_gap: 0.0,
                terminal_rate: 0.0,
                terminal_constants: Vec::new(),
                steps,
            },
        };

        for k in 0..=steps {
            let t = k as f64 * opts.dt;
            let mut changed = false;
            while let Some(d) = pending.next_if(|d| t >= d.time - 1e-9 * opts.dt) {
                constants[d.bus] += d.delta_p;
                changed = true;
            }
            if changed {
                state = self.finish_state(&layout, &y, &constants, &mut stepper.ws);
            }

            if k % opts.sample_every == 0 {
                traj.times.push(t);
                traj.commands.push(
                    (0..g)
                        .map(|j| self.laws[j].feedback(state.omega[j]))
                        .collect(),
                );
                traj.loads.push(
                    (g..n)
                        .map(|j| self.laws[j].feedback(state.omega[j]))
                        .collect(),
                );
                traj.energy.push(monitor.map(|m| m(&state)));
                traj.states.push(state.clone());
            }
            if k == steps {
                break;
            }

            stepper.step(self, &mut y, &constants, opts.dt);
            state = self.finish_state(&layout, &y, &constants, &mut stepper.ws);
            let t_next = (k + 1) as f64 * opts.dt;
            if !state.is_finite() {
                return Err(Error::BlowUp { time: t_next });
            }

            for j in 0..n {
                omega_min[j] = omega_min[j].min(state.omega[j]);
                omega_max[j] = omega_max[j].max(state.omega[j]);
            }
            let slot = (k + 1) % window;
            let drift = state
                .omega
                .iter()
                .zip(&history[slot])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if drift > SETTLING_THRESHOLD {
                last_violation = Some(t_next);
            }
            history[slot].copy_from_slice(&state.omega);
        }

        let t_final = steps as f64 * opts.dt;
        let settled = last_violation.is_none_or(|t| t < t_final);
        let terminal_rate = self.rhs(&state, &constants)?.max_non_angle();
        traj.summary = SimulationSummary {
            omega_min,
            omega_max,
            settled,
            settling_time: settled.then(|| last_violation.unwrap_or(0.0)),
            terminal_sync_gap: state.synchronization_gap(),
            terminal_rate,
            terminal_constants: constants,
            steps,
        };
        Ok(traj)
    }

    /// OFC problem whose optimum is the equilibrium under `constants`.
    pub fn ofc_problem(&self, constants: &[f64]) -> Result<OfcProblem> {
        self.check_constants(constants)?;
        OfcProblem::new(
            self.model
                .buses()
                .iter()
                .zip(&self.laws)
                .zip(constants)
                .map(|((bus, law), &offset)| OfcBus {
                    law: *law,
                    damping: bus.damping,
                    offset,
                })
                .collect(),
        )
    }

    /// Closed-loop equilibrium: OFC optimum for the injections, common
    /// frequency `lambda*`, governor and turbine at `p*`, and angles from the
    /// flat-start power flow.
    pub fn equilibrium(&self, constants: &[f64]) -> Result<Equilibrium> {
        let ofc = self.ofc_problem(constants)?.solve()?;
        let n = self.model.n_buses();
        let g = self.model.n_generators();
        let mut injections: Vec<f64> = (0..n)
            .map(|j| ofc.p_star[j] + constants[j] - ofc.d_star[j])
            .collect();
        // Remove the bisection's residual imbalance so the flows are consistent.
        let mean = injections.iter().sum::<f64>() / n as f64;
        injections.iter_mut().for_each(|p| *p -= mean);
        let angles = self.model.solve_equilibrium_angles(&injections)?;
        let state = SystemState {
            theta: angles.theta.clone(),
            omega: vec![ofc.lambda_star; n],
            valve: ofc.p_star[..g].to_vec(),
            power: ofc.p_star[..g].to_vec(),
        };
        Ok(Equilibrium { state, ofc, angles })
    }
}

/// Root of `D w - p(w) = rhs` where `p` is the non-increasing load law.
fn solve_load_balance(law: &ControlLaw, damping: f64, rhs: f64) -> f64 {
    let mut a = (law.lo() + rhs) / damping;
    let mut b = (law.hi() + rhs) / damping;
    if a == b {
        return a;
    }
    let residual = |w: f64| damping * w - law.feedback(w) - rhs;
    let mut w = 0.5 * (a + b);
    for _ in 0..LOAD_MAX_ITER {
        let r = residual(w);
        if r.abs() <= LOAD_RESIDUAL_TOL {
            break;
        }
        if r > 0.0 {
            b = w;
        } else {
            a = w;
        }
        let newton = w - r / (damping - law.feedback_slope(w));
        let next = if newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if next == w || b - a <= 4.0 * f64::EPSILON * w.abs().max(1e-300) {
            break;
        }
        w = next;
    }
    w
}

/// Packing of `(theta, omega_gen, valve, power)` into one vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    g: usize,
}

impl Layout {
    fn of(model: &NetworkModel) -> Self {
        Layout {
            n: model.n_buses(),
            g: model.n_generators(),
        }
    }

    fn len(&self) -> usize {
        self.n + 3 * self.g
    }

    fn pack(&self, s: &SystemState) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.len());
        y.extend_from_slice(&s.theta);
        y.extend_from_slice(&s.omega[..self.g]);
        y.extend_from_slice(&s.valve);
        y.extend_from_slice(&s.power);
        y
    }

    /// Load-bus frequencies are left at zero; callers fill them in.
    fn unpack(&self, y: &[f64]) -> SystemState {
        let (n, g) = (self.n, self.g);
        let mut omega = vec![0.0; n];
        omega[..g].copy_from_slice(&y[n..n + g]);
        SystemState {
            theta: y[..n].to_vec(),
            omega,
            valve: y[n + g..n + 2 * g].to_vec(),
            power: y[n + 2 * g..n + 3 * g].to_vec(),
        }
    }

    fn unpack_derivative(&self, dy: &[f64]) -> StateDerivative {
        let (n, g) = (self.n, self.g);
        StateDerivative {
            theta: dy[..n].to_vec(),
            omega_gen: dy[n..n + g].to_vec(),
            valve: dy[n + g..n + 2 * g].to_vec(),
            power: dy[n + 2 * g..n + 3 * g].to_vec(),
        }
    }
}

struct Workspace {
    flows: Vec<f64>,
    load_omega: Vec<f64>,
}

impl Workspace {
    fn new(model: &NetworkModel) -> Self {
        Workspace {
            flows: vec![0.0; model.n_buses()],
            load_omega: vec![0.0; model.n_buses() - model.n_generators()],
        }
    }
}

struct Stepper {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
    ws: Workspace,
}

impl Stepper {
    fn new(model: &NetworkModel, layout: Layout) -> Self {
        let m = layout.len();
        Stepper {
            k: std::array::from_fn(|_| vec![0.0; m]),
            stage: vec![0.0; m],
            ws: Workspace::new(model),
        }
    }

    fn step(&mut self, sys: &ClosedLoop, y: &mut [f64], constants: &[f64], dt: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        sys.eval(y, constants, k1, &mut self.ws);
        for i in 0..y.len() {
            self.stage[i] = y[i] + 0.5 * dt * k1[i];
        }
        sys.eval(&self.stage, constants, k2, &mut self.ws);
        for i in 0..y.len() {
            self.stage[i] = y[i] + 0.5 * dt * k2[i];
        }
        sys.eval(&self.stage, constants, k3, &mut self.ws);
        for i in 0..y.len() {
            self.stage[i] = y[i] + dt * k3[i];
        }
        sys.eval(&self.stage, constants, k4, &mut self.ws);
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}
