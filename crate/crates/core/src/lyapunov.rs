//! Composite Lyapunov function and the per-generator stability certificate.
//!
//! `V_total = V_0 + sum_g V_g` where `V_0` is the network energy function
//! (kinetic energy of the rotors plus the potential stored on the lines) and
//! `V_g = (1/2) y^T P y` is a quadratic form on the governor/turbine
//! deviations `y = (a - a*, p - p*)` with diagonal `P`.
//!
//! With `xi = P22/(4 tau_b)`, `sigma = xi/gamma` and `z = tau_g gamma/P11`, the
//! derivative of `V_g` obeys
//!
//! ```text
//! dV_g/dt <= -alpha p~^2 + beta w~^2 - gamma (a~ + eta p~)^2
//! alpha = P22/tau_b - P22^2/(4 gamma tau_b^2) = 4 xi (1 - sigma)
//! beta  = P11^2 L^2 / (4 tau_g (P11 - gamma tau_g)) = L^2 xi / (4 sigma z (1 - z))
//! eta   = -P22 / (2 gamma tau_b)
//! ```
//!
//! whenever the command is `L`-Lipschitz in frequency. The equilibrium is
//! asymptotically stable if every generator has `beta < D` and
//! `4 alpha (D - beta) > 1`; the best attainable value of the latter is
//! `D^2 / L^2` at `z = sigma = 1/2`, `xi = D / (4 L^2)`, so the test reduces
//! to `L < D`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Matrix2;
use rand::Rng;
use serde::Serialize;

use crate::control::DEFAULT_LIPSCHITZ_DELTA;
use crate::dynamics::{ClosedLoop, SystemState};
use crate::error::{Error, Result};
use crate::network::{NetworkModel, Turbine};

/// Diagonal `P` and the coefficients of the derivative bound for one
/// generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GovernorCoefficients {
    pub p11: f64,
    pub p22: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub xi: f64,
    pub sigma: f64,
    pub z: f64,
}

impl GovernorCoefficients {
    /// Builds the coefficients from `P` and the split parameter `gamma`.
    pub fn from_p(turbine: Turbine, lipschitz: f64, p11: f64, p22: f64, gamma: f64) -> Self {
        let Turbine { tau_g, tau_b } = turbine;
        let xi = p22 / (4.0 * tau_b);
        GovernorCoefficients {
            p11,
            p22,
            alpha: p22 / tau_b - p22 * p22 / (4.0 * gamma * tau_b * tau_b),
            beta: p11 * p11 * lipschitz * lipschitz / (4.0 * tau_g * (p11 - gamma * tau_g)),
            gamma,
            eta: -p22 / (2.0 * gamma * tau_b),
            xi,
            sigma: xi / gamma,
            z: tau_g * gamma / p11,
        }
    }

    /// Every inequality the composite argument needs, for damping `d`.
    pub fn check(&self, turbine: Turbine, damping: f64) -> BoundChecks {
        let Turbine { tau_g, tau_b } = turbine;
        let upper = self.p11 / tau_g;
        let lower = self.p22 / (4.0 * tau_b);
        BoundChecks {
            p_positive: self.p11 > 0.0 && self.p22 > 0.0,
            p_diagonal_dominance: upper > lower,
            gamma_in_range: self.gamma > lower && self.gamma < upper,
            alpha_positive: self.alpha > 0.0,
            beta_below_damping: self.beta < damping,
            margin: 4.0 * self.alpha * (damping - self.beta),
            transform_in_domain: self.xi > 0.0
                && self.sigma > 0.0
                && self.sigma < 1.0
                && self.z > 0.0
                && self.z < 1.0,
        }
    }

    /// `(dV_g/dt, bound)` at one point, where `dV_g/dt` is evaluated through
    /// the linear governor/turbine dynamics and `bound` is the right-hand side
    /// of the derivative inequality.
    pub fn derivative_and_bound(
        &self,
        turbine: Turbine,
        valve_dev: f64,
        power_dev: f64,
        command_dev: f64,
        omega_dev: f64,
    ) -> (f64, f64) {
        let Turbine { tau_g, tau_b } = turbine;
        let valve_rate = (-valve_dev + command_dev) / tau_g;
        let power_rate = (valve_dev - power_dev) / tau_b;
        let derivative = self.p11 * valve_dev * valve_rate + self.p22 * power_dev * power_rate;
        let bound = -self.alpha * power_dev * power_dev + self.beta * omega_dev * omega_dev
            - self.gamma * (valve_dev + self.eta * power_dev).powi(2);
        (derivative, bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundChecks {
    pub p_positive: bool,
    pub p_diagonal_dominance: bool,
    pub gamma_in_range: bool,
    pub alpha_positive: bool,
    pub beta_below_damping: bool,
    /// `4 alpha (D - beta)`; must exceed 1.
    pub margin: f64,
    pub transform_in_domain: bool,
}

impl BoundChecks {
    pub fn all_hold(&self) -> bool {
        self.p_positive
            && self.p_diagonal_dominance
            && self.gamma_in_range
            && self.alpha_positive
            && self.beta_below_damping
            && self.margin > 1.0
            && self.transform_in_domain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PConstruction {
    Certified(GovernorCoefficients),
    Inconclusive { reason: &'static str },
}

impl PConstruction {
    pub fn coefficients(&self) -> Option<&GovernorCoefficients> {
        match self {
            PConstruction::Certified(c) => Some(c),
            PConstruction::Inconclusive { .. } => None,
        }
    }
}

/// Chooses a diagonal `P` for one generator.
///
/// For `0 < L < D` the maximizing point `z = sigma = 1/2`, `xi = D/(4 L^2)` is
/// used. For `L = 0`, `P = s diag(tau_g, 2 tau_b)` with `gamma = 3s/4` and
/// `s = max(1, 1/D)`, which gives `beta = 0` and `4 alpha D >= 8/3`.
pub fn construct_p(tau_g: f64, tau_b: f64, damping: f64, lipschitz: f64) -> Result<PConstruction> {
    if !(tau_g > 0.0 && tau_b > 0.0 && damping > 0.0) || !tau_g.is_finite() || !tau_b.is_finite() {
        return Err(Error::input(format!(
            "construct_p needs tau_g, tau_b, D > 0 (got {tau_g}, {tau_b}, {damping})"
        )));
    }
    if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
        return Err(Error::input(format!(
            "Lipschitz constant must be finite and >= 0, got {lipschitz}"
        )));
    }
    let turbine = Turbine { tau_g, tau_b };
    let coefficients = if lipschitz == 0.0 {
        let s = (1.0 / damping).max(1.0);
        GovernorCoefficients::from_p(turbine, 0.0, s * tau_g, 2.0 * s * tau_b, 0.75 * s)
    } else if lipschitz < damping {
        let (sigma, z) = (0.5, 0.5);
        let xi = damping / (4.0 * lipschitz * lipschitz);
        let gamma = xi / sigma;
        let p22 = 4.0 * tau_b * xi;
        let p11 = tau_g * gamma / z;
        GovernorCoefficients::from_p(turbine, lipschitz, p11, p22, gamma)
    } else {
        return Ok(PConstruction::Inconclusive {
            reason: "Lipschitz constant is not below the damping",
        });
    };
    if coefficients.check(turbine, damping).all_hold() {
        Ok(PConstruction::Certified(coefficients))
    } else {
        Ok(PConstruction::Inconclusive {
            reason: "coefficients fail the derivative-bound inequalities numerically",
        })
    }
}

/// Eigenvalues of `P A + A^T P` for the governor/turbine matrix
/// `A = [[-1/tau_g, 0], [1/tau_b, -1/tau_b]]`, ascending.
pub fn lyapunov_matrix_eigenvalues(turbine: Turbine, p11: f64, p22: f64) -> [f64; 2] {
    let a = Matrix2::new(
        -1.0 / turbine.tau_g,
        0.0,
        1.0 / turbine.tau_b,
        -1.0 / turbine.tau_b,
    );
    let p = Matrix2::new(p11, 0.0, 0.0, p22);
    let s = p * a + a.transpose() * p;
    let eig = s.symmetric_eigenvalues();
    let (x, y) = (eig[0], eig[1]);
    [x.min(y), x.max(y)]
}

/// Network energy `V_0` of `state` relative to the equilibrium `eq`.
pub fn energy_v0(model: &NetworkModel, state: &SystemState, eq: &SystemState) -> f64 {
    let kinetic: f64 = model
        .generators()
        .iter()
        .enumerate()
        .map(|(j, bus)| 0.5 * bus.inertia * (state.omega[j] - eq.omega[j]).powi(2))
        .sum();
    let potential: f64 = model
        .lines()
        .iter()
        .map(|l| {
            let now = state.theta[l.from] - state.theta[l.to];
            let star = eq.theta[l.from] - eq.theta[l.to];
            l.y * (star.cos() - now.cos() - star.sin() * (now - star))
        })
        .sum();
    kinetic + potential
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorCertificate {
    pub bus: usize,
    pub lipschitz: f64,
    /// The command sat exactly on a box edge at `omega*`; the unsaturated
    /// slope was used.
    pub at_saturation_boundary: bool,
    pub damping: f64,
    pub tau_g: f64,
    pub tau_b: f64,
    pub construction: PConstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineSecurity {
    pub from: usize,
    pub to: usize,
    pub angle: f64,
    pub secure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Certified,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub omega_star: f64,
    pub delta: f64,
    pub generators: Vec<GeneratorCertificate>,
    pub lines: Vec<LineSecurity>,
    pub verdict: Verdict,
}

impl StabilityCertificate {
    /// `V_total`, or `None` when some generator has no valid `P`.
    pub fn energy_total(
        &self,
        model: &NetworkModel,
        state: &SystemState,
        eq: &SystemState,
    ) -> Option<f64> {
        let mut total = energy_v0(model, state, eq);
        for (j, g) in self.generators.iter().enumerate() {
            let c = g.construction.coefficients()?;
            let da = state.valve[j] - eq.valve[j];
            let dp = state.power[j] - eq.power[j];
            total += 0.5 * (c.p11 * da * da + c.p22 * dp * dp);
        }
        Some(total)
    }

    pub fn all_lines_secure(&self) -> bool {
        self.lines.iter().all(|l| l.secure)
    }
}

/// Sufficient-condition stability check of a closed-loop equilibrium.
///
/// `Inconclusive` never means unstable.
pub fn certify(system: &ClosedLoop, eq: &SystemState, delta: f64) -> Result<StabilityCertificate> {
    let model = system.model();
    let omega_star = eq.omega.first().copied().unwrap_or(0.0);
    let mut generators = Vec::with_capacity(model.n_generators());
    for (j, bus) in model.generators().iter().enumerate() {
        let turbine = bus.turbine.expect("generator without turbine");
        let bound = system.laws()[j].lipschitz_constant(omega_star, delta)?;
        let construction = construct_p(turbine.tau_g, turbine.tau_b, bus.damping, bound.value)?;
        generators.push(GeneratorCertificate {
            bus: j,
            lipschitz: bound.value,
            at_saturation_boundary: bound.at_saturation_boundary,
            damping: bus.damping,
            tau_g: turbine.tau_g,
            tau_b: turbine.tau_b,
            construction,
        });
    }
    let lines: Vec<LineSecurity> = model
        .lines()
        .iter()
        .map(|l| {
            let angle = eq.theta[l.from] - eq.theta[l.to];
            LineSecurity {
                from: l.from,
                to: l.to,
                angle,
                secure: angle > -FRAC_PI_2 && angle < FRAC_PI_2,
            }
        })
        .collect();
    let certified = generators
        .iter()
        .all(|g| matches!(g.construction, PConstruction::Certified(_)))
        && lines.iter().all(|l| l.secure);
    Ok(StabilityCertificate {
        omega_star,
        delta,
        generators,
        lines,
        verdict: if certified {
            Verdict::Certified
        } else {
            Verdict::Inconclusive
        },
    })
}

/// Default radius for [`certify`], rad/s.
pub const DEFAULT_DELTA: f64 = DEFAULT_LIPSCHITZ_DELTA;

/// Samples random deviations with `|p~c| <= L |w~|` and returns the largest
/// excess of `dV_g/dt` over its bound (non-positive when the bound holds).
pub fn audit_derivative_bound<R: Rng>(
    coefficients: &GovernorCoefficients,
    turbine: Turbine,
    lipschitz: f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let valve_dev = rng.gen_range(-1.0..1.0);
        let power_dev = rng.gen_range(-1.0..1.0);
        let omega_dev = rng.gen_range(-1.0..1.0);
        let command_dev = lipschitz * omega_dev * rng.gen_range(-1.0..=1.0);
        let (derivative, bound) = coefficients.derivative_and_bound(
            turbine,
            valve_dev,
            power_dev,
            command_dev,
            omega_dev,
        );
        worst = worst.max(derivative - bound);
    }
    worst
}
