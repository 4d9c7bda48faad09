//! Optimal frequency control (OFC) problem.
//!
//! ```text
//! minimize   sum_j c_j(p_j) + d_j^2 / (2 D_j)
//! subject to sum_j (p_j + offset_j - d_j) = 0,   p_lo_j <= p_j <= p_hi_j
//! ```
//!
//! Eliminating the box multipliers leaves `p_j = clip((c_j')^{-1}(-lambda))`
//! and `d_j = D_j lambda`, so the whole KKT system reduces to one strictly
//! decreasing scalar equation in `lambda`, solved here by bisection.
//! Buses with a fixed injection (`p_lo == p_hi`) enter the balance but not
//! the cost sum. `offset_j` carries uncontrolled injections such as load
//! steps.

use serde::{Deserialize, Serialize};

use crate::control::{ControlLaw, CostFunction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfcBus {
    pub law: ControlLaw,
    pub damping: f64,
    /// Constant injection added to the balance, per-unit.
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfcProblem {
    buses: Vec<OfcBus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Saturation {
    Lower,
    Interior,
    Upper,
    /// Uncontrollable bus with `p_lo == p_hi`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfcSolution {
    pub p_star: Vec<f64>,
    pub d_star: Vec<f64>,
    /// Optimal multiplier of the balance constraint; equals the equilibrium
    /// frequency deviation, rad/s.
    pub lambda_star: f64,
    pub saturation: Vec<Saturation>,
    pub objective: f64,
}

const BRACKET_START: f64 = 1.0;
const BRACKET_CAP: f64 = 1e6;
const RESIDUAL_TOL: f64 = 1e-12;
const WIDTH_TOL: f64 = 1e-13;

impl OfcProblem {
    pub fn new(buses: Vec<OfcBus>) -> Result<Self> {
        if buses.is_empty() {
            return Err(Error::input("OFC problem needs at least one bus"));
        }
        for (j, b) in buses.iter().enumerate() {
            if !(b.damping > 0.0) || !b.offset.is_finite() {
                return Err(Error::input(format!(
                    "bus {j}: damping must be > 0 and offset finite"
                )));
            }
        }
        Ok(OfcProblem { buses })
    }

    pub fn buses(&self) -> &[OfcBus] {
        &self.buses
    }

    /// `sum_j (p_j(lambda) + offset_j - D_j lambda)`; strictly decreasing.
    pub fn balance_residual(&self, lambda: f64) -> f64 {
        self.buses
            .iter()
            .map(|b| b.law.feedback(lambda) + b.offset - b.damping * lambda)
            .sum()
    }

    /// Objective value at `(p, d)`; fixed buses are excluded from the cost sum.
    pub fn objective(&self, p: &[f64], d: &[f64]) -> f64 {
        self.buses
            .iter()
            .zip(p.iter().zip(d))
            .map(|(b, (&p, &d))| {
                let cost = if b.law.is_constant() {
                    0.0
                } else {
                    b.law.cost().value(p)
                };
                cost + d * d / (2.0 * b.damping)
            })
            .sum()
    }

    /// Builds the primal solution implied by a multiplier value.
    pub fn solution_at(&self, lambda: f64) -> OfcSolution {
        let p_star: Vec<f64> = self.buses.iter().map(|b| b.law.feedback(lambda)).collect();
        let d_star: Vec<f64> = self.buses.iter().map(|b| b.damping * lambda).collect();
        let saturation = self
            .buses
            .iter()
            .map(|b| {
                let law = &b.law;
                if law.is_constant() {
                    return Saturation::Fixed;
                }
                let u = law.unclipped(lambda);
                if u <= law.lo() {
                    Saturation::Lower
                } else if u >= law.hi() {
                    Saturation::Upper
                } else {
                    Saturation::Interior
                }
            })
            .collect();
        let objective = self.objective(&p_star, &d_star);
        OfcSolution {
            p_star,
            d_star,
            lambda_star: lambda,
            saturation,
            objective,
        }
    }

    /// Solves the reduced KKT equation by bracketing and bisection.
    pub fn solve(&self) -> Result<OfcSolution> {
        let (mut lo, mut hi) = self.bracket()?;
        let lambda = loop {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= WIDTH_TOL || mid <= lo || mid >= hi {
                break mid;
            }
            let r = self.balance_residual(mid);
            if r.abs() <= RESIDUAL_TOL {
                break mid;
            }
            if r > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        };
        Ok(self.solution_at(lambda))
    }

    /// Finds `[lo, hi]` with `residual(lo) >= 0 >= residual(hi)`, doubling a
    /// symmetric bracket from `[-1, 1]`.
    fn bracket(&self) -> Result<(f64, f64)> {
        let mut half = BRACKET_START;
        loop {
            let (r_lo, r_hi) = (self.balance_residual(-half), self.balance_residual(half));
            if !r_lo.is_finite() || !r_hi.is_finite() {
                return Err(Error::OfcInfeasible("non-finite balance residual".into()));
            }
            if r_lo >= 0.0 && r_hi <= 0.0 {
                return Ok((-half, half));
            }
            if half >= BRACKET_CAP {
                return Err(Error::OfcInfeasible(format!(
                    "no sign change of the balance residual within |lambda| <= {BRACKET_CAP:e}"
                )));
            }
            half *= 2.0;
        }
    }

    /// Audits the full KKT system at `(p, d, lambda)`.
    ///
    /// Box multipliers are reconstructed from stationarity in `p` by sign:
    /// `mu_plus - mu_minus = -c'(p) - lambda`.
    pub fn kkt_check(&self, p: &[f64], d: &[f64], lambda: f64, tol: f64) -> Result<KktReport> {
        let n = self.buses.len();
        if p.len() != n || d.len() != n {
            return Err(Error::input(format!(
                "kkt_check expects {n} entries, got p: {}, d: {}",
                p.len(),
                d.len()
            )));
        }
        let mut stationarity_p: f64 = 0.0;
        let mut stationarity_d: f64 = 0.0;
        let mut box_violation: f64 = 0.0;
        let mut dual_violation: f64 = 0.0;
        let mut slackness: f64 = 0.0;
        let mut mu_plus = vec![0.0; n];
        let mut mu_minus = vec![0.0; n];

        for (j, b) in self.buses.iter().enumerate() {
            let law = &b.law;
            stationarity_d = stationarity_d.max((d[j] - lambda * b.damping).abs());
            box_violation = box_violation.max(law.lo() - p[j]).max(p[j] - law.hi());
            if law.is_constant() {
                continue;
            }
            let g = -law.cost().derivative(p[j]) - lambda;
            mu_plus[j] = g.max(0.0);
            mu_minus[j] = (-g).max(0.0);
            dual_violation = dual_violation.max(-mu_plus[j]).max(-mu_minus[j]);
            slackness = slackness
                .max((mu_plus[j] * (p[j] - law.hi())).abs())
                .max((mu_minus[j] * (law.lo() - p[j])).abs());

            // Part of the marginal-cost gap no active bound can absorb.
            let at_upper = p[j] >= law.hi() - tol;
            let at_lower = p[j] <= law.lo() + tol;
            let unabsorbed = match (at_lower, at_upper) {
                (true, true) => 0.0,
                (false, true) => (-g).max(0.0),
                (true, false) => g.max(0.0),
                (false, false) => g.abs(),
            };
            stationarity_p = stationarity_p.max(unabsorbed);
        }
        let balance: f64 = self
            .buses
            .iter()
            .zip(p.iter().zip(d))
            .map(|(b, (p, d))| p + b.offset - d)
            .sum();

        Ok(KktReport {
            tol,
            stationarity_p,
            stationarity_d,
            balance: balance.abs(),
            box_violation: box_violation.max(0.0),
            dual_violation: dual_violation.max(0.0),
            complementary_slackness: slackness,
            mu_plus,
            mu_minus,
        })
    }

    /// Grid scan of `|balance_residual|` over `bracket` followed by one
    /// golden-section pass around the best grid point. Independent of
    /// [`OfcProblem::solve`]; used to cross-check it.
    pub fn oracle_solve(&self, bracket: (f64, f64), step: f64) -> Result<OfcSolution> {
        let (lo, hi) = bracket;
        if !(step > 0.0) {
            return Err(Error::input(format!("oracle step must be > 0, got {step}")));
        }
        if !(lo <= hi) {
            return Err(Error::input(format!("empty oracle bracket [{lo}, {hi}]")));
        }
        let count = ((hi - lo) / step).floor() as usize;
        let mut best = (lo, self.balance_residual(lo).abs());
        for k in 1..=count {
            let lambda = lo + k as f64 * step;
            let r = self.balance_residual(lambda).abs();
            if r < best.1 {
                best = (lambda, r);
            }
        }
        let refined = golden_section(
            |l| self.balance_residual(l).abs(),
            (best.0 - step).max(lo),
            (best.0 + step).min(hi),
            60,
        );
        let lambda = if self.balance_residual(refined).abs() < best.1 {
            refined
        } else {
            best.0
        };
        Ok(self.solution_at(lambda))
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Per-condition KKT violations (max over buses) and the reconstructed
/// box multipliers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub tol: f64,
    pub stationarity_p: f64,
    pub stationarity_d: f64,
    pub balance: f64,
    pub box_violation: f64,
    pub dual_violation: f64,
    pub complementary_slackness: f64,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
}

impl KktReport {
    pub fn stationarity_p_ok(&self) -> bool {
        self.stationarity_p <= self.tol
    }

    pub fn stationarity_d_ok(&self) -> bool {
        self.stationarity_d <= self.tol
    }

    pub fn balance_ok(&self) -> bool {
        self.balance <= self.tol
    }

    pub fn box_ok(&self) -> bool {
        self.box_violation <= self.tol
    }

    pub fn dual_ok(&self) -> bool {
        self.dual_violation <= self.tol
    }

    pub fn slackness_ok(&self) -> bool {
        self.complementary_slackness <= self.tol
    }

    pub fn passed(&self) -> bool {
        self.stationarity_p_ok()
            && self.stationarity_d_ok()
            && self.balance_ok()
            && self.box_ok()
            && self.dual_ok()
            && self.slackness_ok()
    }
}
