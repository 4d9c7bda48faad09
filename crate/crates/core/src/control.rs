//! Cost functions and the decentralized frequency feedback law.
//!
//! Every controllable generator and load applies the same rule to its own
//! frequency deviation: the inverse marginal cost at `-omega`, clipped to the
//! bus's power box. With a quadratic cost this is ordinary droop control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returns `max(min(x, hi), lo)`.
pub fn clip(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::input(format!("clip bounds inverted: {lo} > {hi}")));
    }
    Ok(x.min(hi).max(lo))
}

/// A strictly convex, twice differentiable cost with an analytic inverse
/// marginal cost.
pub trait CostFunction {
    fn value(&self, p: f64) -> f64;
    fn derivative(&self, p: f64) -> f64;
    fn second_derivative(&self, p: f64) -> f64;
    /// Inverse of [`CostFunction::derivative`].
    fn inverse_derivative(&self, y: f64) -> f64;
}

/// `c(p) = (R/2)(p - p_set)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub r: f64,
    pub p_set: f64,
}

impl CostFunction for QuadraticCost {
    fn value(&self, p: f64) -> f64 {
        0.5 * self.r * (p - self.p_set).powi(2)
    }

    fn derivative(&self, p: f64) -> f64 {
        self.r * (p - self.p_set)
    }

    fn second_derivative(&self, _p: f64) -> f64 {
        self.r
    }

    fn inverse_derivative(&self, y: f64) -> f64 {
        self.p_set + y / self.r
    }
}

/// Cost whose marginal is a cubic in the deviation `x = p - p_ref`:
/// `c'(p) = a x + b x^3`, so `c(p) = a x^2 / 2 + b x^4 / 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicMarginalCost {
    pub a: f64,
    pub b: f64,
    pub p_ref: f64,
}

impl CostFunction for CubicMarginalCost {
    fn value(&self, p: f64) -> f64 {
        let x = p - self.p_ref;
        0.5 * self.a * x * x + 0.25 * self.b * x.powi(4)
    }

    fn derivative(&self, p: f64) -> f64 {
        let x = p - self.p_ref;
        self.a * x + self.b * x.powi(3)
    }

    fn second_derivative(&self, p: f64) -> f64 {
        let x = p - self.p_ref;
        self.a + 3.0 * self.b * x * x
    }

    fn inverse_derivative(&self, y: f64) -> f64 {
        if self.b == 0.0 {
            return self.p_ref + y / self.a;
        }
        // Real root of x^3 + s x - y/b = 0 with s = a/b > 0, hyperbolic form.
        let s = self.a / self.b;
        let q = -y / self.b;
        let k = 2.0 * (s / 3.0).sqrt();
        let arg = (1.5 * q / s) * (3.0 / s).sqrt();
        let x = -k * (arg.asinh() / 3.0).sinh();
        // One Newton polish removes the residual rounding of the closed form.
        let x = x - (self.a * x + self.b * x.powi(3) - y) / (self.a + 3.0 * self.b * x * x);
        self.p_ref + x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cost {
    Quadratic(QuadraticCost),
    CubicMarginal(CubicMarginalCost),
}

impl Cost {
    pub fn quadratic(r: f64, p_set: f64) -> Self {
        Cost::Quadratic(QuadraticCost { r, p_set })
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Cost::Quadratic(q) => q.r > 0.0 && q.r.is_finite() && q.p_set.is_finite(),
            Cost::CubicMarginal(c) => {
                c.a > 0.0 && c.b >= 0.0 && c.a.is_finite() && c.b.is_finite() && c.p_ref.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!(
                "cost is not strictly convex: {self:?}"
            )))
        }
    }
}

impl CostFunction for Cost {
    fn value(&self, p: f64) -> f64 {
        match self {
            Cost::Quadratic(c) => c.value(p),
            Cost::CubicMarginal(c) => c.value(p),
        }
    }

    fn derivative(&self, p: f64) -> f64 {
        match self {
            Cost::Quadratic(c) => c.derivative(p),
            Cost::CubicMarginal(c) => c.derivative(p),
        }
    }

    fn second_derivative(&self, p: f64) -> f64 {
        match self {
            Cost::Quadratic(c) => c.second_derivative(p),
            Cost::CubicMarginal(c) => c.second_derivative(p),
        }
    }

    fn inverse_derivative(&self, y: f64) -> f64 {
        match self {
            Cost::Quadratic(c) => c.inverse_derivative(y),
            Cost::CubicMarginal(c) => c.inverse_derivative(y),
        }
    }
}

/// Saturated inverse-marginal-cost feedback on one bus.
///
/// A law with `lo == hi` is a constant, uncontrollable injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLaw {
    cost: Cost,
    lo: f64,
    hi: f64,
}

/// Slope bound of a feedback law around an operating frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    pub value: f64,
    /// The unclipped command sits on a box edge at the operating point, so
    /// the unsaturated slope was reported.
    pub at_saturation_boundary: bool,
}

/// Default half-width of the neighborhood used for Lipschitz bounds, rad/s.
pub const DEFAULT_LIPSCHITZ_DELTA: f64 = 0.01;

const SLOPE_SAMPLES: usize = 2001;
const SLOPE_SAFETY: f64 = 1.01;

impl ControlLaw {
    pub fn new(cost: Cost, lo: f64, hi: f64) -> Result<Self> {
        cost.validate()?;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::input(format!("invalid control box [{lo}, {hi}]")));
        }
        Ok(ControlLaw { cost, lo, hi })
    }

    /// Uncontrollable injection fixed at `p`.
    pub fn constant(p: f64) -> Self {
        ControlLaw {
            cost: Cost::quadratic(1.0, p),
            lo: p,
            hi: p,
        }
    }

    pub fn cost(&self) -> &Cost {
        &self.cost
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_constant(&self) -> bool {
        self.lo == self.hi
    }

    /// Command before clipping, `(c')^{-1}(-omega)`.
    pub fn unclipped(&self, omega: f64) -> f64 {
        self.cost.inverse_derivative(-omega)
    }

    /// Clipped command for local frequency deviation `omega`.
    pub fn feedback(&self, omega: f64) -> f64 {
        if self.is_constant() {
            return self.lo;
        }
        self.unclipped(omega).min(self.hi).max(self.lo)
    }

    /// Derivative of [`ControlLaw::feedback`] with respect to `omega`
    /// (zero where saturated).
    pub fn feedback_slope(&self, omega: f64) -> f64 {
        if self.is_constant() {
            return 0.0;
        }
        let u = self.unclipped(omega);
        if u <= self.lo || u >= self.hi {
            0.0
        } else {
            -1.0 / self.cost.second_derivative(u)
        }
    }

    /// Upper bound on `|feedback(w) - feedback(w')| / |w - w'|` for
    /// `w, w'` within `delta` of `omega_star`.
    pub fn lipschitz_constant(&self, omega_star: f64, delta: f64) -> Result<LipschitzBound> {
        if !(delta > 0.0) {
            return Err(Error::input(format!(
                "Lipschitz radius must be > 0, got {delta}"
            )));
        }
        if self.is_constant() {
            return Ok(LipschitzBound {
                value: 0.0,
                at_saturation_boundary: false,
            });
        }
        let u_star = self.unclipped(omega_star);
        let scale = 1.0 + self.lo.abs().max(self.hi.abs());
        let at_saturation_boundary =
            (u_star - self.lo).abs() <= 1e-12 * scale || (u_star - self.hi).abs() <= 1e-12 * scale;

        let value = match self.cost {
            Cost::Quadratic(q) => {
                // The unclipped command is decreasing in omega.
                let u_min = self.unclipped(omega_star + delta);
                let u_max = self.unclipped(omega_star - delta);
                if u_max < self.lo || u_min > self.hi {
                    0.0
                } else {
                    1.0 / q.r
                }
            }
            Cost::CubicMarginal(_) => {
                let h = 2.0 * delta / (SLOPE_SAMPLES - 1) as f64;
                let mut prev = self.feedback(omega_star - delta);
                let mut sup: f64 = 0.0;
                for i in 1..SLOPE_SAMPLES {
                    let w = omega_star - delta + i as f64 * h;
                    let cur = self.feedback(w);
                    sup = sup.max((cur - prev).abs() / h);
                    prev = cur;
                }
                sup * SLOPE_SAFETY
            }
        };
        Ok(LipschitzBound {
            value,
            at_saturation_boundary,
        })
    }
}
