//! Windowing loss families for robust regression.
//!
//! Each family is described by a window profile `V` acting on squared,
//! scale-normalized residuals. The working loss at scale `sigma` is
//!
//! ```text
//! l_sigma(u) = sigma^2 * V(u^2 / sigma^2)
//! ```
//!
//! Profiles are normalized so `V'(0+) = 1`, which makes `l_sigma(u) -> u^2`
//! as `sigma -> inf`: every family degrades gracefully to least squares.
//! Reweighting solvers use `V'` of the normalized squared residual as the
//! observation weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Certified constants of a windowing profile.
///
/// They bound how far the window deviates from plain least squares:
///
/// ```text
/// |V'(s) - 1| <= c_p * s^p      and      0 < V'(s) <= C_V
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    /// Deviation exponent `p`.
    pub p: f64,
    /// Deviation coefficient `c_p`.
    pub c_p: f64,
    /// Upper bound `C_V` on the window derivative.
    pub c_v: f64,
}

/// The supported windowing loss families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    /// `V(s) = s`: no windowing, plain squared error.
    LeastSquares,
    /// `V(s) = 2 (1 - exp(-s/2))`: exponentially saturating window.
    Welsch,
    /// `V(s) = 2 ln(1 + s/2)`: logarithmically growing window.
    Cauchy,
    /// `V(s) = 2 (sqrt(s) - ln(1 + sqrt(s)))`: linearly growing window.
    Fair,
}

/// A windowing loss: a profile `V` on normalized squared residuals together
/// with its certified constants.
///
/// # Example
///
/// ```
/// use rdr_core::loss::{LossFamily, WindowingLoss};
///
/// let welsch = WindowingLoss::new(LossFamily::Welsch);
/// let c = welsch.constants();
/// assert_eq!((c.p, c.c_p, c.c_v), (1.0, 0.5, 1.0));
/// assert!((welsch.v_prime(0.0).unwrap() - 1.0).abs() < 1e-15);
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowingLoss {
    family: LossFamily,
}

impl WindowingLoss {
    /// Wraps a loss family.
    pub fn new(family: LossFamily) -> Self {
        WindowingLoss { family }
    }

    /// The wrapped family.
    pub fn family(&self) -> LossFamily {
        self.family
    }

    /// Certified window constants `(p, c_p, C_V)` for this family.
    pub fn constants(&self) -> LossConstants {
        match self.family {
            LossFamily::LeastSquares => LossConstants {
                p: 1.0,
                c_p: 0.0,
                c_v: 1.0,
            },
            LossFamily::Welsch => LossConstants {
                p: 1.0,
                c_p: 0.5,
                c_v: 1.0,
            },
            LossFamily::Cauchy => LossConstants {
                p: 1.0,
                c_p: 0.5,
                c_v: 1.0,
            },
            LossFamily::Fair => LossConstants {
                p: 0.5,
                c_p: 1.0,
                c_v: 1.0,
            },
        }
    }

    /// Window profile `V(s)` for `s >= 0`.
    ///
    /// Saturating and logarithmic profiles are evaluated through `exp_m1`
    /// and `ln_1p` so small arguments keep full relative precision.
    pub fn v_value(&self, s: f64) -> Result<f64> {
        check_s(s)?;
        Ok(match self.family {
            LossFamily::LeastSquares => s,
            LossFamily::Welsch => -2.0 * (-s / 2.0).exp_m1(),
            LossFamily::Cauchy => 2.0 * (s / 2.0).ln_1p(),
            LossFamily::Fair => {
                let root = s.sqrt();
                2.0 * (root - root.ln_1p())
            }
        })
    }

    /// Window derivative `V'(s)` for `s >= 0`, the reweighting weight.
    ///
    /// Always strictly positive: the saturating family's derivative is
    /// floored at the smallest positive normal double, since the exact value
    /// underflows for very large `s` but must never reach zero.
    pub fn v_prime(&self, s: f64) -> Result<f64> {
        check_s(s)?;
        Ok(match self.family {
            LossFamily::LeastSquares => 1.0,
            LossFamily::Welsch => (-s / 2.0).exp().max(f64::MIN_POSITIVE),
            LossFamily::Cauchy => 1.0 / (1.0 + s / 2.0),
            LossFamily::Fair => 1.0 / (1.0 + s.sqrt()),
        })
    }

    /// Scaled loss `l_sigma(u) = sigma^2 * V(u^2 / sigma^2)`.
    ///
    /// The least-squares family returns `u^2` directly, so the scale cancels
    /// exactly instead of up to round-off. An infinite `sigma` selects the
    /// least-squares limit `u^2` for every family.
    pub fn loss_value(&self, u: f64, sigma: f64) -> Result<f64> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::input(format!(
                "loss scale must be positive, got {sigma}"
            )));
        }
        if !u.is_finite() {
            return Err(Error::input(format!("residual must be finite, got {u}")));
        }
        if self.family == LossFamily::LeastSquares || sigma == f64::INFINITY {
            return Ok(u * u);
        }
        let s = (u / sigma) * (u / sigma);
        Ok(sigma * sigma * self.v_value(s)?)
    }
}

fn check_s(s: f64) -> Result<()> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::input(format!(
            "window argument must be finite and nonnegative, got {s}"
        )));
    }
    Ok(())
}
