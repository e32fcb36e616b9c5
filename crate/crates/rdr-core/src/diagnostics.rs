//! Spectral diagnostics of the regression operator and the computable
//! least-squares-vs-robust gap bound.
//!
//! All quantities are empirical plug-ins built from the eigenvalues of the
//! scaled training Gram `(1/n) G`, which shares its nonzero spectrum with
//! the empirical second-level integral operator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol;

/// Eigenvalues of the scaled Gram `(1/n) G`, sorted nonincreasing, with
/// negatives inside the round-off tolerance clamped to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSummary {
    eigenvalues: Vec<f64>,
    n: usize,
}

impl SpectralSummary {
    /// Computes the spectrum of `(1/n) G` from an `n x n` Gram matrix.
    ///
    /// Errors if the matrix is not square, contains non-finite entries, has
    /// an eigenvalue below `-tol::PSD_REL_TOL` times the largest one, or if
    /// the eigenvalue sum drifts from `trace(G)/n` by more than `1e-8`
    /// relative.
    pub fn from_gram(gram: &DMatrix<f64>) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || gram.ncols() != n {
            return Err(Error::input(format!(
                "spectral summary needs a nonempty square matrix, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("Gram matrix entries must be finite"));
        }
        let nf = n as f64;
        let scaled = gram.map(|v| v / nf);
        let trace = scaled.diagonal().sum();
        let eigen = scaled.symmetric_eigen();
        let eigenvalues: Vec<f64> = eigen.eigenvalues.iter().cloned().collect();
        let sum: f64 = eigenvalues.iter().sum();
        if (sum - trace).abs() > 1e-8 * trace.abs().max(1.0) {
            return Err(Error::numerics(format!(
                "eigenvalue sum {sum} disagrees with trace {trace} beyond tolerance"
            )));
        }
        Self::from_eigenvalues(eigenvalues, n)
    }

    /// Wraps precomputed eigenvalues of `(1/n) G` for a sample of size `n`.
    ///
    /// Values in `[-tol::PSD_REL_TOL * max_eig, 0)` are clamped to zero;
    /// anything lower is an error. The result is sorted nonincreasing.
    pub fn from_eigenvalues(eigenvalues: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("sample count must be positive"));
        }
        if eigenvalues.is_empty() || eigenvalues.len() > n {
            return Err(Error::input(format!(
                "expected between 1 and {n} eigenvalues, got {}",
                eigenvalues.len()
            )));
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("eigenvalues must be finite"));
        }
        let max = eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let floor = -tol::PSD_REL_TOL * max.max(1e-300);
        let mut clamped = Vec::with_capacity(eigenvalues.len());
        for &v in &eigenvalues {
            if v < floor {
                return Err(Error::numerics(format!(
                    "eigenvalue {v:e} is negative beyond the positive semidefinite tolerance"
                )));
            }
            clamped.push(v.max(0.0));
        }
        clamped.sort_by(|a, b| b.total_cmp(a));
        Ok(SpectralSummary {
            eigenvalues: clamped,
            n,
        })
    }

    /// The clamped, nonincreasing eigenvalues.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The sample count `n`.
    pub fn n(&self) -> usize {
        self.n
    }
}

/// Empirical effective dimension at ridge level `lambda`:
///
/// ```text
/// N(lambda) = sum_i s_i / (s_i + lambda)
/// ```
///
/// over the eigenvalues `s_i` of `(1/n) G`. Monotone decreasing in `lambda`
/// and bounded by the rank.
///
/// # Example
///
/// ```
/// use rdr_core::diagnostics::{effective_dimension, SpectralSummary};
///
/// let s = SpectralSummary::from_eigenvalues(vec![1.0, 0.5], 2).unwrap();
/// let v = effective_dimension(&s, 0.5).unwrap();
/// assert!((v - 7.0 / 6.0).abs() < 1e-15);
/// ```
pub fn effective_dimension(summary: &SpectralSummary, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::input(format!(
            "ridge level must be finite and positive, got {lambda}"
        )));
    }
    Ok(summary
        .eigenvalues
        .iter()
        .map(|&s| s / (s + lambda))
        .sum())
}

/// Result of fitting the eigenvalue-decay rate `beta`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BetaFit {
    /// Fitted decay rate, clipped to `[1e-3, 1]`.
    pub beta_hat: f64,
    /// Fitted leading coefficient `c0` (exponential of the line intercept).
    pub c0_hat: f64,
    /// Unclipped slope of the log-log fit.
    pub raw_slope: f64,
    /// Root-mean-square residual of the line fit.
    pub residual: f64,
    /// Whether `beta_hat` differs from `raw_slope` due to clipping.
    pub clipped: bool,
}

/// Fits the capacity model `N(lambda) ~ c0 * lambda^(-beta)` by a
/// least-squares line through `(-log lambda, log N(lambda))`.
///
/// The grid must contain at least four positive levels spanning at least two
/// decades. The returned `beta_hat` is clipped to `[1e-3, 1]` with the raw
/// slope and clipping flag reported alongside.
pub fn fit_beta_rate(summary: &SpectralSummary, lambda_grid: &[f64]) -> Result<BetaFit> {
    if lambda_grid.len() < 4 {
        return Err(Error::input(format!(
            "decay-rate fit needs at least 4 ridge levels, got {}",
            lambda_grid.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for &l in lambda_grid {
        if !l.is_finite() || l <= 0.0 {
            return Err(Error::input(format!(
                "ridge levels must be finite and positive, got {l}"
            )));
        }
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if hi / lo < 100.0 {
        return Err(Error::input(format!(
            "ridge grid spans a factor of {:.3}, need at least 100 (two decades)",
            hi / lo
        )));
    }
    let mut x = Vec::with_capacity(lambda_grid.len());
    let mut y = Vec::with_capacity(lambda_grid.len());
    for &l in lambda_grid {
        let eff = effective_dimension(summary, l)?;
        if eff <= 0.0 {
            return Err(Error::numerics(
                "effective dimension is zero on the grid; decay rate undefined",
            ));
        }
        x.push(-l.ln());
        y.push(eff.ln());
    }
    let (raw_slope, intercept, residual) = line_fit(&x, &y)?;
    let beta_hat = raw_slope.clamp(1e-3, 1.0);
    Ok(BetaFit {
        beta_hat,
        c0_hat: intercept.exp(),
        raw_slope,
        residual,
        clipped: beta_hat != raw_slope,
    })
}

/// Least-squares line through `(x_i, y_i)`: returns
/// `(slope, intercept, rms_residual)`.
///
/// Errors on mismatched or short inputs and on degenerate `x` (zero
/// variance).
pub fn line_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "line fit inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::input("line fit needs at least 2 points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::input("line fit inputs must be finite"));
    }
    let n = x.len() as f64;
    let mean_x: f64 = x.iter().sum::<f64>() / n;
    let mean_y: f64 = y.iter().sum::<f64>() / n;
    let mut var = 0.0;
    let mut cov = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        var += (xi - mean_x) * (xi - mean_x);
        cov += (xi - mean_x) * (yi - mean_y);
    }
    if var == 0.0 {
        return Err(Error::input("line fit abscissae are all identical"));
    }
    let slope = cov / var;
    let intercept = mean_y - slope * mean_x;
    let mut sq = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let r = yi - (slope * xi + intercept);
        sq += r * r;
    }
    Ok((slope, intercept, (sq / n).sqrt()))
}

/// Root-mean-square distance between two regressors sampled on the same
/// held-out points:
///
/// ```text
/// dist = sqrt((1/n) * sum_i (f1_i - f2_i)^2)
/// ```
pub fn empirical_l2_distance(f1_vals: &[f64], f2_vals: &[f64]) -> Result<f64> {
    if f1_vals.len() != f2_vals.len() {
        return Err(Error::input(format!(
            "value vectors have lengths {} and {}",
            f1_vals.len(),
            f2_vals.len()
        )));
    }
    if f1_vals.is_empty() {
        return Err(Error::input("value vectors must be nonempty"));
    }
    let mut sq = 0.0;
    for (&a, &b) in f1_vals.iter().zip(f2_vals) {
        let d = a - b;
        sq += d * d;
    }
    Ok((sq / f1_vals.len() as f64).sqrt())
}

/// Sample-dependent operator quantities entering the gap bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AQuantities {
    /// `a_hat = (2 kappa / sqrt(n)) * (kappa / sqrt(n lambda) + sqrt(N(lambda)))`.
    pub a_hat: f64,
    /// `a_prime_hat = 1 / (n sqrt(lambda)) + sqrt(N(lambda)) / sqrt(n)`.
    pub a_prime_hat: f64,
    /// `b_hat = a_hat / sqrt(lambda) + 1`.
    pub b_hat: f64,
    /// The empirical effective dimension `N(lambda)` used above.
    pub effective_dimension: f64,
}

/// Computes the sample-dependent quantities feeding the gap bound from an
/// empirical spectrum, ridge level, kernel bound `kappa`, and sample count.
///
/// # Example
///
/// ```
/// use rdr_core::diagnostics::{a_quantities, SpectralSummary};
///
/// let s = SpectralSummary::from_eigenvalues(vec![0.05; 6], 6).unwrap();
/// let q = a_quantities(&s, 0.01, 1.0, 100).unwrap();
/// assert!((q.a_hat - 0.2 * (1.0 + 5.0f64.sqrt())).abs() < 1e-12);
/// ```
pub fn a_quantities(
    summary: &SpectralSummary,
    lambda: f64,
    kappa: f64,
    n: u64,
) -> Result<AQuantities> {
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::input(format!(
            "kernel bound must be finite and positive, got {kappa}"
        )));
    }
    if n == 0 {
        return Err(Error::input("sample count must be positive"));
    }
    let eff = effective_dimension(summary, lambda)?;
    let nf = n as f64;
    let a_hat = (2.0 * kappa / nf.sqrt()) * (kappa / (nf * lambda).sqrt() + eff.sqrt());
    let a_prime_hat = 1.0 / (nf * lambda.sqrt()) + eff.sqrt() / nf.sqrt();
    let b_hat = a_hat / lambda.sqrt() + 1.0;
    Ok(AQuantities {
        a_hat,
        a_prime_hat,
        b_hat,
        effective_dimension: eff,
    })
}

/// Inputs of the computable gap bound between the robust and least-squares
/// fits.
///
/// `p`, `c_p`, `c_v` are the certified window constants, `m_bound` the
/// response bound, `kappa` the second-level kernel bound, `alpha` and
/// `l_holder` the Hoelder certificate, `b_k` the base kernel bound, and
/// `a_hat` the sample quantity from [`a_quantities`]. `d` is the atom count
/// per bag, passed as a real so a large sentinel can probe the
/// infinite-sampling limit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapBoundInputs {
    pub p: f64,
    pub c_p: f64,
    pub c_v: f64,
    pub m_bound: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub l_holder: f64,
    pub b_k: f64,
    pub lambda: f64,
    pub d: f64,
    pub sigma: f64,
    pub a_hat: f64,
}

/// Evaluates the explicit high-probability bound on the distance between
/// the robust and least-squares regressors:
///
/// ```text
/// rhs = C * (lambda^-(p+1/2) + 1)
///         * (lambda^-3/2 * d^-(alpha/2) * b_hat^2 + lambda^-1/2 * b_hat)
///         / sigma^(2p)
/// ```
///
/// with `b_hat = a_hat / sqrt(lambda) + 1` and the constant
///
/// ```text
/// C = 2^(2p) c_p kappa * [kappa^(2p+1) (sqrt(C_V) M)^(2p+1) + M^(2p+1)]
///       * { sqrt(2) (2 + sqrt(pi))^(1/2) L 2^((alpha+2)/2) B_k^(alpha/2)
///           * (2 Gamma(3) + ln^2 2)
///         + sqrt(2) (2 Gamma(2) + ln 2) }
/// ```
///
/// where `Gamma(3) = 2` and `Gamma(2) = 1`. The bound decreases in both
/// `sigma` and `d`; for `p = 1` it scales exactly as `sigma^-2`.
pub fn gap_bound_rhs(inputs: &GapBoundInputs) -> Result<f64> {
    validate_gap_inputs(inputs)?;
    let GapBoundInputs {
        p,
        c_p,
        c_v,
        m_bound,
        kappa,
        alpha,
        l_holder,
        b_k,
        lambda,
        d,
        sigma,
        a_hat,
    } = *inputs;

    let two_p1 = 2.0 * p + 1.0;
    let ln2 = std::f64::consts::LN_2;
    let bracket = kappa.powf(two_p1) * (c_v.sqrt() * m_bound).powf(two_p1) + m_bound.powf(two_p1);
    let gamma3 = 2.0;
    let gamma2 = 1.0;
    let brace = 2.0_f64.sqrt()
        * (2.0 + std::f64::consts::PI.sqrt()).sqrt()
        * l_holder
        * 2.0_f64.powf((alpha + 2.0) / 2.0)
        * b_k.powf(alpha / 2.0)
        * (2.0 * gamma3 + ln2 * ln2)
        + 2.0_f64.sqrt() * (2.0 * gamma2 + ln2);
    let c_tilde = 2.0_f64.powf(2.0 * p) * c_p * kappa * bracket * brace;

    let b_hat = a_hat / lambda.sqrt() + 1.0;
    let shape = lambda.powf(-1.5) * d.powf(-alpha / 2.0) * b_hat * b_hat
        + lambda.powf(-0.5) * b_hat;
    Ok(c_tilde * (lambda.powf(-(p + 0.5)) + 1.0) * shape / sigma.powf(2.0 * p))
}

fn validate_gap_inputs(inputs: &GapBoundInputs) -> Result<()> {
    let checks = [
        ("p", inputs.p, true),
        ("c_p", inputs.c_p, false),
        ("c_v", inputs.c_v, true),
        ("m_bound", inputs.m_bound, true),
        ("kappa", inputs.kappa, true),
        ("alpha", inputs.alpha, true),
        ("l_holder", inputs.l_holder, true),
        ("b_k", inputs.b_k, true),
        ("lambda", inputs.lambda, true),
        ("d", inputs.d, true),
        ("sigma", inputs.sigma, true),
        ("a_hat", inputs.a_hat, false),
    ];
    for (name, value, strict) in checks {
        if !value.is_finite() || (strict && value <= 0.0) || (!strict && value < 0.0) {
            return Err(Error::input(format!(
                "gap bound input {name} must be finite and {}, got {value}",
                if strict { "positive" } else { "nonnegative" }
            )));
        }
    }
    if inputs.alpha > 1.0 {
        return Err(Error::input(format!(
            "gap bound input alpha must lie in (0, 1], got {}",
            inputs.alpha
        )));
    }
    if inputs.d < 1.0 {
        return Err(Error::input(format!(
            "gap bound input d must be at least 1, got {}",
            inputs.d
        )));
    }
    Ok(())
}
