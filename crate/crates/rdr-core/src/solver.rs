//! Ridge and robust solvers in representer coordinates.
//!
//! Both estimators live in the span of the training kernel sections, so a
//! fit is a coefficient vector `c` against the training Gram `G`:
//!
//! ```text
//! least squares:  minimize (1/n) |G c - y|^2-terms + lambda c' G c
//!                 solved by (G + lambda n I) c = y
//!
//! robust:         minimize (1/n) sum_i l_sigma((G c - y)_i) + lambda c' G c
//! ```
//!
//! The robust objective is handled by half-quadratic reweighting: residual
//! weights `w_i = V'(r_i^2 / sigma^2)` freeze the window, the resulting
//! weighted ridge system is solved in the symmetric form
//! `(W^(1/2) G W^(1/2) + lambda n I) z = W^(1/2) y` with `c = W^(1/2) z`,
//! and the loop repeats from the least-squares solution. Window concavity
//! makes each surrogate a majorizer, so the objective trace descends.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::EmpiricalDistribution;
use crate::loss::{LossFamily, WindowingLoss};
use crate::tol;

/// Kernel bound `kappa = sup sqrt(K(mu, mu))`, which is one for both
/// supported second-level kernel families.
const KAPPA: f64 = 1.0;

/// Options controlling the reweighting iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative coefficient-change threshold that stops the iteration.
    pub tol: f64,
    /// Stationarity residual (reproducing-kernel norm units) at or below
    /// which a fit is declared converged.
    pub stat_tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            stat_tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// A fitted regressor in representer form: coefficients over the training
/// bags, the training Gram, and the loss configuration that produced it.
///
/// Least-squares fits carry `sigma = +inf` (the windowed loss degenerates to
/// squared error there), so every downstream check treats both estimators
/// uniformly.
#[derive(Debug, Clone)]
pub struct RepresenterModel {
    coefficients: DVector<f64>,
    train_gram: Arc<DMatrix<f64>>,
    lambda: f64,
    sigma: f64,
    loss: WindowingLoss,
    train_refs: Option<Arc<Vec<EmpiricalDistribution>>>,
}

/// Serializable snapshot of a fitted model.
///
/// `sigma` is `None` for the infinite least-squares sentinel. `gram_digest`
/// is the SHA-256 of the training Gram's row-major little-endian bytes, so
/// records can be matched to the exact matrix that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub lambda: f64,
    pub sigma: Option<f64>,
    pub loss_family: LossFamily,
    pub coefficients: Vec<f64>,
    pub gram_digest: String,
}

/// Iteration diagnostics of a robust fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Reweighting iterations performed (one per linear solve after the
    /// initialization).
    pub iterations: usize,
    /// Objective value at the initial point and after each iteration;
    /// non-increasing for the concave window families.
    pub objective_trace: Vec<f64>,
    /// First-order condition residual in reproducing-kernel norm at the
    /// final coefficients.
    pub stationarity_residual: f64,
    /// Whether `stationarity_residual <= stat_tol`.
    pub converged: bool,
    /// Reproducing-kernel norm of the fitted regressor.
    pub rkhs_norm: f64,
}

/// One side-by-side bound evaluation: observed quantity, certified bound,
/// and the comparison verdict.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

impl RepresenterModel {
    /// Assembles a model from raw parts.
    ///
    /// Validates shape agreement, `lambda > 0`, `sigma > 0` (infinite
    /// allowed as the least-squares sentinel), and finite coefficients.
    pub fn from_parts(
        coefficients: DVector<f64>,
        train_gram: Arc<DMatrix<f64>>,
        lambda: f64,
        sigma: f64,
        loss: WindowingLoss,
    ) -> Result<Self> {
        let n = train_gram.nrows();
        if n == 0 || train_gram.ncols() != n {
            return Err(Error::input(format!(
                "training Gram must be square and nonempty, got {}x{}",
                train_gram.nrows(),
                train_gram.ncols()
            )));
        }
        if coefficients.len() != n {
            return Err(Error::input(format!(
                "coefficient length {} does not match Gram size {n}",
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("coefficients must be finite"));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::input(format!(
                "ridge level must be finite and positive, got {lambda}"
            )));
        }
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::input(format!(
                "loss scale must be positive, got {sigma}"
            )));
        }
        Ok(RepresenterModel {
            coefficients,
            train_gram,
            lambda,
            sigma,
            loss,
            train_refs: None,
        })
    }

    /// Attaches the training distributions the Gram was built from.
    pub fn with_train_refs(mut self, refs: Arc<Vec<EmpiricalDistribution>>) -> Result<Self> {
        if refs.len() != self.coefficients.len() {
            return Err(Error::input(format!(
                "{} training distributions do not match {} coefficients",
                refs.len(),
                self.coefficients.len()
            )));
        }
        self.train_refs = Some(refs);
        Ok(self)
    }

    /// Representer coefficients.
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// The training Gram matrix.
    pub fn train_gram(&self) -> &Arc<DMatrix<f64>> {
        &self.train_gram
    }

    /// Ridge level.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Loss scale (`+inf` for least-squares fits).
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// The windowing loss.
    pub fn loss(&self) -> WindowingLoss {
        self.loss
    }

    /// Training distributions, when attached.
    pub fn train_refs(&self) -> Option<&[EmpiricalDistribution]> {
        self.train_refs.as_deref().map(Vec::as_slice)
    }

    /// Reproducing-kernel norm `sqrt(c' G c)` (clamped at zero against
    /// round-off).
    pub fn rkhs_norm(&self) -> f64 {
        let gc = self.train_gram.as_ref() * &self.coefficients;
        self.coefficients.dot(&gc).max(0.0).sqrt()
    }

    /// SHA-256 digest of the training Gram (row-major, little-endian).
    pub fn gram_digest(&self) -> String {
        let g = self.train_gram.as_ref();
        let mut hasher = Sha256::new();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                hasher.update(g[(i, j)].to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Serializable snapshot of this model.
    pub fn record(&self) -> ModelRecord {
        ModelRecord {
            lambda: self.lambda,
            sigma: self.sigma.is_finite().then_some(self.sigma),
            loss_family: self.loss.family(),
            coefficients: self.coefficients.iter().cloned().collect(),
            gram_digest: self.gram_digest(),
        }
    }
}

fn validate_fit_inputs(gram: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<()> {
    let n = gram.nrows();
    if n == 0 || gram.ncols() != n {
        return Err(Error::input(format!(
            "Gram must be square and nonempty, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if y.len() != n {
        return Err(Error::input(format!(
            "response length {} does not match Gram size {n}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("responses must be finite"));
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::input(format!(
            "ridge level must be finite and positive, got {lambda}"
        )));
    }
    for i in 0..n {
        let gii = gram[(i, i)];
        if !gii.is_finite() || gii < 0.0 {
            return Err(Error::input(format!(
                "Gram diagonal entry {i} is {gii}, must be finite and nonnegative"
            )));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let gij = gram[(i, j)];
            let gji = gram[(j, i)];
            if !gij.is_finite() || !gji.is_finite() {
                return Err(Error::input("Gram entries must be finite"));
            }
            if (gij - gji).abs() > 1e-12 * gij.abs().max(gji.abs()).max(1.0) {
                return Err(Error::input(format!(
                    "Gram is asymmetric at ({i}, {j}): {gij} vs {gji}"
                )));
            }
            // Cheap positive semidefiniteness screen: any PSD matrix obeys
            // the Cauchy-Schwarz relation on 2x2 minors.
            let cs = (gram[(i, i)] * gram[(j, j)]).sqrt();
            if gij.abs() > cs * (1.0 + 1e-8) + 1e-15 {
                return Err(Error::input(format!(
                    "Gram entry ({i}, {j}) = {gij} violates the Cauchy-Schwarz bound {cs}"
                )));
            }
        }
    }
    Ok(())
}

/// Solves the (optionally weighted) ridge system. With weights, the
/// symmetric form `(W^(1/2) G W^(1/2) + lambda n I) z = W^(1/2) y`,
/// `c = W^(1/2) z` keeps the matrix positive definite for Cholesky.
fn solve_weighted(
    gram: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    w_sqrt: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let n = gram.nrows();
    let nf = n as f64;
    let mut a = match w_sqrt {
        None => gram.clone(),
        Some(sw) => DMatrix::from_fn(n, n, |i, j| sw[i] * gram[(i, j)] * sw[j]),
    };
    for i in 0..n {
        a[(i, i)] += lambda * nf;
    }
    let rhs = match w_sqrt {
        None => y.clone(),
        Some(sw) => y.component_mul(sw),
    };
    let chol = Cholesky::new(a).ok_or_else(|| {
        Error::numerics("ridge system is not positive definite; factorization failed")
    })?;
    let z = chol.solve(&rhs);
    Ok(match w_sqrt {
        None => z,
        Some(sw) => z.component_mul(sw),
    })
}

/// Fits the least-squares regressor by solving the representer normal
/// equations `(G + lambda n I) c = y`.
///
/// The Gram is validated for symmetry and screened for blatant positive
/// semidefiniteness violations; a failed factorization is a numerical
/// error.
///
/// # Example
///
/// ```
/// use std::sync::Arc;
/// use nalgebra::{DMatrix, DVector};
/// use rdr_core::solver::fit_ls;
///
/// let gram = Arc::new(DMatrix::from_row_slice(1, 1, &[1.0]));
/// let y = DVector::from_column_slice(&[2.0]);
/// let model = fit_ls(&gram, &y, 0.5).unwrap();
/// assert!((model.coefficients()[0] - 4.0 / 3.0).abs() < 1e-15);
/// ```
pub fn fit_ls(gram: &Arc<DMatrix<f64>>, y: &DVector<f64>, lambda: f64) -> Result<RepresenterModel> {
    validate_fit_inputs(gram, y, lambda)?;
    let coefficients = solve_weighted(gram, y, lambda, None)?;
    Ok(RepresenterModel {
        coefficients,
        train_gram: Arc::clone(gram),
        lambda,
        sigma: f64::INFINITY,
        loss: WindowingLoss::new(LossFamily::LeastSquares),
        train_refs: None,
    })
}

/// Fits the robust regressor by half-quadratic reweighting from the
/// least-squares initialization.
///
/// Each iteration computes residuals `r = G c - y`, weights
/// `w_i = V'(r_i^2 / sigma^2)` (strictly positive by the window contract),
/// and solves the weighted ridge system; the loop stops when the relative
/// coefficient change drops to `opts.tol` or `opts.max_iter` is reached.
/// `converged` reports whether the first-order condition holds at the final
/// coefficients within `opts.stat_tol`; callers decide what to do with
/// non-converged fits.
pub fn fit_rdr(
    gram: &Arc<DMatrix<f64>>,
    y: &DVector<f64>,
    lambda: f64,
    sigma: f64,
    loss: WindowingLoss,
    opts: &SolverOptions,
) -> Result<(RepresenterModel, FitReport)> {
    validate_fit_inputs(gram, y, lambda)?;
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::input(format!(
            "loss scale must be positive, got {sigma}"
        )));
    }
    if !(opts.tol > 0.0) || !(opts.stat_tol > 0.0) {
        return Err(Error::input(
            "solver tolerances must be positive".to_string(),
        ));
    }
    if opts.max_iter == 0 {
        return Err(Error::input("max_iter must be positive".to_string()));
    }

    let n = gram.nrows();
    let g = gram.as_ref();
    let mut c = solve_weighted(g, y, lambda, None)?;
    let mut trace = vec![objective_value(g, y, &c, lambda, sigma, loss)?];
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        let r = g * &c - y;
        let mut sw = DVector::<f64>::zeros(n);
        for i in 0..n {
            let scaled = r[i] / sigma;
            let w = loss.v_prime(scaled * scaled)?;
            sw[i] = w.sqrt();
        }
        let c_next = solve_weighted(g, y, lambda, Some(&sw))?;
        trace.push(objective_value(g, y, &c_next, lambda, sigma, loss)?);
        let delta = (&c_next - &c).norm();
        let base = c.norm();
        let rel = if base > 0.0 { delta / base } else { delta };
        c = c_next;
        iterations = iter;
        if rel <= opts.tol {
            break;
        }
    }

    let model = RepresenterModel {
        coefficients: c,
        train_gram: Arc::clone(gram),
        lambda,
        sigma,
        loss,
        train_refs: None,
    };
    let stationarity = stationarity_residual(&model, y);
    let report = FitReport {
        iterations,
        objective_trace: trace,
        stationarity_residual: stationarity,
        converged: stationarity <= opts.stat_tol,
        rkhs_norm: model.rkhs_norm(),
    };
    Ok((model, report))
}

/// Evaluates the regularized objective at arbitrary coefficients:
///
/// ```text
/// F(c) = (1/n) * sum_i l_sigma((G c - y)_i) + lambda * c' G c
/// ```
pub fn objective_value(
    gram: &DMatrix<f64>,
    y: &DVector<f64>,
    coefficients: &DVector<f64>,
    lambda: f64,
    sigma: f64,
    loss: WindowingLoss,
) -> Result<f64> {
    let n = gram.nrows();
    if gram.ncols() != n || y.len() != n || coefficients.len() != n {
        return Err(Error::input(format!(
            "objective shapes disagree: Gram {}x{}, y {}, c {}",
            gram.nrows(),
            gram.ncols(),
            y.len(),
            coefficients.len()
        )));
    }
    let gc = gram * coefficients;
    let mut data = 0.0;
    for i in 0..n {
        data += loss.loss_value(gc[i] - y[i], sigma)?;
    }
    Ok(data / n as f64 + lambda * coefficients.dot(&gc))
}

/// Reproducing-kernel norm of the first-order condition residual at the
/// model's coefficients:
///
/// ```text
/// a = (1/n) * W r + lambda c,    r = G c - y,    W = diag(V'(r_i^2/sigma^2))
/// residual = sqrt(a' G a)
/// ```
///
/// Zero exactly at stationary points of the objective.
///
/// # Panics
///
/// Panics if `y` does not match the model's training size (the model must
/// have been fitted against these responses).
pub fn stationarity_residual(model: &RepresenterModel, y: &DVector<f64>) -> f64 {
    let g = model.train_gram.as_ref();
    let c = &model.coefficients;
    assert_eq!(
        y.len(),
        c.len(),
        "responses must match the model's training size"
    );
    let n = c.len();
    let nf = n as f64;
    let gc = g * c;
    let mut a = DVector::<f64>::zeros(n);
    for i in 0..n {
        let r = gc[i] - y[i];
        let scaled = r / model.sigma;
        let w = model
            .loss
            .v_prime(scaled * scaled)
            .expect("squared scaled residual is a valid window argument");
        a[i] = w * r / nf + model.lambda * c[i];
    }
    let ga = g * &a;
    a.dot(&ga).max(0.0).sqrt()
}

/// Evaluates predictions `cross * c` for a cross Gram with one row per
/// held-out point and one column per training bag.
pub fn predict(model: &RepresenterModel, cross: &DMatrix<f64>) -> Result<DVector<f64>> {
    if cross.ncols() != model.coefficients.len() {
        return Err(Error::input(format!(
            "cross Gram has {} columns, expected {}",
            cross.ncols(),
            model.coefficients.len()
        )));
    }
    Ok(cross * &model.coefficients)
}

/// Checks the a-priori reproducing-kernel norm bound
///
/// ```text
/// |f|_K <= sqrt(C_V) * M / sqrt(lambda)
/// ```
///
/// which holds for any fit trained on responses bounded by `m_bound`. The
/// comparison allows `tol::RKHS_BOUND_SLACK` of round-off.
///
/// # Panics
///
/// Panics if `m_bound` is not finite and nonnegative.
pub fn rkhs_norm_bound_check(model: &RepresenterModel, m_bound: f64) -> BoundCheck {
    assert!(
        m_bound.is_finite() && m_bound >= 0.0,
        "response bound must be finite and nonnegative"
    );
    let lhs = model.rkhs_norm();
    let rhs = model.loss.constants().c_v.sqrt() * m_bound / model.lambda.sqrt();
    BoundCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + tol::RKHS_BOUND_SLACK,
    }
}

/// Reproducing-kernel norm of the window deviation term
///
/// ```text
/// E = (1/n) * sum_i (w_i - 1) r_i K_i,    computed as sqrt(b' G b)
/// b = (1/n) (w - 1) . r
/// ```
///
/// against its certified bound
///
/// ```text
/// 2^(2p) c_p kappa sigma^(-2p) * [kappa^(2p+1) (sqrt(C_V) M)^(2p+1)
///                                   * lambda^-(p+1/2) + M^(2p+1)]
/// ```
///
/// with `M` taken as the largest response magnitude and `kappa = 1` for the
/// supported second-level kernels. The term vanishes identically for the
/// least-squares window and the bound scales by exactly `2^(2p)` when
/// `sigma` halves.
///
/// # Panics
///
/// Panics if `y` does not match the model's training size.
pub fn e_term_norm(model: &RepresenterModel, y: &DVector<f64>) -> BoundCheck {
    let g = model.train_gram.as_ref();
    let c = &model.coefficients;
    assert_eq!(
        y.len(),
        c.len(),
        "responses must match the model's training size"
    );
    let n = c.len();
    let nf = n as f64;
    let gc = g * c;
    let mut b = DVector::<f64>::zeros(n);
    let mut m_bound = 0.0_f64;
    for i in 0..n {
        let r = gc[i] - y[i];
        let scaled = r / model.sigma;
        let w = model
            .loss
            .v_prime(scaled * scaled)
            .expect("squared scaled residual is a valid window argument");
        b[i] = (w - 1.0) * r / nf;
        m_bound = m_bound.max(y[i].abs());
    }
    let gb = g * &b;
    let lhs = b.dot(&gb).max(0.0).sqrt();

    let k = model.loss.constants();
    let two_p1 = 2.0 * k.p + 1.0;
    let rhs = 2.0_f64.powf(2.0 * k.p) * k.c_p * KAPPA / model.sigma.powf(2.0 * k.p)
        * (KAPPA.powf(two_p1)
            * (k.c_v.sqrt() * m_bound).powf(two_p1)
            * model.lambda.powf(-(k.p + 0.5))
            + m_bound.powf(two_p1));
    BoundCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + tol::RKHS_BOUND_SLACK,
    }
}
