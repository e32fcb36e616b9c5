//! Seeded generation of two-stage regression tasks and the parameter
//! schedules used by rate studies.
//!
//! A task draws a parameter vector `theta` per bag from a meta
//! distribution, materializes the bag as `d` atoms around `theta`, and
//! labels it with a noisy, clamped evaluation of a known target function:
//!
//! ```text
//! theta_i ~ meta        x_{i,s} ~ base(theta_i),  s = 1..d
//! y_i = clamp(g(theta_i) + eps_i, -M, M)
//! ```
//!
//! Held-out bags carry noiseless clamped targets, so regression error
//! against the truth is measurable. Generation is bit-reproducible from the
//! task seed: anchors, training data, and test data each consume a
//! dedicated, independently seeded stream.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{BaseKernel, BaseKernelFamily, EmpiricalDistribution, SecondLevelKernel};

/// Distribution of the per-bag parameter vector `theta`, applied
/// coordinate-wise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaDist {
    /// Each coordinate uniform on `[lo, hi)`.
    UniformMeans { lo: f64, hi: f64 },
    /// Each coordinate normal with the given center and standard deviation.
    GaussianMeans { center: f64, sd: f64 },
}

/// Shape of a bag around its parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseFamily {
    /// Atoms normal around `theta` with the given per-coordinate spread.
    GaussianAtoms { spread: f64 },
    /// Atoms uniform on `theta +- spread` per coordinate.
    UniformAtoms { spread: f64 },
}

/// The target function `g` mapping a bag parameter to its response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetFn {
    /// `g(theta) = scale * mean(theta)`.
    LinearInMean { scale: f64 },
    /// `g(theta) = scale * sin(frequency * mean(theta))`.
    SineOfMean { frequency: f64, scale: f64 },
    /// A regressor built inside the second-level kernel space:
    ///
    /// ```text
    /// g(theta) = sum_j a_j * K(mu_point_j, mu_theta)
    /// ```
    ///
    /// where the `anchors` point masses sit at meta-drawn locations, the
    /// coefficients `a_j` are uniform on `+-coefficient_scale`, `mu_theta`
    /// is the population embedding of the bag at `theta`, and `K` is the
    /// given second-level kernel over embeddings under `base_kernel`.
    /// Requires a Gaussian `base_kernel` and Gaussian atoms, which make the
    /// population embedding inner products available in closed form.
    RkhsExpansion {
        anchors: usize,
        coefficient_scale: f64,
        base_kernel: BaseKernel,
        second_level: SecondLevelKernel,
    },
}

/// Observation noise applied to the target before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Additive normal noise; the response clamp enforces the bound.
    GaussianTrunc { sd: f64 },
    /// Additive Student-t noise with `df` degrees of freedom (heavy tails).
    StudentT { df: f64 },
    /// With probability `fraction`, the response is replaced by a random
    /// sign times `magnitude`; otherwise it is the noiseless target.
    OutlierMix { fraction: f64, magnitude: f64 },
}

/// Full description of a synthetic two-stage regression task.
///
/// # Example
///
/// ```
/// use rdr_core::synth::{
///     generate, BaseFamily, MetaDist, NoiseModel, TargetFn, TaskSpec,
/// };
///
/// let spec = TaskSpec {
///     base_dim: 1,
///     meta: MetaDist::UniformMeans { lo: -1.0, hi: 1.0 },
///     base: BaseFamily::GaussianAtoms { spread: 0.5 },
///     target: TargetFn::LinearInMean { scale: 0.5 },
///     noise: NoiseModel::GaussianTrunc { sd: 0.1 },
///     response_bound: 1.0,
///     seed: 7,
/// };
/// let sample = generate(&spec, 8, 16, 4).unwrap();
/// assert_eq!(sample.train.len(), 8);
/// assert_eq!(sample.train[0].len(), 16);
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Atom dimension `m`.
    pub base_dim: usize,
    /// Distribution of bag parameters.
    pub meta: MetaDist,
    /// Bag shape around its parameter.
    pub base: BaseFamily,
    /// Target function.
    pub target: TargetFn,
    /// Observation noise.
    pub noise: NoiseModel,
    /// Response bound `M`; every emitted response satisfies `|y| <= M`.
    pub response_bound: f64,
    /// Seed for all streams of this task.
    pub seed: u64,
}

/// One generated dataset: training bags with noisy responses, held-out bags
/// with noiseless targets, and the uniform atom count.
#[derive(Debug, Clone)]
pub struct TwoStageSample {
    /// Training bags.
    pub train: Vec<EmpiricalDistribution>,
    /// Noisy, clamped training responses.
    pub train_y: DVector<f64>,
    /// Held-out bags.
    pub test: Vec<EmpiricalDistribution>,
    /// Noiseless clamped targets `g(theta)` of the held-out bags.
    pub test_targets: DVector<f64>,
    /// Atoms per bag (uniform across bags).
    pub d: usize,
}

impl TaskSpec {
    /// Checks every parameter against its documented range.
    pub fn validate(&self) -> Result<()> {
        if self.base_dim == 0 {
            return Err(Error::input("atom dimension must be positive"));
        }
        if !self.response_bound.is_finite() || self.response_bound <= 0.0 {
            return Err(Error::input(format!(
                "response bound must be finite and positive, got {}",
                self.response_bound
            )));
        }
        match self.meta {
            MetaDist::UniformMeans { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return Err(Error::input(format!(
                        "uniform means need finite lo < hi, got [{lo}, {hi})"
                    )));
                }
            }
            MetaDist::GaussianMeans { center, sd } => {
                if !center.is_finite() || !sd.is_finite() || sd <= 0.0 {
                    return Err(Error::input(format!(
                        "gaussian means need a finite center and positive sd, got ({center}, {sd})"
                    )));
                }
            }
        }
        let spread = match self.base {
            BaseFamily::GaussianAtoms { spread } | BaseFamily::UniformAtoms { spread } => spread,
        };
        if !spread.is_finite() || spread <= 0.0 {
            return Err(Error::input(format!(
                "atom spread must be finite and positive, got {spread}"
            )));
        }
        match &self.target {
            TargetFn::LinearInMean { scale } => {
                if !scale.is_finite() {
                    return Err(Error::input("target scale must be finite"));
                }
            }
            TargetFn::SineOfMean { frequency, scale } => {
                if !frequency.is_finite() || !scale.is_finite() {
                    return Err(Error::input("target frequency and scale must be finite"));
                }
            }
            TargetFn::RkhsExpansion {
                anchors,
                coefficient_scale,
                base_kernel,
                second_level: _,
            } => {
                if *anchors == 0 {
                    return Err(Error::input("expansion needs at least one anchor"));
                }
                if !coefficient_scale.is_finite() || *coefficient_scale <= 0.0 {
                    return Err(Error::input(format!(
                        "coefficient scale must be finite and positive, got {coefficient_scale}"
                    )));
                }
                if base_kernel.family() != BaseKernelFamily::Gaussian {
                    return Err(Error::input(
                        "expansion targets need a Gaussian base kernel; population embedding \
                         inner products have no closed form otherwise",
                    ));
                }
                if !matches!(self.base, BaseFamily::GaussianAtoms { .. }) {
                    return Err(Error::input(
                        "expansion targets need Gaussian atoms; population embedding inner \
                         products have no closed form otherwise",
                    ));
                }
            }
        }
        match self.noise {
            NoiseModel::GaussianTrunc { sd } => {
                if !sd.is_finite() || sd < 0.0 {
                    return Err(Error::input(format!(
                        "noise sd must be finite and nonnegative, got {sd}"
                    )));
                }
            }
            NoiseModel::StudentT { df } => {
                if !df.is_finite() || df <= 0.0 {
                    return Err(Error::input(format!(
                        "degrees of freedom must be finite and positive, got {df}"
                    )));
                }
            }
            NoiseModel::OutlierMix {
                fraction,
                magnitude,
            } => {
                if !fraction.is_finite() || !(0.0..0.5).contains(&fraction) {
                    return Err(Error::input(format!(
                        "outlier fraction must lie in [0, 0.5), got {fraction}"
                    )));
                }
                if !magnitude.is_finite()
                    || magnitude <= 0.0
                    || magnitude > self.response_bound
                {
                    return Err(Error::input(format!(
                        "outlier magnitude must lie in (0, response bound], got {magnitude}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Evaluates the task's target function `g` at bag parameters.
///
/// For expansion targets the anchors and coefficients are drawn once from
/// the task seed's anchor stream, so two evaluators built from the same
/// spec agree bit for bit.
#[derive(Debug, Clone)]
pub struct TargetEvaluator {
    base_dim: usize,
    kind: EvaluatorKind,
}

#[derive(Debug, Clone)]
enum EvaluatorKind {
    Linear {
        scale: f64,
    },
    Sine {
        frequency: f64,
        scale: f64,
    },
    Expansion {
        anchors: Vec<Vec<f64>>,
        coefficients: Vec<f64>,
        // Population embedding geometry for Gaussian atoms under a Gaussian
        // base kernel with bandwidth g and atom spread s:
        //   <k(., xi), mu_theta>  = cross_coef * exp(-|xi - theta|^2 / (2 cross_var))
        //   <mu_theta, mu_theta>  = self_inner
        //   <k(., xi), k(., xi)>  = 1
        // with cross_var = g^2 + s^2, cross_coef = (g^2 / (g^2 + s^2))^(m/2),
        // self_inner = (g^2 / (g^2 + 2 s^2))^(m/2).
        cross_var: f64,
        cross_coef: f64,
        self_inner: f64,
        second_level: SecondLevelKernel,
    },
}

impl TargetEvaluator {
    /// Target value `g(theta)`.
    ///
    /// # Panics
    ///
    /// Panics if `theta` does not have the task's atom dimension.
    pub fn eval(&self, theta: &[f64]) -> f64 {
        assert_eq!(
            theta.len(),
            self.base_dim,
            "parameter vector must match the task's atom dimension"
        );
        let mean = theta.iter().sum::<f64>() / theta.len() as f64;
        match &self.kind {
            EvaluatorKind::Linear { scale } => scale * mean,
            EvaluatorKind::Sine { frequency, scale } => scale * (frequency * mean).sin(),
            EvaluatorKind::Expansion {
                anchors,
                coefficients,
                cross_var,
                cross_coef,
                self_inner,
                second_level,
            } => {
                let mut total = 0.0;
                for (anchor, a) in anchors.iter().zip(coefficients) {
                    let mut sq = 0.0;
                    for (x, t) in anchor.iter().zip(theta) {
                        let diff = x - t;
                        sq += diff * diff;
                    }
                    let cross = cross_coef * (-sq / (2.0 * cross_var)).exp();
                    let k = second_level
                        .eval_from_inners(cross, 1.0, *self_inner)
                        .expect("population embedding inner products are consistent");
                    total += a * k;
                }
                total
            }
        }
    }

    /// Anchor locations and coefficients for expansion targets.
    pub fn anchors(&self) -> Option<(&[Vec<f64>], &[f64])> {
        match &self.kind {
            EvaluatorKind::Expansion {
                anchors,
                coefficients,
                ..
            } => Some((anchors.as_slice(), coefficients.as_slice())),
            _ => None,
        }
    }
}

/// Stream indices carved out of the task seed.
const STREAM_ANCHORS: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

fn draw_theta(meta: &MetaDist, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| match meta {
            MetaDist::UniformMeans { lo, hi } => rng.random_range(*lo..*hi),
            MetaDist::GaussianMeans { center, sd } => center + sd * standard_normal(rng),
        })
        .collect()
}

fn draw_bag(
    base: &BaseFamily,
    theta: &[f64],
    d: usize,
    rng: &mut ChaCha8Rng,
) -> EmpiricalDistribution {
    let dim = theta.len();
    let mut flat = Vec::with_capacity(d * dim);
    for _ in 0..d {
        for &t in theta {
            let coord = match base {
                BaseFamily::GaussianAtoms { spread } => t + spread * standard_normal(rng),
                BaseFamily::UniformAtoms { spread } => t + rng.random_range(-spread..*spread),
            };
            flat.push(coord);
        }
    }
    EmpiricalDistribution::from_flat(flat, dim).expect("generated atoms are finite")
}

fn draw_response(noise: &NoiseModel, g: f64, bound: f64, rng: &mut ChaCha8Rng) -> f64 {
    let raw = match noise {
        NoiseModel::GaussianTrunc { sd } => g + sd * standard_normal(rng),
        NoiseModel::StudentT { df } => {
            let t = StudentT::new(*df).expect("degrees of freedom validated");
            g + t.sample(rng)
        }
        NoiseModel::OutlierMix {
            fraction,
            magnitude,
        } => {
            let u: f64 = rng.random();
            if u < *fraction {
                let s: f64 = rng.random();
                if s < 0.5 {
                    -magnitude
                } else {
                    *magnitude
                }
            } else {
                g
            }
        }
    };
    raw.clamp(-bound, bound)
}

/// Builds the target evaluator for a task, drawing expansion anchors from
/// the dedicated anchor stream of the task seed.
pub fn target_evaluator(spec: &TaskSpec) -> Result<TargetEvaluator> {
    spec.validate()?;
    let kind = match &spec.target {
        TargetFn::LinearInMean { scale } => EvaluatorKind::Linear { scale: *scale },
        TargetFn::SineOfMean { frequency, scale } => EvaluatorKind::Sine {
            frequency: *frequency,
            scale: *scale,
        },
        TargetFn::RkhsExpansion {
            anchors,
            coefficient_scale,
            base_kernel,
            second_level,
        } => {
            let spread = match spec.base {
                BaseFamily::GaussianAtoms { spread } => spread,
                BaseFamily::UniformAtoms { .. } => unreachable!("validated above"),
            };
            let mut rng = stream_rng(spec.seed, STREAM_ANCHORS);
            let locations: Vec<Vec<f64>> = (0..*anchors)
                .map(|_| draw_theta(&spec.meta, spec.base_dim, &mut rng))
                .collect();
            let coefficients: Vec<f64> = (0..*anchors)
                .map(|_| rng.random_range(-*coefficient_scale..*coefficient_scale))
                .collect();
            let g_sq = base_kernel.bandwidth() * base_kernel.bandwidth();
            let s_sq = spread * spread;
            let m_half = spec.base_dim as f64 / 2.0;
            EvaluatorKind::Expansion {
                anchors: locations,
                coefficients,
                cross_var: g_sq + s_sq,
                cross_coef: (g_sq / (g_sq + s_sq)).powf(m_half),
                self_inner: (g_sq / (g_sq + 2.0 * s_sq)).powf(m_half),
                second_level: *second_level,
            }
        }
    };
    Ok(TargetEvaluator {
        base_dim: spec.base_dim,
        kind,
    })
}

/// Generates a two-stage dataset: `n` training bags of `d` atoms with noisy
/// responses and `n_test` held-out bags with noiseless targets.
///
/// Deterministic for a fixed spec: anchors, training draws, and test draws
/// consume three independent streams of the task seed, so the same spec and
/// sizes reproduce bit-identical data.
pub fn generate(spec: &TaskSpec, n: usize, d: usize, n_test: usize) -> Result<TwoStageSample> {
    if n == 0 || d == 0 || n_test == 0 {
        return Err(Error::input(format!(
            "sample sizes must be positive, got n={n}, d={d}, n_test={n_test}"
        )));
    }
    let evaluator = target_evaluator(spec)?;

    let mut train_rng = stream_rng(spec.seed, STREAM_TRAIN);
    let mut train = Vec::with_capacity(n);
    let mut train_y = DVector::<f64>::zeros(n);
    for i in 0..n {
        let theta = draw_theta(&spec.meta, spec.base_dim, &mut train_rng);
        train.push(draw_bag(&spec.base, &theta, d, &mut train_rng));
        let g = evaluator.eval(&theta);
        train_y[i] = draw_response(&spec.noise, g, spec.response_bound, &mut train_rng);
    }

    let mut test_rng = stream_rng(spec.seed, STREAM_TEST);
    let mut test = Vec::with_capacity(n_test);
    let mut test_targets = DVector::<f64>::zeros(n_test);
    for t in 0..n_test {
        let theta = draw_theta(&spec.meta, spec.base_dim, &mut test_rng);
        test.push(draw_bag(&spec.base, &theta, d, &mut test_rng));
        test_targets[t] = evaluator
            .eval(&theta)
            .clamp(-spec.response_bound, spec.response_bound);
    }

    Ok(TwoStageSample {
        train,
        train_y,
        test,
        test_targets,
        d,
    })
}

/// Regime selector shared by the parameter schedules. The regularity label
/// `r` splits into three regimes with boundaries at `1/2` and `1`.
fn schedule_denominator(regime_r: f64, beta_hat: f64) -> f64 {
    if regime_r < 0.5 {
        1.0 + beta_hat
    } else if regime_r <= 1.0 {
        2.0 * regime_r + beta_hat
    } else {
        2.0 + beta_hat
    }
}

fn validate_schedule_inputs(regime_r: f64, beta_hat: f64, n: u64) -> Result<()> {
    if !regime_r.is_finite() || regime_r <= 0.0 {
        return Err(Error::input(format!(
            "regularity label must be finite and positive, got {regime_r}"
        )));
    }
    if !beta_hat.is_finite() || beta_hat <= 0.0 || beta_hat > 1.0 {
        return Err(Error::input(format!(
            "decay rate must lie in (0, 1], got {beta_hat}"
        )));
    }
    if n == 0 {
        return Err(Error::input("sample count must be positive"));
    }
    Ok(())
}

/// Ridge level and atom count schedule for sample size `n`:
///
/// ```text
/// r < 1/2:        lambda = n^(-1/(1+beta))       d = ceil(n^(2/(alpha(1+beta))))
/// 1/2 <= r <= 1:  lambda = n^(-1/(2r+beta))      d = ceil(n^((1+2r)/(alpha(2r+beta))))
/// r > 1:          lambda = n^(-1/(2+beta))       d = ceil(n^(3/(alpha(2+beta))))
/// ```
///
/// The ceiling is taken with a relative `1e-12` guard so that power-law
/// exponents landing exactly on integers are not bumped up by float noise.
///
/// # Example
///
/// ```
/// use rdr_core::synth::lambda_d_schedule;
///
/// let (lambda, d) = lambda_d_schedule(0.5, 1.0, 1.0, 100).unwrap();
/// assert!((lambda - 0.1).abs() < 1e-12);
/// assert_eq!(d, 100);
/// ```
pub fn lambda_d_schedule(
    regime_r: f64,
    beta_hat: f64,
    alpha: f64,
    n: u64,
) -> Result<(f64, usize)> {
    validate_schedule_inputs(regime_r, beta_hat, n)?;
    if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
        return Err(Error::input(format!(
            "Hoelder exponent must lie in (0, 1], got {alpha}"
        )));
    }
    let denom = schedule_denominator(regime_r, beta_hat);
    let d_numer = if regime_r < 0.5 {
        2.0
    } else if regime_r <= 1.0 {
        1.0 + 2.0 * regime_r
    } else {
        3.0
    };
    let nf = n as f64;
    let lambda = nf.powf(-1.0 / denom);
    let d_raw = nf.powf(d_numer / (alpha * denom));
    if !d_raw.is_finite() || d_raw > 1e15 {
        return Err(Error::input(format!(
            "scheduled atom count {d_raw:e} is too large to materialize"
        )));
    }
    let d = ((d_raw * (1.0 - 1e-12)).ceil() as usize).max(1);
    Ok((lambda, d))
}

/// Loss scale schedule for sample size `n`: the smallest scale the gap
/// analysis allows for the regime,
///
/// ```text
/// sigma = n^((p+1+r) / (2p * denom))
/// ```
///
/// with the same regime denominator as [`lambda_d_schedule`]. The exponent
/// is decreasing in the window constant `p`.
///
/// # Example
///
/// ```
/// use rdr_core::synth::sigma_schedule;
///
/// let sigma = sigma_schedule(0.5, 1.0, 1.0, 100).unwrap();
/// assert!((sigma - 100.0f64.powf(0.625)).abs() < 1e-12);
/// ```
pub fn sigma_schedule(regime_r: f64, beta_hat: f64, p: f64, n: u64) -> Result<f64> {
    validate_schedule_inputs(regime_r, beta_hat, n)?;
    if !p.is_finite() || p <= 0.0 {
        return Err(Error::input(format!(
            "window exponent must be finite and positive, got {p}"
        )));
    }
    let denom = schedule_denominator(regime_r, beta_hat);
    let exponent = (p + 1.0 + regime_r) / (2.0 * p * denom);
    Ok((n as f64).powf(exponent))
}
