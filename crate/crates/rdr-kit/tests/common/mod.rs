#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rdr_core::kernel::{
    second_level_gram, BaseKernel, EmbeddingGram, EmpiricalDistribution, SecondLevelKernel,
};
use rdr_core::loss::{LossFamily, WindowingLoss};
use rdr_core::solver::objective_value;
use rdr_core::synth::{BaseFamily, MetaDist, NoiseModel, TargetFn, TaskSpec};

use rdr_kit::config::{
    DPolicy, ExperimentConfig, LambdaPolicy, PilotConfig, SigmaPolicy, SolverConfig,
};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rdr-kit")
}

/// Writes `cfg` as JSON into `dir` and returns the file path.
pub fn write_config(dir: &std::path::Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// The shared synthetic task: 1-D bags around uniform means with a bounded
/// sine response.
pub fn sine_task(noise: NoiseModel) -> TaskSpec {
    TaskSpec {
        base_dim: 1,
        meta: MetaDist::UniformMeans { lo: -1.0, hi: 1.0 },
        base: BaseFamily::GaussianAtoms { spread: 0.5 },
        target: TargetFn::SineOfMean {
            frequency: 2.0,
            scale: 0.8,
        },
        noise,
        response_bound: 1.0,
        seed: 0,
    }
}

/// Gap study configuration: fixed n=100, d=50, ridge 0.1, Welsch window,
/// sweeping the given loss scales.
pub fn gap_config(sigma_grid: Vec<f64>, replicates: usize, n_test: usize) -> ExperimentConfig {
    ExperimentConfig {
        task: sine_task(NoiseModel::GaussianTrunc { sd: 0.3 }),
        base_kernel: BaseKernel::gaussian(1.0).unwrap(),
        second_level: SecondLevelKernel::gaussian_on_embeddings(0.5).unwrap(),
        loss: LossFamily::Welsch,
        sigma: SigmaPolicy::Sweep { grid: sigma_grid },
        lambda: LambdaPolicy::Fixed { value: 0.1 },
        d: DPolicy::Fixed { value: 50 },
        n_grid: vec![100],
        n_test,
        replicates,
        solver: SolverConfig::default(),
        regime_r: None,
        pilot: None,
        output_dir: None,
        master_seed: 11,
    }
}

/// Robustness study configuration: one-fifth of the responses replaced by
/// unit-magnitude outliers, Welsch window at scale 1 against the ridge fit.
pub fn robustness_config(replicates: usize, n_test: usize) -> ExperimentConfig {
    ExperimentConfig {
        task: sine_task(NoiseModel::OutlierMix {
            fraction: 0.2,
            magnitude: 1.0,
        }),
        base_kernel: BaseKernel::gaussian(1.0).unwrap(),
        second_level: SecondLevelKernel::gaussian_on_embeddings(0.5).unwrap(),
        loss: LossFamily::Welsch,
        sigma: SigmaPolicy::Fixed { value: 1.0 },
        lambda: LambdaPolicy::Fixed { value: 0.01 },
        d: DPolicy::Fixed { value: 50 },
        n_grid: vec![100],
        n_test,
        replicates,
        solver: SolverConfig::default(),
        regime_r: None,
        pilot: None,
        output_dir: None,
        master_seed: 21,
    }
}

/// Rates study configuration: all-schedule policies at nominal regime 1/2
/// with a pilot capacity fit. The Laplacian base kernel keeps large
/// scheduled atom counts cheap in one dimension.
pub fn rates_config(
    n_grid: Vec<u64>,
    replicates: usize,
    n_test: usize,
    pilot_d: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        task: sine_task(NoiseModel::GaussianTrunc { sd: 0.25 }),
        base_kernel: BaseKernel::laplacian(1.0).unwrap(),
        second_level: SecondLevelKernel::gaussian_on_embeddings(0.5).unwrap(),
        loss: LossFamily::Welsch,
        sigma: SigmaPolicy::Schedule,
        lambda: LambdaPolicy::Schedule,
        d: DPolicy::Schedule,
        n_grid,
        n_test,
        replicates,
        solver: SolverConfig::default(),
        regime_r: Some(0.5),
        pilot: Some(PilotConfig {
            d: pilot_d,
            lambda_grid: logspace(1e-3, 1.0, 7),
        }),
        output_dir: None,
        master_seed: 1,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// A bag of `n_atoms` atoms in `dim` dimensions, centered at a random point
/// in [-1, 1]^dim with spread 0.6.
pub fn random_distribution(
    rng: &mut ChaCha8Rng,
    n_atoms: usize,
    dim: usize,
) -> EmpiricalDistribution {
    let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let atoms: Vec<Vec<f64>> = (0..n_atoms)
        .map(|_| center.iter().map(|c| c + 0.6 * normal(rng)).collect())
        .collect();
    EmpiricalDistribution::new(atoms).unwrap()
}

pub fn random_distributions(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_atoms: usize,
    dim: usize,
) -> Vec<EmpiricalDistribution> {
    (0..n)
        .map(|_| {
            let atoms = rng.random_range(1..=max_atoms);
            random_distribution(rng, atoms, dim)
        })
        .collect()
}

/// A regression Gram over random bags.
pub fn random_gram(
    rng: &mut ChaCha8Rng,
    n: usize,
    base: &BaseKernel,
    second: &SecondLevelKernel,
) -> Arc<DMatrix<f64>> {
    let dists = random_distributions(rng, n, 4, 1);
    let embedding = EmbeddingGram::compute(base, dists).unwrap();
    Arc::new(second_level_gram(second, &embedding).unwrap())
}

pub fn random_responses(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Analytic objective gradient used by the descent oracle:
///
///   grad F(c) = 2 G ((1/n) W r + lambda c),  r = G c - y, W = diag(V'(r^2/s^2))
///
/// The same formula is certified against finite differences in the core
/// solver tests.
pub fn objective_gradient(
    gram: &DMatrix<f64>,
    y: &DVector<f64>,
    c: &DVector<f64>,
    lambda: f64,
    sigma: f64,
    loss: WindowingLoss,
) -> DVector<f64> {
    let n = gram.nrows();
    let nf = n as f64;
    let gc = gram * c;
    let mut a = DVector::<f64>::zeros(n);
    for i in 0..n {
        let r = gc[i] - y[i];
        let w = loss.v_prime((r / sigma) * (r / sigma)).unwrap();
        a[i] = w * r / nf + lambda * c[i];
    }
    2.0 * (gram * a)
}

/// Gradient descent with Armijo backtracking from one starting point.
fn descend(
    gram: &DMatrix<f64>,
    y: &DVector<f64>,
    start: DVector<f64>,
    lambda: f64,
    sigma: f64,
    loss: WindowingLoss,
) -> f64 {
    let mut c = start;
    let mut obj = objective_value(gram, y, &c, lambda, sigma, loss).unwrap();
    for _ in 0..4000 {
        let grad = objective_gradient(gram, y, &c, lambda, sigma, loss);
        let gnorm_sq = grad.dot(&grad);
        if gnorm_sq.sqrt() <= 1e-12 {
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &c - step * &grad;
            let cand_obj = objective_value(gram, y, &cand, lambda, sigma, loss).unwrap();
            if cand_obj <= obj - 1e-4 * step * gnorm_sq {
                c = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    obj
}

/// Multi-start descent oracle: the best objective over the least-squares
/// start, the zero start, and 18 random starts.
pub fn multistart_oracle(
    gram: &DMatrix<f64>,
    y: &DVector<f64>,
    c_ls: &DVector<f64>,
    lambda: f64,
    sigma: f64,
    loss: WindowingLoss,
    seed: u64,
) -> f64 {
    let n = gram.nrows();
    let mut best = descend(gram, y, c_ls.clone(), lambda, sigma, loss);
    best = best.min(descend(gram, y, DVector::zeros(n), lambda, sigma, loss));
    let scale = c_ls.amax().max(0.5) * 2.0;
    let mut r = rng(seed);
    for _ in 0..18 {
        let start = DVector::from_fn(n, |_, _| scale * normal(&mut r));
        best = best.min(descend(gram, y, start, lambda, sigma, loss));
    }
    best
}

/// Keeps only the checked loss family variants used in batteries.
pub fn robust_families() -> [LossFamily; 3] {
    [LossFamily::Welsch, LossFamily::Cauchy, LossFamily::Fair]
}
