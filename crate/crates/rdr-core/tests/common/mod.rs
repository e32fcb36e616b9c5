#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rdr_core::kernel::{
    second_level_gram, BaseKernel, EmbeddingGram, EmpiricalDistribution, SecondLevelKernel,
};
use rdr_core::loss::WindowingLoss;
use rdr_core::solver::objective_value;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// A bag of `n_atoms` atoms in `dim` dimensions, centered at a random point
/// in [-1, 1]^dim with spread 0.6.
pub fn random_distribution(rng: &mut ChaCha8Rng, n_atoms: usize, dim: usize) -> EmpiricalDistribution {
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

/// Brute-force embedding inner product straight from the definition.
pub fn brute_inner(
    kernel: &BaseKernel,
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
) -> f64 {
    let mut total = 0.0;
    for s in 0..a.len() {
        for t in 0..b.len() {
            total += kernel.eval(a.atom(s), b.atom(t)).unwrap();
        }
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// A regression Gram over random bags, for solver and diagnostics tests.
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
/// Validated against central finite differences in the solver tests before
/// the oracle relies on it.
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
    best = best.min(descend(
        gram,
        y,
        DVector::zeros(n),
        lambda,
        sigma,
        loss,
    ));
    let scale = c_ls.amax().max(0.5) * 2.0;
    let mut r = rng(seed);
    for _ in 0..18 {
        let start = DVector::from_fn(n, |_, _| scale * normal(&mut r));
        best = best.min(descend(gram, y, start, lambda, sigma, loss));
    }
    best
}
