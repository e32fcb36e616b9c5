//! End-to-end fit on a synthetic task: generate bags, assemble the
//! two-stage Gram, fit ridge and Welsch regressors, report test errors.

use std::sync::Arc;

use rdr_core::diagnostics::empirical_l2_distance;
use rdr_core::kernel::{
    cross_gram, second_level_gram, BaseKernel, EmbeddingGram, SecondLevelKernel,
};
use rdr_core::loss::{LossFamily, WindowingLoss};
use rdr_core::solver::{fit_ls, fit_rdr, predict, SolverOptions};
use rdr_core::synth::{generate, BaseFamily, MetaDist, NoiseModel, TargetFn, TaskSpec};

fn main() -> rdr_core::Result<()> {
    let task = TaskSpec {
        base_dim: 1,
        meta: MetaDist::UniformMeans { lo: -1.0, hi: 1.0 },
        base: BaseFamily::GaussianAtoms { spread: 0.5 },
        target: TargetFn::SineOfMean {
            frequency: 2.0,
            scale: 0.8,
        },
        noise: NoiseModel::OutlierMix {
            fraction: 0.15,
            magnitude: 1.0,
        },
        response_bound: 1.0,
        seed: 7,
    };
    let sample = generate(&task, 80, 40, 200)?;

    let base = BaseKernel::gaussian(1.0)?;
    let second = SecondLevelKernel::gaussian_on_embeddings(0.5)?;
    let embedding = EmbeddingGram::compute(&base, sample.train)?;
    let gram = Arc::new(second_level_gram(&second, &embedding)?);
    let cross = cross_gram(&second, &base, embedding.distributions(), &sample.test)?;

    let lambda = 0.01;
    let ridge = fit_ls(&gram, &sample.train_y, lambda)?;
    let loss = WindowingLoss::new(LossFamily::Welsch);
    let (robust, report) = fit_rdr(
        &gram,
        &sample.train_y,
        lambda,
        1.0,
        loss,
        &SolverOptions::default(),
    )?;

    let targets = sample.test_targets.as_slice();
    let err_ridge = empirical_l2_distance(predict(&ridge, &cross)?.as_slice(), targets)?;
    let err_robust = empirical_l2_distance(predict(&robust, &cross)?.as_slice(), targets)?;
    println!("ridge test error  {err_ridge:.4}");
    println!(
        "robust test error {err_robust:.4} after {} reweighting steps",
        report.iterations
    );
    Ok(())
}
