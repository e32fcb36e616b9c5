//! Acceptance gate: each test checks one release criterion end to end at
//! its stated tolerance and prints a `criterion NN PASS` line (visible with
//! `--nocapture`). The four reference studies run once each and are shared
//! across criteria through lazy statics.

mod common;

use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;

use rdr_core::kernel::{
    embedding_distance_sq, BaseKernel, EmbeddingGram, SecondLevelKernel,
};
use rdr_core::loss::{LossFamily, WindowingLoss};
use rdr_core::solver::{
    e_term_norm, fit_ls, fit_rdr, objective_value, rkhs_norm_bound_check, SolverOptions,
};
use rdr_core::diagnostics::SpectralSummary;
use rdr_core::kernel::second_level_gram;

use rdr_kit::config::ExperimentConfig;
use rdr_kit::study::{run_study, StudyKind, StudyOutcome};

use common::{
    bin, gap_config, multistart_oracle, random_distributions, random_gram, random_responses,
    rates_config, rng, robust_families, robustness_config, write_config,
};

struct Timed {
    outcome: StudyOutcome,
    elapsed: Duration,
}

fn run_timed(kind: StudyKind, cfg: &ExperimentConfig) -> Timed {
    let start = Instant::now();
    let outcome = run_study(kind, cfg, cfg.master_seed, 1).unwrap();
    Timed {
        outcome,
        elapsed: start.elapsed(),
    }
}

/// Criterion 6/7 reference study: Welsch window, n=100, d=50, ridge 0.1,
/// moderate loss scales, 20 replicates.
fn gap_main() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| {
        run_timed(
            StudyKind::Gap,
            &gap_config(vec![5.0, 10.0, 20.0, 40.0, 80.0], 20, 500),
        )
    })
}

/// The same setup swept over large loss scales up to 1e6.
fn gap_high() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| {
        run_timed(
            StudyKind::Gap,
            &gap_config(vec![1e4, 1e5, 1e6], 20, 500),
        )
    })
}

/// Criterion 8 reference study: schedule-driven rates over n in
/// {32,...,256}, 30 replicates.
fn rates() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| {
        run_timed(
            StudyKind::Rates,
            &rates_config(vec![32, 64, 128, 256], 30, 100, 256),
        )
    })
}

/// Criterion 9 reference study: 20% unit outliers, Welsch scale 1 versus
/// the ridge fit, 30 replicates.
fn robust() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| run_timed(StudyKind::Robustness, &robustness_config(30, 500)))
}

fn all_reference_studies() -> [(&'static str, &'static Timed); 4] {
    [
        ("gap", gap_main()),
        ("gap-high", gap_high()),
        ("rates", rates()),
        ("robustness", robust()),
    ]
}

#[test]
fn criterion_01_irls_matches_multistart_descent_oracle() {
    let start = Instant::now();
    let base = BaseKernel::gaussian(1.0).unwrap();
    let second = SecondLevelKernel::gaussian_on_embeddings(1.0).unwrap();
    let sigmas = [0.5, 1.0, 2.0];
    let opts = SolverOptions::default();

    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..50u64 {
        let mut r = rng(3_100 + i);
        let n = r.random_range(2..=8);
        let gram = random_gram(&mut r, n, &base, &second);
        let y = random_responses(&mut r, n);
        let lambda = r.random_range(0.02..0.3);
        let family = robust_families()[(i % 3) as usize];
        let sigma = sigmas[((i / 3) % 3) as usize];
        let loss = WindowingLoss::new(family);

        let c_ls = fit_ls(&gram, &y, lambda).unwrap();
        let (model, _) = fit_rdr(&gram, &y, lambda, sigma, loss, &opts).unwrap();
        let irls_obj =
            objective_value(&gram, &y, model.coefficients(), lambda, sigma, loss).unwrap();
        let oracle_obj = multistart_oracle(
            &gram,
            &y,
            c_ls.coefficients(),
            lambda,
            sigma,
            loss,
            7_000 + i,
        );
        let excess = irls_obj - oracle_obj;
        worst = worst.max(excess);
        assert!(
            excess <= 1e-6,
            "instance {i}: solver objective exceeds the descent oracle by {excess:e}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "criterion 01 PASS: 50/50 instances within 1e-6 of the oracle \
         (worst excess {worst:.2e}, {elapsed:.2?})"
    );
}

#[test]
fn criterion_02_converged_fits_satisfy_the_first_order_condition() {
    // Dedicated battery across families and scales.
    let base = BaseKernel::gaussian(1.0).unwrap();
    let second = SecondLevelKernel::gaussian_on_embeddings(1.0).unwrap();
    let opts = SolverOptions::default();
    let mut fits = 0usize;
    for i in 0..20u64 {
        let mut r = rng(4_200 + i);
        let n = r.random_range(2..=20);
        let gram = random_gram(&mut r, n, &base, &second);
        let y = random_responses(&mut r, n);
        let lambda = r.random_range(0.02..0.3);
        for family in robust_families() {
            for sigma in [0.5, 1.0, 2.0] {
                let (_, report) =
                    fit_rdr(&gram, &y, lambda, sigma, WindowingLoss::new(family), &opts).unwrap();
                assert!(report.converged, "battery fit failed to converge");
                assert!(
                    report.stationarity_residual <= 1e-8,
                    "converged fit with stationarity {:e}",
                    report.stationarity_residual
                );
                fits += 1;
            }
        }
    }

    // Every row of the reference studies, through the same contract.
    let mut rows = 0usize;
    for (name, timed) in all_reference_studies() {
        for row in &timed.outcome.rows {
            assert!(row.converged, "{name} row with seed {} not converged", row.seed);
            assert!(
                row.stat_resid <= 1e-8,
                "{name} converged row with stationarity {:e}",
                row.stat_resid
            );
            rows += 1;
        }
    }
    println!(
        "criterion 02 PASS: {fits} battery fits and {rows} study rows converged \
         with stationarity <= 1e-8"
    );
}

#[test]
fn criterion_03_least_squares_window_reproduces_the_ridge_fit() {
    let base = BaseKernel::gaussian(1.0).unwrap();
    let second = SecondLevelKernel::gaussian_on_embeddings(1.0).unwrap();
    let loss = WindowingLoss::new(LossFamily::LeastSquares);
    let opts = SolverOptions::default();
    let sigmas = [0.5, 3.0, 1e6];

    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let mut r = rng(5_300 + i);
        let n = r.random_range(2..=30);
        let gram = random_gram(&mut r, n, &base, &second);
        let y = random_responses(&mut r, n);
        let lambda = r.random_range(0.02..0.3);
        let sigma = sigmas[(i % 3) as usize];

        let ls = fit_ls(&gram, &y, lambda).unwrap();
        let (rdr, report) = fit_rdr(&gram, &y, lambda, sigma, loss, &opts).unwrap();
        let diff = (ls.coefficients() - rdr.coefficients()).amax();
        worst = worst.max(diff);
        assert!(diff <= 1e-12, "instance {i}: coefficient gap {diff:e}");
        assert_eq!(report.iterations, 1);
    }
    println!(
        "criterion 03 PASS: 100/100 degenerate-window fits match the ridge \
         solution (worst coefficient gap {worst:.2e})"
    );
}

#[test]
fn criterion_04_rkhs_norm_bound_holds_on_every_fit() {
    // Battery over all four families with responses bounded by 1.
    let base = BaseKernel::gaussian(1.0).unwrap();
    let second = SecondLevelKernel::gaussian_on_embeddings(1.0).unwrap();
    let opts = SolverOptions::default();
    let mut fits = 0usize;
    for i in 0..25u64 {
        let mut r = rng(6_400 + i);
        let n = r.random_range(2..=20);
        let gram = random_gram(&mut r, n, &base, &second);
        let y = random_responses(&mut r, n);
        let lambda = r.random_range(0.02..0.3);

        let ls = fit_ls(&gram, &y, lambda).unwrap();
        let check = rkhs_norm_bound_check(&ls, 1.0);
        assert!(check.ok, "ridge fit: {} > {}", check.lhs, check.rhs);
        fits += 1;
        for family in robust_families() {
            for sigma in [0.5, 1.0, 2.0] {
                let (model, _) =
                    fit_rdr(&gram, &y, lambda, sigma, WindowingLoss::new(family), &opts).unwrap();
                let check = rkhs_norm_bound_check(&model, 1.0);
                assert!(check.ok, "robust fit: {} > {}", check.lhs, check.rhs);
                fits += 1;
            }
        }
    }

    let mut rows = 0usize;
    for (name, timed) in all_reference_studies() {
        assert_eq!(
            timed.outcome.summary.bound_checks.fdcon_fail, 0,
            "{name} study recorded norm-bound failures"
        );
        for row in &timed.outcome.rows {
            assert!(row.fdcon_ok, "{name} row with seed {} violates the bound", row.seed);
            rows += 1;
        }
    }
    println!(
        "criterion 04 PASS: zero violations over {fits} battery fits and \
         {rows} study rows"
    );
}

#[test]
fn criterion_05_window_deviation_bound_holds_on_every_fit() {
    let base = BaseKernel::gaussian(1.0).unwrap();
    let second = SecondLevelKernel::gaussian_on_embeddings(1.0).unwrap();
    let opts = SolverOptions::default();
    let mut fits = 0usize;
    for i in 0..25u64 {
        let mut r = rng(7_500 + i);
        let n = r.random_range(2..=20);
        let gram = random_gram(&mut r, n, &base, &second);
        let y = random_responses(&mut r, n);
        let lambda = r.random_range(0.02..0.3);
        for family in robust_families() {
            for sigma in [0.5, 1.0, 2.0] {
                let (model, _) =
                    fit_rdr(&gram, &y, lambda, sigma, WindowingLoss::new(family), &opts).unwrap();
                let check = e_term_norm(&model, &y);
                assert!(check.ok, "deviation norm {} > bound {}", check.lhs, check.rhs);
                fits += 1;
            }
        }
    }

    let mut rows = 0usize;
    for (name, timed) in all_reference_studies() {
        assert_eq!(
            timed.outcome.summary.bound_checks.ees_fail, 0,
            "{name} study recorded deviation-bound failures"
        );
        for row in &timed.outcome.rows {
            assert!(row.ees_ok, "{name} row with seed {} violates the bound", row.seed);
            rows += 1;
        }
    }
    println!(
        "criterion 05 PASS: zero violations over {fits} battery fits and \
         {rows} study rows"
    );
}

#[test]
fn criterion_06_gap_slope_and_per_row_bounds() {
    let timed = gap_main();
    let outcome = &timed.outcome;
    assert!(outcome.ok, "failures: {:?}", outcome.summary.failures);

    let slope = outcome
        .summary
        .slopes
        .gap_vs_sigma
        .expect("five-point sweep defines the slope");
    assert!(
        (-2.5..=-1.5).contains(&slope),
        "log-log slope {slope} outside [-2.5, -1.5]"
    );
    for row in &outcome.rows {
        assert!(
            row.gap <= row.gap_bound,
            "gap {:e} exceeds bound {:e} at sigma {}",
            row.gap,
            row.gap_bound,
            row.sigma
        );
    }
    assert!(
        timed.elapsed < Duration::from_secs(300),
        "took {:?}",
        timed.elapsed
    );
    let mean_gaps: Vec<(f64, f64)> = outcome
        .summary
        .cells
        .iter()
        .map(|c| (c.sigma, c.mean_gap))
        .collect();
    println!(
        "criterion 06 PASS: slope {slope:.4} in [-2.5, -1.5]; all {} rows within \
         bounds; mean gaps {mean_gaps:?} ({:.1?})",
        outcome.rows.len(),
        timed.elapsed
    );
}

#[test]
fn criterion_07_large_scales_collapse_onto_the_ridge_fit() {
    let timed = gap_high();
    let outcome = &timed.outcome;
    assert!(outcome.ok, "failures: {:?}", outcome.summary.failures);

    let mut max_gap: f64 = 0.0;
    let mut checked = 0usize;
    for row in &outcome.rows {
        assert!(row.gap <= row.gap_bound, "gap above bound at sigma {}", row.sigma);
        if row.sigma == 1e6 {
            assert!(
                row.gap <= 1e-5,
                "replicate {}: gap {:e} above 1e-5 at sigma 1e6",
                row.replicate,
                row.gap
            );
            max_gap = max_gap.max(row.gap);
            checked += 1;
        }
    }
    assert_eq!(checked, 20);
    println!(
        "criterion 07 PASS: all 20 replicates at scale 1e6 have gap <= 1e-5 \
         (max {max_gap:.2e})"
    );
}

#[test]
fn criterion_08_scheduled_error_decreases_with_sample_size() {
    let timed = rates();
    let outcome = &timed.outcome;
    assert!(outcome.ok, "failures: {:?}", outcome.summary.failures);

    let cells = &outcome.summary.cells;
    assert_eq!(cells.len(), 4);
    for pair in cells.windows(2) {
        assert!(
            pair[1].mean_err_rdr < pair[0].mean_err_rdr,
            "mean error rose from n={} ({:.5}) to n={} ({:.5})",
            pair[0].n,
            pair[0].mean_err_rdr,
            pair[1].n,
            pair[1].mean_err_rdr
        );
    }
    let slope = outcome
        .summary
        .slopes
        .error_vs_n
        .expect("four-point grid defines the slope");
    assert!(slope < 0.0, "slope {slope} not negative");
    assert!(
        timed.elapsed < Duration::from_secs(600),
        "took {:?}",
        timed.elapsed
    );
    let beta = outcome.summary.beta.expect("pilot ran").beta_hat;
    let means: Vec<(u64, f64)> = cells.iter().map(|c| (c.n, c.mean_err_rdr)).collect();
    println!(
        "criterion 08 PASS: mean error strictly decreasing {means:?}, slope \
         {slope:.3}, pilot beta {beta:.3} ({:.1?})",
        timed.elapsed
    );
}

#[test]
fn criterion_09_robust_fit_beats_ridge_under_contamination() {
    let timed = robust();
    let outcome = &timed.outcome;
    assert!(outcome.ok, "failures: {:?}", outcome.summary.failures);

    let entries = outcome.summary.robustness.as_ref().unwrap();
    let entry = &entries[0];
    assert!(
        entry.win_rate >= 0.8,
        "win rate {} below 0.8 over 30 replicates",
        entry.win_rate
    );
    assert!(
        entry.mean_err_rdr < entry.mean_err_ls,
        "mean robust error {} not below ridge {}",
        entry.mean_err_rdr,
        entry.mean_err_ls
    );
    assert!(
        timed.elapsed < Duration::from_secs(300),
        "took {:?}",
        timed.elapsed
    );
    println!(
        "criterion 09 PASS: win rate {:.2}, mean error {:.4} vs ridge {:.4} \
         ({:.1?})",
        entry.win_rate, entry.mean_err_rdr, entry.mean_err_ls, timed.elapsed
    );
}

#[test]
fn criterion_10_gram_spectra_and_embedding_distances_stay_clean() {
    let kernels: [(BaseKernel, SecondLevelKernel); 4] = [
        (
            BaseKernel::gaussian(1.0).unwrap(),
            SecondLevelKernel::gaussian_on_embeddings(0.5).unwrap(),
        ),
        (
            BaseKernel::gaussian(0.3).unwrap(),
            SecondLevelKernel::linear_on_embeddings(),
        ),
        (
            BaseKernel::laplacian(1.0).unwrap(),
            SecondLevelKernel::gaussian_on_embeddings(1.0).unwrap(),
        ),
        (
            BaseKernel::laplacian(0.5).unwrap(),
            SecondLevelKernel::linear_on_embeddings(),
        ),
    ];

    let mut grams = 0usize;
    let mut pairs = 0usize;
    for trial in 0..40u64 {
        let (base, second) = &kernels[(trial % 4) as usize];
        let mut r = rng(8_600 + trial);
        let n = r.random_range(2..=25);
        let dim = r.random_range(1..=3);
        let mut dists = random_distributions(&mut r, n, 6, dim);
        // Duplicated bags stress the spectrum with exact rank deficiency
        // and drive embedding distances to the round-off floor.
        let dup = dists[0].clone();
        dists.push(dup);

        let embedding = EmbeddingGram::compute(base, dists).unwrap();
        // Spectrum construction rejects eigenvalues below the relative
        // floor, so success certifies min eig >= -1e-10 * max eig.
        let spectrum = SpectralSummary::from_gram(embedding.inner()).unwrap();
        assert!(spectrum.eigenvalues().iter().all(|&e| e >= 0.0));
        let gram = second_level_gram(second, &embedding).unwrap();
        let spectrum = SpectralSummary::from_gram(&gram).unwrap();
        assert!(spectrum.eigenvalues().iter().all(|&e| e >= 0.0));
        grams += 2;

        let bags = embedding.distributions();
        for i in 0..bags.len() {
            for j in 0..bags.len() {
                let d_sq = embedding_distance_sq(base, &bags[i], &bags[j]).unwrap();
                assert!(d_sq >= 0.0, "clamped distance {d_sq:e} negative");
                pairs += 1;
            }
        }
    }

    for (name, timed) in all_reference_studies() {
        assert!(
            timed.outcome.ok,
            "{name} study tripped a spectrum or bound check"
        );
    }
    println!(
        "criterion 10 PASS: {grams} Gram spectra within the relative floor and \
         {pairs} pairwise distances nonnegative, duplicates included"
    );
}

#[test]
fn criterion_11_rows_are_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();

    let gap_cfg = gap_config(vec![2.0, 20.0, 200.0], 3, 25);
    let gap_path = write_config(dir.path(), &gap_cfg);
    let rates_cfg = rates_config(vec![32, 64], 2, 20, 32);
    let rates_path = dir.path().join("rates.json");
    std::fs::write(&rates_path, serde_json::to_string(&rates_cfg).unwrap()).unwrap();

    let run = |study: &str, config: &std::path::Path, out: &str, jobs: Option<&str>| {
        let out_dir = dir.path().join(out);
        let mut cmd = Command::new(bin());
        cmd.arg(study)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(&out_dir);
        if let Some(jobs) = jobs {
            cmd.args(["--jobs", jobs]);
        }
        let output = cmd.output().unwrap();
        assert!(output.status.success(), "{study} run failed: {output:?}");
        std::fs::read(out_dir.join("rows.csv")).unwrap()
    };

    let gap_a = run("gap", &gap_path, "gap-a", None);
    let gap_b = run("gap", &gap_path, "gap-b", None);
    let gap_c = run("gap", &gap_path, "gap-c", Some("4"));
    assert_eq!(gap_a, gap_b, "identical reruns must match byte for byte");
    assert_eq!(gap_a, gap_c, "worker count must not change rows.csv");

    let rates_a = run("rates", &rates_path, "rates-a", Some("1"));
    let rates_b = run("rates", &rates_path, "rates-b", Some("2"));
    assert_eq!(rates_a, rates_b, "scheduled study must match across worker counts");

    println!(
        "criterion 11 PASS: rows.csv byte-identical across reruns and worker \
         counts for the gap and rates studies ({} and {} bytes)",
        gap_a.len(),
        rates_a.len()
    );
}
