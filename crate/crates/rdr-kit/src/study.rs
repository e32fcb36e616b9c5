//! Study orchestration: deterministic cell layout, per-replicate fits, and
//! cross-replicate aggregation.
//!
//! A study expands its configuration into cells (one per training size,
//! carrying the resolved ridge level, atom count, and loss scales), runs
//! `replicates` independent datasets per cell, and produces one row per
//! (cell, replicate, scale). Dataset seeds derive from the master seed and
//! the (study, cell, replicate) coordinates, so rows are reproducible in
//! isolation and identical across worker counts.

use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rdr_core::diagnostics::{
    a_quantities, empirical_l2_distance, fit_beta_rate, gap_bound_rhs, line_fit, BetaFit,
    GapBoundInputs, SpectralSummary,
};
use rdr_core::kernel::{cross_gram, second_level_gram, BaseKernel, EmbeddingGram};
use rdr_core::loss::{LossFamily, WindowingLoss};
use rdr_core::solver::{e_term_norm, fit_ls, fit_rdr, predict, rkhs_norm_bound_check};
use rdr_core::synth::{generate, lambda_d_schedule, sigma_schedule};

use crate::config::{DPolicy, ExperimentConfig, LambdaPolicy, SigmaPolicy};
use crate::seed::derive_seed;
use crate::svg;

/// Absolute slack for the per-row gap check. The least-squares window makes
/// the theoretical bound exactly zero while the measured gap between two
/// identical-by-construction fits is round-off noise, so a strict
/// comparison would flag spurious violations; robust windows have bounds
/// many orders of magnitude above this.
pub const GAP_CHECK_SLACK: f64 = 1e-10;

/// Largest tolerated fraction of non-converged fits per (cell, scale)
/// group before the study is marked failed.
pub const NON_CONVERGENCE_LIMIT: f64 = 0.2;

/// Seed-derivation tag for the pilot dataset, distinct from cell indices.
const TAG_PILOT: u64 = u64::MAX;

/// The three built-in studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    /// Test error versus training size under the built-in schedules.
    Rates,
    /// Distance between robust and ridge fits versus the loss scale.
    Gap,
    /// Robust versus ridge test error under outlier contamination.
    Robustness,
}

impl StudyKind {
    /// Stable lowercase name used in rows and file metadata.
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Rates => "rates",
            StudyKind::Gap => "gap",
            StudyKind::Robustness => "robustness",
        }
    }

    /// Seed-derivation tag; distinct per study so identical configs run
    /// under different studies see different data.
    fn tag(self) -> u64 {
        match self {
            StudyKind::Rates => 1,
            StudyKind::Gap => 2,
            StudyKind::Robustness => 3,
        }
    }
}

/// One resolved grid cell: a training size with its ridge level, atom
/// count, and the loss scales swept inside it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub n: u64,
    pub d: usize,
    pub lambda: f64,
    pub sigmas: Vec<f64>,
}

/// One fitted (cell, replicate, scale) result.
///
/// `fdcon_ok` reports the a-priori reproducing-kernel norm bound on both
/// the robust and the ridge fit of the row's dataset; `ees_ok` reports the
/// window-deviation norm bound on the robust fit. `converged` mirrors the
/// solver report and is not a CSV column (rows carry `stat_resid` instead).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub study: String,
    pub n: u64,
    pub d: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub loss: String,
    pub replicate: usize,
    pub seed: u64,
    pub err_rdr: f64,
    pub err_ls: f64,
    pub gap: f64,
    pub gap_bound: f64,
    pub fdcon_ok: bool,
    pub ees_ok: bool,
    pub iters: usize,
    pub stat_resid: f64,
    pub converged: bool,
}

/// Replicate aggregates for one (cell, scale) group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: u64,
    pub d: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub replicates: usize,
    pub non_converged: usize,
    pub mean_err_rdr: f64,
    pub mean_err_ls: f64,
    pub mean_gap: f64,
    pub mean_gap_bound: f64,
}

/// Log-log slopes fitted over the aggregates; `None` when the study does
/// not define the slope or fewer than two positive points exist.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Slopes {
    pub error_vs_n: Option<f64>,
    pub gap_vs_sigma: Option<f64>,
}

/// Robust-versus-ridge comparison for one loss scale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub sigma: f64,
    pub mean_err_rdr: f64,
    pub mean_err_ls: f64,
    /// Mean ridge error minus mean robust error (positive favors robust).
    pub mean_difference: f64,
    /// Fraction of replicates where the robust fit had lower test error.
    pub win_rate: f64,
}

/// Pass/fail tallies over all rows for the three per-row checks.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BoundCheckTally {
    pub fdcon_pass: usize,
    pub fdcon_fail: usize,
    pub ees_pass: usize,
    pub ees_fail: usize,
    pub gap_within_bound_pass: usize,
    pub gap_within_bound_fail: usize,
}

/// The summary document written to `summary.json`.
///
/// Everything except `timing_ms` is a pure function of (config, master
/// seed); `timing_ms` is wall-clock and excluded from the determinism
/// contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub version: String,
    pub study: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    /// Pilot capacity fit, present when any schedule policy is active.
    pub beta: Option<BetaFit>,
    pub cells: Vec<CellSummary>,
    pub slopes: Slopes,
    pub robustness: Option<Vec<RobustnessSummary>>,
    pub bound_checks: BoundCheckTally,
    /// Human-readable diagnostics for every failed check, each naming the
    /// seed that regenerates the offending dataset. Empty iff the study
    /// passed.
    pub failures: Vec<String>,
    pub timing_ms: u128,
}

/// Everything a study run produces, ready for emission.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub rows: Vec<Row>,
    pub summary: SummaryDoc,
    pub plot: Option<String>,
    /// True iff no check failed; drives the process exit code.
    pub ok: bool,
}

fn loss_name(family: LossFamily) -> &'static str {
    match family {
        LossFamily::LeastSquares => "least_squares",
        LossFamily::Welsch => "welsch",
        LossFamily::Cauchy => "cauchy",
        LossFamily::Fair => "fair",
    }
}

/// Runs the pilot dataset and fits the capacity decay rate used by the
/// schedules. The pilot uses the largest grid size with the configured
/// pilot atom count.
fn run_pilot(kind: StudyKind, cfg: &ExperimentConfig, master_seed: u64) -> Result<BetaFit> {
    let pilot = cfg
        .pilot
        .as_ref()
        .context("schedule policies need a pilot block")?;
    let n = *cfg.n_grid.iter().max().expect("n_grid validated nonempty");
    let mut task = cfg.task.clone();
    task.seed = derive_seed(master_seed, &[kind.tag(), TAG_PILOT]);
    let sample = generate(&task, n as usize, pilot.d, 1).context("pilot data generation")?;
    let embedding =
        EmbeddingGram::compute(&cfg.base_kernel, sample.train).context("pilot embeddings")?;
    let gram = second_level_gram(&cfg.second_level, &embedding).context("pilot Gram")?;
    let spectrum = SpectralSummary::from_gram(&gram).context("pilot spectrum")?;
    let beta = fit_beta_rate(&spectrum, &pilot.lambda_grid).context("pilot capacity fit")?;
    Ok(beta)
}

/// Expands the configuration into resolved cells, one per training size.
fn build_cells(cfg: &ExperimentConfig, beta: Option<&BetaFit>) -> Result<Vec<Cell>> {
    let alpha = cfg.second_level.holder_alpha();
    let p = WindowingLoss::new(cfg.loss).constants().p;
    let mut cells = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let scheduled = if matches!(cfg.lambda, LambdaPolicy::Schedule)
            || matches!(cfg.d, DPolicy::Schedule)
        {
            let r = cfg.regime_r.expect("validated for schedule policies");
            let b = beta.expect("pilot ran for schedule policies").beta_hat;
            Some(
                lambda_d_schedule(r, b, alpha, n)
                    .with_context(|| format!("ridge/atom schedule at n={n}"))?,
            )
        } else {
            None
        };
        let lambda = match cfg.lambda {
            LambdaPolicy::Fixed { value } => value,
            LambdaPolicy::Schedule => scheduled.expect("scheduled above").0,
        };
        let d = match cfg.d {
            DPolicy::Fixed { value } => value,
            DPolicy::Schedule => scheduled.expect("scheduled above").1,
        };
        let sigmas = match &cfg.sigma {
            SigmaPolicy::Fixed { value } => vec![*value],
            SigmaPolicy::Sweep { grid } => grid.clone(),
            SigmaPolicy::Schedule => {
                let r = cfg.regime_r.expect("validated for schedule policies");
                let b = beta.expect("pilot ran for schedule policies").beta_hat;
                vec![sigma_schedule(r, b, p, n)
                    .with_context(|| format!("loss scale schedule at n={n}"))?]
            }
        };
        cells.push(Cell {
            n,
            d,
            lambda,
            sigmas,
        });
    }
    Ok(cells)
}

/// Generates one dataset, fits the ridge and robust models, and returns one
/// row per loss scale of the cell.
fn run_replicate(
    kind: StudyKind,
    cfg: &ExperimentConfig,
    master_seed: u64,
    cell_idx: usize,
    cell: &Cell,
    replicate: usize,
) -> Result<Vec<Row>> {
    let seed = derive_seed(master_seed, &[kind.tag(), cell_idx as u64, replicate as u64]);
    let mut task = cfg.task.clone();
    task.seed = seed;
    let sample = generate(&task, cell.n as usize, cell.d, cfg.n_test)
        .with_context(|| format!("data generation for seed {seed}"))?;

    let embedding = EmbeddingGram::compute(&cfg.base_kernel, sample.train)
        .with_context(|| format!("embeddings for seed {seed}"))?;
    let gram_matrix = second_level_gram(&cfg.second_level, &embedding)
        .with_context(|| format!("Gram for seed {seed}"))?;
    let spectrum = SpectralSummary::from_gram(&gram_matrix)
        .with_context(|| format!("Gram spectrum for seed {seed}"))?;
    let quantities = a_quantities(&spectrum, cell.lambda, cfg.second_level.kappa(), cell.n)
        .with_context(|| format!("sample quantities for seed {seed}"))?;
    let cross = cross_gram(
        &cfg.second_level,
        &cfg.base_kernel,
        embedding.distributions(),
        &sample.test,
    )
    .with_context(|| format!("cross Gram for seed {seed}"))?;

    let gram = Arc::new(gram_matrix);
    let ls_model = fit_ls(&gram, &sample.train_y, cell.lambda)
        .with_context(|| format!("ridge fit for seed {seed}"))?;
    let ls_pred = predict(&ls_model, &cross)?;
    let err_ls = empirical_l2_distance(ls_pred.as_slice(), sample.test_targets.as_slice())?;
    let ls_norm_ok = rkhs_norm_bound_check(&ls_model, cfg.task.response_bound).ok;

    let loss = WindowingLoss::new(cfg.loss);
    let consts = loss.constants();
    let opts = cfg.solver.to_options();
    let mut rows = Vec::with_capacity(cell.sigmas.len());
    for &sigma in &cell.sigmas {
        let (model, report) = fit_rdr(&gram, &sample.train_y, cell.lambda, sigma, loss, &opts)
            .with_context(|| format!("robust fit for seed {seed} at sigma {sigma}"))?;
        let pred = predict(&model, &cross)?;
        let err_rdr = empirical_l2_distance(pred.as_slice(), sample.test_targets.as_slice())?;
        let gap = empirical_l2_distance(pred.as_slice(), ls_pred.as_slice())?;
        let gap_bound = gap_bound_rhs(&GapBoundInputs {
            p: consts.p,
            c_p: consts.c_p,
            c_v: consts.c_v,
            m_bound: cfg.task.response_bound,
            kappa: cfg.second_level.kappa(),
            alpha: cfg.second_level.holder_alpha(),
            l_holder: cfg.second_level.holder_l(),
            b_k: BaseKernel::BOUND,
            lambda: cell.lambda,
            d: cell.d as f64,
            sigma,
            a_hat: quantities.a_hat,
        })
        .with_context(|| format!("gap bound for seed {seed} at sigma {sigma}"))?;
        let fdcon = rkhs_norm_bound_check(&model, cfg.task.response_bound);
        let ees = e_term_norm(&model, &sample.train_y);
        rows.push(Row {
            study: kind.name().to_string(),
            n: cell.n,
            d: cell.d,
            lambda: cell.lambda,
            sigma,
            loss: loss_name(cfg.loss).to_string(),
            replicate,
            seed,
            err_rdr,
            err_ls,
            gap,
            gap_bound,
            fdcon_ok: fdcon.ok && ls_norm_ok,
            ees_ok: ees.ok,
            iters: report.iterations,
            stat_resid: report.stationarity_residual,
            converged: report.converged,
        });
    }
    Ok(rows)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Log-log slope through positive points; `None` below two points or when
/// any value is not positive.
fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|&(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    line_fit(&xs, &ys).ok().map(|(slope, _, _)| slope)
}

/// Runs a study end to end: pilot (when scheduled), cells, replicates,
/// aggregation, and plot assembly. Replicates run on a worker pool of size
/// `jobs`; results are merged in (cell, replicate) order, so the output is
/// independent of `jobs`.
pub fn run_study(
    kind: StudyKind,
    cfg: &ExperimentConfig,
    master_seed: u64,
    jobs: usize,
) -> Result<StudyOutcome> {
    let start = Instant::now();
    cfg.validate(kind)?;

    let beta = if cfg.uses_schedules() {
        Some(run_pilot(kind, cfg, master_seed)?)
    } else {
        None
    };
    let cells = build_cells(cfg, beta.as_ref())?;

    let coords: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.replicates).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("worker pool")?;
    let nested: Vec<Vec<Row>> = pool.install(|| {
        coords
            .par_iter()
            .map(|&(c, r)| run_replicate(kind, cfg, master_seed, c, &cells[c], r))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<Row> = nested.into_iter().flatten().collect();

    let mut failures = Vec::new();
    let mut tally = BoundCheckTally::default();
    for row in &rows {
        if row.fdcon_ok {
            tally.fdcon_pass += 1;
        } else {
            tally.fdcon_fail += 1;
            failures.push(format!(
                "rkhs norm bound violated: n={} sigma={:e} replicate={} seed={}",
                row.n, row.sigma, row.replicate, row.seed
            ));
        }
        if row.ees_ok {
            tally.ees_pass += 1;
        } else {
            tally.ees_fail += 1;
            failures.push(format!(
                "window deviation bound violated: n={} sigma={:e} replicate={} seed={}",
                row.n, row.sigma, row.replicate, row.seed
            ));
        }
        if row.gap <= row.gap_bound + GAP_CHECK_SLACK {
            tally.gap_within_bound_pass += 1;
        } else {
            tally.gap_within_bound_fail += 1;
            failures.push(format!(
                "gap {:e} exceeds bound {:e}: n={} sigma={:e} replicate={} seed={}",
                row.gap, row.gap_bound, row.n, row.sigma, row.replicate, row.seed
            ));
        }
    }

    // Rows are laid out cell-major, then replicate, then scale; aggregate
    // each (cell, scale) group across replicates.
    let mut cell_summaries = Vec::new();
    let mut offset = 0usize;
    for cell in &cells {
        let k = cell.sigmas.len();
        for (s, &sigma) in cell.sigmas.iter().enumerate() {
            let group: Vec<&Row> = (0..cfg.replicates)
                .map(|r| &rows[offset + r * k + s])
                .collect();
            let non_converged = group.iter().filter(|row| !row.converged).count();
            if non_converged as f64 > NON_CONVERGENCE_LIMIT * group.len() as f64 {
                failures.push(format!(
                    "{non_converged} of {} fits did not converge: n={} sigma={sigma:e}",
                    group.len(),
                    cell.n
                ));
            }
            cell_summaries.push(CellSummary {
                n: cell.n,
                d: cell.d,
                lambda: cell.lambda,
                sigma,
                replicates: group.len(),
                non_converged,
                mean_err_rdr: mean(group.iter().map(|row| row.err_rdr)),
                mean_err_ls: mean(group.iter().map(|row| row.err_ls)),
                mean_gap: mean(group.iter().map(|row| row.gap)),
                mean_gap_bound: mean(group.iter().map(|row| row.gap_bound)),
            });
        }
        offset += cfg.replicates * k;
    }

    let mut slopes = Slopes::default();
    let mut plot = None;
    match kind {
        StudyKind::Rates => {
            let points: Vec<(f64, f64)> = cell_summaries
                .iter()
                .map(|c| (c.n as f64, c.mean_err_rdr))
                .collect();
            slopes.error_vs_n = log_log_slope(&points);
            plot = Some(svg::log_log_plot(
                "mean test error vs training size",
                "training bags n",
                "mean test error",
                &points,
            ));
        }
        StudyKind::Gap => {
            let points: Vec<(f64, f64)> = cell_summaries
                .iter()
                .map(|c| (c.sigma, c.mean_gap))
                .collect();
            slopes.gap_vs_sigma = log_log_slope(&points);
            plot = Some(svg::log_log_plot(
                "mean robust-to-ridge gap vs loss scale",
                "loss scale sigma",
                "mean gap",
                &points,
            ));
        }
        StudyKind::Robustness => {}
    }

    let robustness = if kind == StudyKind::Robustness {
        let cell = &cells[0];
        let k = cell.sigmas.len();
        let mut entries = Vec::with_capacity(k);
        for (s, &sigma) in cell.sigmas.iter().enumerate() {
            let group: Vec<&Row> = (0..cfg.replicates)
                .map(|r| &rows[r * k + s])
                .collect();
            let mean_err_rdr = mean(group.iter().map(|row| row.err_rdr));
            let mean_err_ls = mean(group.iter().map(|row| row.err_ls));
            let wins = group.iter().filter(|row| row.err_rdr < row.err_ls).count();
            entries.push(RobustnessSummary {
                sigma,
                mean_err_rdr,
                mean_err_ls,
                mean_difference: mean_err_ls - mean_err_rdr,
                win_rate: wins as f64 / group.len() as f64,
            });
        }
        Some(entries)
    } else {
        None
    };

    let ok = failures.is_empty();
    let summary = SummaryDoc {
        version: env!("CARGO_PKG_VERSION").to_string(),
        study: kind.name().to_string(),
        master_seed,
        config: cfg.clone(),
        beta,
        cells: cell_summaries,
        slopes,
        robustness,
        bound_checks: tally,
        failures,
        timing_ms: start.elapsed().as_millis(),
    };
    Ok(StudyOutcome {
        rows,
        summary,
        plot,
        ok,
    })
}
