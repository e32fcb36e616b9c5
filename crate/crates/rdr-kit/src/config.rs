//! Experiment configuration: JSON schema, loading, and validation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rdr_core::kernel::{BaseKernel, SecondLevelFamily, SecondLevelKernel};
use rdr_core::loss::LossFamily;
use rdr_core::solver::SolverOptions;
use rdr_core::synth::{NoiseModel, TaskSpec};

use crate::study::StudyKind;

/// Loss scale policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaPolicy {
    /// One fixed scale for every cell.
    Fixed { value: f64 },
    /// A sweep over scales inside each cell (one row per scale).
    Sweep { grid: Vec<f64> },
    /// Per-size scale from the built-in schedule (needs `regime_r` and a
    /// pilot).
    Schedule,
}

/// Ridge level policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaPolicy {
    Fixed { value: f64 },
    Schedule,
}

/// Atoms-per-bag policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DPolicy {
    Fixed { value: usize },
    Schedule,
}

/// Pilot sample for estimating the capacity decay rate used by the
/// schedules. The pilot size is the largest entry of `n_grid`; this block
/// sets its atom count and the ridge grid for the log-log fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    /// Atoms per bag in the pilot sample.
    pub d: usize,
    /// Ridge levels for the capacity fit (at least 4, spanning two
    /// decades).
    pub lambda_grid: Vec<f64>,
}

/// Solver option overrides; unset fields keep the library defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub stat_tol: Option<f64>,
    pub max_iter: Option<usize>,
}

impl SolverConfig {
    /// Materializes solver options, filling gaps with defaults.
    pub fn to_options(self) -> SolverOptions {
        let defaults = SolverOptions::default();
        SolverOptions {
            tol: self.tol.unwrap_or(defaults.tol),
            stat_tol: self.stat_tol.unwrap_or(defaults.stat_tol),
            max_iter: self.max_iter.unwrap_or(defaults.max_iter),
        }
    }
}

/// Full description of one study run.
///
/// The embedded task's `seed` field is a placeholder: studies overwrite it
/// with a per-replicate seed derived from `master_seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Synthetic task (its `seed` is replaced per replicate).
    pub task: TaskSpec,
    /// Kernel on atoms.
    pub base_kernel: BaseKernel,
    /// Kernel on embeddings.
    pub second_level: SecondLevelKernel,
    /// Loss family for the robust fit.
    pub loss: LossFamily,
    /// Loss scale policy.
    pub sigma: SigmaPolicy,
    /// Ridge level policy.
    pub lambda: LambdaPolicy,
    /// Atoms-per-bag policy.
    pub d: DPolicy,
    /// Training sample sizes, one cell per entry.
    pub n_grid: Vec<u64>,
    /// Held-out bags per replicate.
    pub n_test: usize,
    /// Replicates per cell.
    pub replicates: usize,
    /// Solver overrides.
    #[serde(default)]
    pub solver: SolverConfig,
    /// Regularity label steering the schedules.
    #[serde(default)]
    pub regime_r: Option<f64>,
    /// Pilot block, required whenever any policy is `schedule`.
    #[serde(default)]
    pub pilot: Option<PilotConfig>,
    /// Output directory (overridden by `--out` and `RDRKIT_OUT`).
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Master seed; every dataset seed derives from it.
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// True if any policy needs the schedule machinery (pilot + regime).
    pub fn uses_schedules(&self) -> bool {
        matches!(self.sigma, SigmaPolicy::Schedule)
            || matches!(self.lambda, LambdaPolicy::Schedule)
            || matches!(self.d, DPolicy::Schedule)
    }

    /// Checks the configuration against the invariants shared by all
    /// studies and the preconditions of `kind`.
    pub fn validate(&self, kind: StudyKind) -> Result<()> {
        self.task
            .validate()
            .context("invalid task specification")?;
        BaseKernel::new(self.base_kernel.family(), self.base_kernel.bandwidth())
            .context("invalid base kernel")?;
        match self.second_level.family() {
            SecondLevelFamily::GaussianOnEmbeddings => {
                SecondLevelKernel::gaussian_on_embeddings(self.second_level.bandwidth())
                    .context("invalid second-level kernel")?;
            }
            SecondLevelFamily::LinearOnEmbeddings => {
                if self.second_level.bandwidth() != 1.0 {
                    bail!(
                        "the linear second-level kernel has no bandwidth; set the field to 1.0"
                    );
                }
            }
        }

        if self.n_grid.is_empty() {
            bail!("n_grid must be nonempty");
        }
        if self.n_grid.contains(&0) {
            bail!("n_grid entries must be positive");
        }
        if self.replicates == 0 {
            bail!("replicates must be at least 1");
        }
        if self.n_test == 0 {
            bail!("n_test must be at least 1");
        }

        match &self.sigma {
            SigmaPolicy::Fixed { value } => {
                if !value.is_finite() || *value <= 0.0 {
                    bail!("fixed sigma must be finite and positive, got {value}");
                }
            }
            SigmaPolicy::Sweep { grid } => {
                if grid.is_empty() {
                    bail!("sigma sweep grid must be nonempty");
                }
                for v in grid {
                    if !v.is_finite() || *v <= 0.0 {
                        bail!("sigma sweep entries must be finite and positive, got {v}");
                    }
                }
            }
            SigmaPolicy::Schedule => {}
        }
        if let LambdaPolicy::Fixed { value } = self.lambda {
            if !value.is_finite() || value <= 0.0 {
                bail!("fixed lambda must be finite and positive, got {value}");
            }
        }
        if let DPolicy::Fixed { value } = self.d {
            if value == 0 {
                bail!("fixed atom count must be at least 1");
            }
        }

        if self.uses_schedules() {
            let r = self
                .regime_r
                .context("schedule policies need regime_r")?;
            if !r.is_finite() || r <= 0.0 {
                bail!("regime_r must be finite and positive, got {r}");
            }
            let pilot = self
                .pilot
                .as_ref()
                .context("schedule policies need a pilot block")?;
            if pilot.d == 0 {
                bail!("pilot atom count must be at least 1");
            }
            if pilot.lambda_grid.is_empty() {
                bail!("pilot lambda_grid must be nonempty");
            }
        }

        match kind {
            StudyKind::Rates => {
                if !matches!(self.lambda, LambdaPolicy::Schedule)
                    || !matches!(self.d, DPolicy::Schedule)
                    || !matches!(self.sigma, SigmaPolicy::Schedule)
                {
                    bail!("the rates study needs schedule policies for lambda, d, and sigma");
                }
            }
            StudyKind::Gap => {
                let SigmaPolicy::Sweep { grid } = &self.sigma else {
                    bail!("the gap study needs a sigma sweep grid");
                };
                let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = grid.iter().cloned().fold(0.0_f64, f64::max);
                if hi / lo < 10.0 {
                    bail!(
                        "the gap study sigma grid must span at least a decade, got {:.3}x",
                        hi / lo
                    );
                }
                if self.n_grid.len() != 1 {
                    bail!("the gap study uses a single sample size");
                }
                if !matches!(self.lambda, LambdaPolicy::Fixed { .. })
                    || !matches!(self.d, DPolicy::Fixed { .. })
                {
                    bail!("the gap study needs fixed lambda and d");
                }
            }
            StudyKind::Robustness => {
                if !matches!(self.task.noise, NoiseModel::OutlierMix { .. }) {
                    bail!("the robustness study needs outlier_mix noise");
                }
                if self.n_grid.len() != 1 {
                    bail!("the robustness study uses a single sample size");
                }
                if matches!(self.sigma, SigmaPolicy::Schedule) {
                    bail!("the robustness study needs a fixed sigma or a sweep grid");
                }
                if !matches!(self.lambda, LambdaPolicy::Fixed { .. })
                    || !matches!(self.d, DPolicy::Fixed { .. })
                {
                    bail!("the robustness study needs fixed lambda and d");
                }
            }
        }
        Ok(())
    }
}

/// Reads and parses a configuration file (strict JSON, unknown fields
/// rejected).
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse config file {}", path.display()))?;
    Ok(cfg)
}

/// Resolves the output directory: explicit flag, then the `RDRKIT_OUT`
/// environment variable, then the config value, then `rdr-out`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = std::env::var_os("RDRKIT_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    if let Some(dir) = &cfg.output_dir {
        return dir.clone();
    }
    PathBuf::from("rdr-out")
}
