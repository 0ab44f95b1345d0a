//! Trial protocol shared by `run` and `sweep`: oracle construction, seeding,
//! one pass of every requested estimator, and error against the oracle.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use mfcdf::cdf::{ecdf_on_grid, build_grid, CdfEstimate, EvalGrid, GridSpec};
use mfcdf::cv_estimator::{AlphaMode, Integration, Weight};
use mfcdf::cvmdl::{budget_floor, run_cvmdl, run_ecdf_baseline, CvmdlOptions, CvmdlOutput, EcdfOutput};
use mfcdf::ensemble::{Ensemble, ModelFamily};
use mfcdf::metrics::weighted_l2_error;
use mfcdf::seed::{purpose, SeedStream};
use mfcdf::{Subset, Error};
use ndarray::{ArrayD, Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use crate::config::{EstimatorKind, ExperimentConfig, LoadedConfig, OracleSpec};
use crate::CliError;

/// Half-width, in standard deviations, of the analytic oracle grid under a
/// constant weight.
const ANALYTIC_SPAN: f64 = 10.0;

/// Everything a trial needs, built once per command.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub ensemble: Ensemble,
    pub oracle: CdfEstimate<f64>,
    /// Grid of every estimate; `None` is sample-driven.
    pub grid: Option<GridSpec>,
    pub estimators: Vec<EstimatorKind>,
}

/// Evaluation grid used when the config names none: sample-driven for
/// `d = 1`, the weight quadrature nodes otherwise.
pub fn default_grid(config: &ExperimentConfig, d: usize) -> Option<GridSpec> {
    if config.grid.is_some() || d == 1 {
        return config.grid.clone();
    }
    match (&config.weight.weight, &config.weight.integration) {
        (Weight::Rectangle { lower, upper }, Integration::Grid { resolution }) => Some(GridSpec::Midpoints {
            lower: lower.clone(),
            upper: upper.clone(),
            resolution: vec![*resolution; d],
        }),
        _ => None,
    }
}

fn oracle_grid(config: &ExperimentConfig, d: usize) -> Result<Option<EvalGrid<f64>>, CliError> {
    match default_grid(config, d) {
        Some(spec) => Ok(Some(build_grid(&spec, &[])?)),
        None => Ok(None),
    }
}

/// Reference CDF described by the config's `oracle` entry.
pub fn build_oracle(lc: &LoadedConfig, ensemble: &Ensemble) -> Result<CdfEstimate<f64>, CliError> {
    let config = &lc.config;
    let d = ensemble.dim();
    match &config.oracle {
        OracleSpec::Samples { samples } => {
            if *samples == 0 {
                return Err(CliError::Config("oracle needs at least one sample".into()));
            }
            let stream = SeedStream::new(config.seed).derive(purpose::ORACLE, 0);
            let mut sampler = ensemble.sampler(stream);
            let n = sampler.remaining_pool_rows().map_or(*samples, |r| r.min(*samples));
            let (y, _) = sampler.sample_high_fidelity::<f64>(n, stream)?;
            let grid = match oracle_grid(config, d)? {
                Some(g) => g,
                None => build_grid(&GridSpec::SampleDriven, &[y.view()])?,
            };
            Ok(ecdf_on_grid(y.view(), &grid)?)
        }
        OracleSpec::File { path } => {
            let path = lc.resolve(path);
            let file = File::open(&path)
                .map_err(|e| CliError::Config(format!("cannot open oracle {}: {e}", path.display())))?;
            let est: CdfEstimate<f64> = if path.extension().and_then(|e| e.to_str()) == Some("json") {
                serde_json::from_reader(BufReader::new(file))?
            } else {
                CdfEstimate::read_csv(BufReader::new(file))?
            };
            if est.dim() != d {
                return Err(CliError::Config(format!(
                    "oracle file has dimension {}, ensemble has {d}",
                    est.dim()
                )));
            }
            Ok(est)
        }
        OracleSpec::Analytic { resolution } => {
            let ModelFamily::LinearGaussian(p) = ensemble.family() else {
                return Err(CliError::Config(
                    "an analytic oracle needs a linear-gaussian ensemble".into(),
                ));
            };
            if *resolution < 2 {
                return Err(CliError::Config("analytic oracle resolution must be at least 2".into()));
            }
            let grid = match oracle_grid(config, d)? {
                Some(g) => g,
                None => {
                    let (lower, upper) = match &config.weight.weight {
                        Weight::Rectangle { lower, upper } => (lower.clone(), upper.clone()),
                        Weight::ConstantOne => (
                            p.y_mean.iter().zip(&p.y_std).map(|(m, s)| m - ANALYTIC_SPAN * s.max(1e-12)).collect(),
                            p.y_mean.iter().zip(&p.y_std).map(|(m, s)| m + ANALYTIC_SPAN * s.max(1e-12)).collect(),
                        ),
                    };
                    build_grid(
                        &GridSpec::Uniform {
                            lower,
                            upper,
                            resolution: vec![*resolution; d],
                        },
                        &[],
                    )?
                }
            };
            let values = ArrayD::from_shape_fn(IxDyn(&grid.shape()), |idx| p.high_fidelity_cdf(&grid.point(idx.slice())));
            let mut est = CdfEstimate::new(grid, values)?;
            est.monotone = true;
            Ok(est)
        }
    }
}

impl Experiment {
    pub fn new(lc: &LoadedConfig) -> Result<Self, CliError> {
        let ensemble = lc.ensemble()?;
        let oracle = build_oracle(lc, &ensemble)?;
        let grid = default_grid(&lc.config, ensemble.dim());
        Ok(Experiment {
            estimators: lc.config.estimators_sorted(),
            config: lc.config.clone(),
            ensemble,
            oracle,
            grid,
        })
    }

    /// Fails with a budget error if any estimator cannot run at `budget`.
    pub fn check_budget(&self, budget: f64) -> Result<(), CliError> {
        let desc = self.ensemble.descriptor();
        for kind in &self.estimators {
            let floor = if kind.is_cvmdl() { budget_floor(&desc) } else { desc.costs[0] };
            if !(budget >= floor) {
                return Err(CliError::Budget(format!(
                    "{kind} needs a budget of at least {floor}, got {budget}"
                )));
            }
        }
        Ok(())
    }

    fn cvmdl_options(&self) -> CvmdlOptions {
        CvmdlOptions {
            alpha_mode: AlphaMode::Plain,
            grid: self.grid.clone(),
            sort: true,
            rcond: self.config.rcond,
        }
    }

    /// Runs every requested estimator once. Estimator failures other than an
    /// infeasible budget are recorded in the trial status.
    pub fn run_trial(&self, budget: f64, trial: usize, seed: SeedStream) -> Result<Trial, CliError> {
        let weight = &self.config.weight;
        let mut out = Trial {
            budget,
            trial,
            records: Vec::new(),
            estimates: BTreeMap::new(),
            ecdf: None,
            cvmdl: None,
        };
        let record = |kind: EstimatorKind| TrialRecord {
            estimator: kind.name().to_string(),
            budget,
            trial,
            error: None,
            selected: None,
            m: None,
            n: None,
            spent: 0.0,
            status: "ok".into(),
        };

        if self.estimators.contains(&EstimatorKind::Ecdf) {
            let mut r = record(EstimatorKind::Ecdf);
            match run_ecdf_baseline::<f64>(&self.ensemble, budget, self.grid.as_ref(), seed.derive(purpose::BASELINE, 0)) {
                Ok(e) => {
                    r.error = Some(weighted_l2_error(&e.estimate, &self.oracle, weight)?);
                    r.n = Some(e.n);
                    r.spent = e.spent;
                    out.estimates.insert(EstimatorKind::Ecdf, e.estimate.clone());
                    out.ecdf = Some(e);
                }
                Err(e @ Error::InsufficientBudget { .. }) => return Err(e.into()),
                Err(e) => r.status = format!("failed: {e}"),
            }
            out.records.push(r);
        }

        let cv_kinds: Vec<EstimatorKind> = self.estimators.iter().copied().filter(|k| k.is_cvmdl()).collect();
        if cv_kinds.is_empty() {
            return Ok(out);
        }
        let run = match run_cvmdl::<f64>(&self.ensemble, budget, weight, &self.cvmdl_options(), seed) {
            Ok(run) => run,
            Err(e @ Error::InsufficientBudget { .. }) => return Err(e.into()),
            Err(e) => {
                for kind in cv_kinds {
                    let mut r = record(kind);
                    r.status = format!("failed: {e}");
                    out.records.push(r);
                }
                return Ok(out);
            }
        };
        let star = if cv_kinds.iter().any(|k| k.tail_extended()) {
            let options = CvmdlOptions {
                alpha_mode: AlphaMode::TailExtended { tau: self.config.tau },
                ..self.cvmdl_options()
            };
            Some(run.reestimate(weight, &options).map_err(|e| e.to_string()))
        } else {
            None
        };
        for kind in cv_kinds {
            let mut r = record(kind);
            r.selected = Some(run.selected.to_string());
            r.m = Some(run.m);
            r.n = Some(run.n_exploit);
            r.spent = run.ledger.spent;
            let variants = if kind.tail_extended() {
                match star.as_ref().expect("computed for star kinds") {
                    Ok(v) => Some(v),
                    Err(msg) => {
                        r.status = format!("failed: {msg}");
                        None
                    }
                }
            } else {
                Some(&run.cdf)
            };
            if let Some(v) = variants {
                let est = if kind.sorted() {
                    v.sorted.clone().expect("sorting requested")
                } else {
                    v.clipped.clone()
                };
                r.error = Some(weighted_l2_error(&est, &self.oracle, weight)?);
                out.estimates.insert(kind, est);
            }
            out.records.push(r);
        }
        out.cvmdl = Some(run);
        Ok(out)
    }
}

/// Seed of trial `trial` at `budget`; independent across both.
pub fn trial_seed(master: u64, budget: f64, trial: usize) -> SeedStream {
    SeedStream::new(master)
        .derive(purpose::BUDGET, budget.to_bits())
        .derive(purpose::TRIAL, trial as u64)
}

/// One row of `trials.csv` and `error.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub estimator: String,
    pub budget: f64,
    pub trial: usize,
    /// Weighted L2 error against the oracle.
    pub error: Option<f64>,
    pub selected: Option<String>,
    /// Exploration samples (cvMDL).
    pub m: Option<usize>,
    /// High-fidelity draws (ECDF) or exploitation draws (cvMDL).
    pub n: Option<usize>,
    pub spent: f64,
    pub status: String,
}

pub struct Trial {
    pub budget: f64,
    pub trial: usize,
    pub records: Vec<TrialRecord>,
    pub estimates: BTreeMap<EstimatorKind, CdfEstimate<f64>>,
    pub ecdf: Option<EcdfOutput<f64>>,
    pub cvmdl: Option<CvmdlOutput<f64>>,
}

impl Trial {
    pub fn selected(&self) -> Option<&Subset> {
        self.cvmdl.as_ref().map(|c| &c.selected)
    }
}
