//! The four subcommands. Each writes its artifacts into an output directory
//! and returns what it wrote; output bytes depend only on the inputs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mfcdf::cdf::{Cdf1D, CdfEstimate};
use mfcdf::cv_estimator::{oracle_stats, OracleStats, SubsetEvaluation};
use mfcdf::cvmdl::BudgetLedger;
use mfcdf::metrics::{risk_report, write_risk_csv, RiskReport};
use mfcdf::seed::{purpose, SeedStream};
use mfcdf::{Subset, SurrogateCoefficients64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EstimatorKind, LoadedConfig};
use crate::experiment::{trial_seed, Experiment, Trial, TrialRecord};
use crate::CliError;

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub budgets: Vec<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub estimators: Vec<EstimatorKind>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, lc: &mut LoadedConfig) -> Result<(), CliError> {
        let c = &mut lc.config;
        if !self.budgets.is_empty() {
            c.budgets = self.budgets.clone();
        }
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if !self.estimators.is_empty() {
            c.estimators = self.estimators.clone();
        }
        c.check()
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Other(anyhow::anyhow!("cannot create {}: {e}", dir.display())))
}

fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_csv_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_estimate(dir: &Path, name: &str, est: &CdfEstimate<f64>) -> Result<(), CliError> {
    write_json(&dir.join(format!("{name}.json")), est)?;
    est.write_csv(BufWriter::new(File::create(dir.join(format!("{name}.csv")))?))?;
    Ok(())
}

/// Summary of a single cvMDL run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub budget: f64,
    pub seed: u64,
    pub selected: Subset,
    pub m: usize,
    pub m_star_hat: Option<f64>,
    pub n_exploit: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_exploit_uncapped: Option<usize>,
    pub ledger: BudgetLedger,
    pub coefficients: SurrogateCoefficients64,
    /// Subset table of the last iteration.
    pub evaluations: Vec<SubsetEvaluation>,
}

/// Runs every estimator once at one budget (`--budget`, else the largest
/// configured budget) as trial 0 of that budget.
pub fn cmd_run(mut lc: LoadedConfig, o: &Overrides) -> Result<PathBuf, CliError> {
    o.apply(&mut lc)?;
    if o.budgets.len() > 1 {
        return Err(CliError::Config("run takes a single budget".into()));
    }
    let budget = *lc.config.budgets.last().expect("checked nonempty");
    let exp = Experiment::new(&lc)?;
    exp.check_budget(budget)?;
    let dir = lc.out_dir(o.out.as_deref());
    create_dir(&dir)?;

    let trial = exp.run_trial(budget, 0, trial_seed(lc.config.seed, budget, 0))?;
    write_estimate(&dir, "oracle", &exp.oracle)?;
    for (kind, est) in &trial.estimates {
        write_estimate(&dir, kind.name(), est)?;
    }
    write_csv_rows(&dir.join("error.csv"), &trial.records)?;
    if let Some(run) = &trial.cvmdl {
        let mut w = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
        for rec in &run.trace {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let last = run.trace.last().expect("a run has at least one iteration");
        write_json(
            &dir.join("selection.json"),
            &RunSummary {
                budget,
                seed: lc.config.seed,
                selected: run.selected.clone(),
                m: run.m,
                m_star_hat: last.m_star_hat,
                n_exploit: run.n_exploit,
                n_exploit_uncapped: run.n_exploit_uncapped,
                ledger: run.ledger.clone(),
                coefficients: run.coefficients.clone(),
                evaluations: last.evaluations.clone(),
            },
        )?;
    }
    if exp.ensemble.dim() == 1 {
        let (reports, skipped) = report_estimates(&dir, &lc.config.cvar_levels, &lc.config.quantile_levels)?;
        for (name, why) in skipped {
            eprintln!("warning: no risk report for {name}: {why}");
        }
        write_report(&dir, &reports)?;
    }
    Ok(dir)
}

/// Aggregate over the trials of one estimator at one budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub estimator: String,
    pub budget: f64,
    pub trials: usize,
    /// Trials whose estimator produced no error value.
    pub failures: usize,
    pub mean_error: Option<f64>,
    pub q05: Option<f64>,
    pub q50: Option<f64>,
    pub q95: Option<f64>,
    pub mean_m: Option<f64>,
    pub mean_n: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub budget: f64,
    pub subset: String,
    pub count: usize,
    /// Share of the budget's successful cvMDL runs.
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub selection: Vec<SelectionRow>,
}

/// Linear interpolation between order statistics (type 7).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    match sorted.get(lo + 1) {
        Some(&next) => sorted[lo] + (h - lo as f64) * (next - sorted[lo]),
        None => sorted[lo],
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// Reduces trial records to per-(estimator, budget) rows and per-budget
/// selection frequencies. The result does not depend on record order.
pub fn aggregate(records: &[TrialRecord]) -> SweepResult {
    let mut groups: BTreeMap<(u64, &str), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.budget.to_bits(), &r.estimator)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((_, est), mut group) in groups {
        group.sort_by_key(|r| r.trial);
        let mut errors: Vec<f64> = group.iter().filter_map(|r| r.error).collect();
        errors.sort_by(f64::total_cmp);
        let q = |p| (!errors.is_empty()).then(|| quantile_type7(&errors, p));
        rows.push(SweepRow {
            estimator: est.to_string(),
            budget: group[0].budget,
            trials: group.len(),
            failures: group.len() - errors.len(),
            mean_error: mean(group.iter().filter_map(|r| r.error)),
            q05: q(0.05),
            q50: q(0.5),
            q95: q(0.95),
            mean_m: mean(group.iter().filter_map(|r| r.m.map(|m| m as f64))),
            mean_n: mean(group.iter().filter_map(|r| r.n.map(|n| n as f64))),
        });
    }
    rows.sort_by(|a, b| a.budget.total_cmp(&b.budget).then_with(|| a.estimator.cmp(&b.estimator)));

    // One cvMDL run backs every cvMDL estimator of a trial.
    let mut picks: BTreeMap<(u64, usize), &str> = BTreeMap::new();
    for r in records {
        if let Some(s) = &r.selected {
            picks.entry((r.budget.to_bits(), r.trial)).or_insert(s);
        }
    }
    let mut counts: BTreeMap<u64, BTreeMap<&str, usize>> = BTreeMap::new();
    for ((b, _), s) in picks {
        *counts.entry(b).or_default().entry(s).or_default() += 1;
    }
    let mut selection = Vec::new();
    for (b, by_subset) in counts {
        let total: usize = by_subset.values().sum();
        for (subset, count) in by_subset {
            selection.push(SelectionRow {
                budget: f64::from_bits(b),
                subset: subset.to_string(),
                count,
                frequency: count as f64 / total as f64,
            });
        }
    }
    selection.sort_by(|a, b| a.budget.total_cmp(&b.budget).then_with(|| a.subset.cmp(&b.subset)));
    SweepResult { rows, selection }
}

/// Runs `trials` trials at every budget on a pool of `--workers` threads.
pub fn cmd_sweep(mut lc: LoadedConfig, o: &Overrides) -> Result<(PathBuf, SweepResult), CliError> {
    o.apply(&mut lc)?;
    let exp = Experiment::new(&lc)?;
    for &b in &lc.config.budgets {
        exp.check_budget(b)?;
    }
    let dir = lc.out_dir(o.out.as_deref());
    create_dir(&dir)?;

    let jobs: Vec<(f64, usize)> = lc
        .config
        .budgets
        .iter()
        .flat_map(|&b| (0..lc.config.trials).map(move |t| (b, t)))
        .collect();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = o.workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Other(e.into()))?;
    let seed = lc.config.seed;
    let trials: Vec<Trial> = pool.install(|| {
        jobs.par_iter()
            .map(|&(b, t)| exp.run_trial(b, t, trial_seed(seed, b, t)))
            .collect::<Result<_, _>>()
    })?;
    let records: Vec<TrialRecord> = trials.into_iter().flat_map(|t| t.records).collect();
    let result = aggregate(&records);

    write_csv_rows(&dir.join("trials.csv"), &records)?;
    write_csv_rows(&dir.join("sweep.csv"), &result.rows)?;
    write_csv_rows(&dir.join("selection.csv"), &result.selection)?;
    write_json(&dir.join("sweep.json"), &result)?;
    Ok((dir, result))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub subset: String,
    pub mask: u32,
    pub c_s: f64,
    pub k1: f64,
    pub k2: f64,
    pub gamma: f64,
    pub m_star: f64,
    pub min_loss: f64,
    pub relative_efficiency: f64,
}

/// Oracle statistics from `oracle_samples` joint draws, scaled to
/// `--budget` (else the largest configured budget).
pub fn cmd_oracle(mut lc: LoadedConfig, o: &Overrides) -> Result<(PathBuf, OracleStats), CliError> {
    o.apply(&mut lc)?;
    let c = &lc.config;
    let budget = *c.budgets.last().expect("checked nonempty");
    let ensemble = lc.ensemble()?;
    let stream = SeedStream::new(c.seed).derive(purpose::ORACLE, 1);
    let n = ensemble.sampler(stream).remaining_pool_rows().map_or(c.oracle_samples, |r| r.min(c.oracle_samples));
    let stats = oracle_stats::<f64>(&ensemble, &c.weight, n, budget, None, stream)?;
    let dir = lc.out_dir(o.out.as_deref());
    create_dir(&dir)?;

    write_json(&dir.join("oracle_stats.json"), &stats)?;
    let desc = ensemble.descriptor();
    let mut w = csv::Writer::from_path(dir.join("correlations.csv"))?;
    let mut header = vec!["output".to_string()];
    for (i, &di) in desc.low_fidelity_dims.iter().enumerate() {
        header.extend((1..=di).map(|k| format!("x{}_{k}", i + 1)));
    }
    w.write_record(&header)?;
    for (j, row) in stats.correlations.iter().enumerate() {
        let mut rec = vec![format!("y_{}", j + 1)];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let rows: Vec<SubsetRow> = stats
        .subsets
        .iter()
        .map(|s| SubsetRow {
            subset: s.subset.to_string(),
            mask: s.mask,
            c_s: s.c_s,
            k1: s.k1,
            k2: s.k2,
            gamma: s.gamma,
            m_star: s.m_star,
            min_loss: s.min_loss,
            relative_efficiency: s.relative_efficiency,
        })
        .collect();
    write_csv_rows(&dir.join("subsets.csv"), &rows)?;
    Ok((dir, stats))
}

/// Names of the estimate files a run directory may hold.
fn estimate_names() -> impl Iterator<Item = &'static str> {
    std::iter::once("oracle").chain(EstimatorKind::ALL.iter().map(|k| k.name()))
}

/// Risk reports of every estimate in `dir`, each computed from its
/// monotone rearrangement. Estimates that admit no report (support not
/// closed on the grid) are returned separately with the reason.
pub fn report_estimates(
    dir: &Path,
    cvar_levels: &[f64],
    quantile_levels: &[f64],
) -> Result<(Vec<(String, RiskReport)>, Vec<(String, String)>), CliError> {
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for name in estimate_names() {
        let path = dir.join(format!("{name}.json"));
        if !path.exists() {
            continue;
        }
        let est: CdfEstimate<f64> = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
        if est.dim() != 1 {
            return Err(CliError::Config(format!(
                "risk measures need a scalar output; {name} has dimension {}",
                est.dim()
            )));
        }
        let r = Cdf1D::from_estimate(&est.sorted()).and_then(|c| risk_report(&c, cvar_levels, quantile_levels));
        match r {
            Ok(r) => reports.push((name.to_string(), r)),
            Err(e) => skipped.push((name.to_string(), e.to_string())),
        }
    }
    Ok((reports, skipped))
}

fn write_report(dir: &Path, reports: &[(String, RiskReport)]) -> Result<(), CliError> {
    let map: BTreeMap<&str, &RiskReport> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    write_json(&dir.join("report.json"), &map)?;
    write_risk_csv(BufWriter::new(File::create(dir.join("report.csv"))?), reports)?;
    Ok(())
}

/// Writes `report.json` and `report.csv` for the estimates in `dir`.
pub fn cmd_report(
    dir: &Path,
    cvar_levels: &[f64],
    quantile_levels: &[f64],
) -> Result<BTreeMap<String, RiskReport>, CliError> {
    if let Some(l) = cvar_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(CliError::Config(format!("CVaR level {l} outside (0, 1)")));
    }
    if let Some(l) = quantile_levels.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(CliError::Config(format!("quantile level {l} outside (0, 1]")));
    }
    if !dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a run directory", dir.display())));
    }
    let (reports, skipped) = report_estimates(dir, cvar_levels, quantile_levels)?;
    if reports.is_empty() {
        let why = skipped.iter().map(|(n, e)| format!("{n}: {e}")).collect::<Vec<_>>().join("; ");
        return Err(CliError::Config(format!("no reportable estimates in {} {why}", dir.display())));
    }
    for (name, why) in skipped {
        eprintln!("warning: no risk report for {name}: {why}");
    }
    write_report(dir, &reports)?;
    Ok(reports.into_iter().collect())
}
