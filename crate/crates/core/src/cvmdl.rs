//! The adaptive driver: minimum exploration, the exploration loop with
//! per-subset loss estimates, model selection, exploitation, and the
//! plain high-fidelity ECDF baseline.

use serde::{Deserialize, Serialize};

use crate::cdf::{alternating_sort, build_grid, ecdf_on_grid, CdfEstimate, EvalGrid, GridSpec};
use crate::cv_estimator::{evaluate_subset, exploitation_cdf_raw, AlphaMode, Integration, SubsetEvaluation, WeightSpec};
use crate::ensemble::{Ensemble, EnsembleDescriptor, JointBatch, SubsetBatch};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::{purpose, SeedStream};
use crate::subset::Subset;
use crate::surrogate::SurrogateCoefficients;

/// Relative slack allowed when comparing sums of non-representable costs
/// against the budget.
const BUDGET_RTOL: f64 = 1e-12;

fn within_budget(spent: f64, budget: f64) -> bool {
    spent <= budget * (1.0 + BUDGET_RTOL)
}

/// Running account of the sampling budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub total: f64,
    pub spent: f64,
    pub c_epr: f64,
    pub exploration: f64,
    pub exploitation: f64,
    pub exploration_draws: usize,
    pub exploitation_draws: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Exploration,
    Exploitation,
}

impl BudgetLedger {
    pub fn new(total: f64, c_epr: f64) -> Self {
        BudgetLedger {
            total,
            spent: 0.0,
            c_epr,
            exploration: 0.0,
            exploitation: 0.0,
            exploration_draws: 0,
            exploitation_draws: 0,
        }
    }

    pub fn remaining(&self) -> f64 {
        (self.total - self.spent).max(0.0)
    }

    /// Records `draws` draws costing `cost` in total. Refuses to overspend.
    pub fn charge(&mut self, phase: Phase, draws: usize, cost: f64) -> Result<()> {
        if !within_budget(self.spent + cost, self.total) {
            return Err(Error::InsufficientBudget {
                budget: self.remaining(),
                required: cost,
            });
        }
        self.spent += cost;
        match phase {
            Phase::Exploration => {
                self.exploration += cost;
                self.exploration_draws += draws;
            }
            Phase::Exploitation => {
                self.exploitation += cost;
                self.exploitation_draws += draws;
            }
        }
        Ok(())
    }
}

/// Next exploration size: doubling far below `m_star`, halving the gap
/// once within a factor of two.
pub fn q_growth(m: usize, m_star: f64) -> usize {
    if (m as f64) < m_star / 2.0 {
        2 * m
    } else {
        ((m as f64 + m_star) / 2.0).ceil() as usize
    }
}

/// Index of the subset minimizing the estimated loss among those with
/// `c_S <= max_cost`. Ties go to the cheaper subset, then the
/// lexicographically smaller one. If every affordable subset is
/// degenerate, the cheapest affordable one is returned.
pub fn select_subset(table: &[SubsetEvaluation], max_cost: f64) -> Result<usize> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("no subsets to select from".into()));
    }
    let tie = |a: &SubsetEvaluation, b: &SubsetEvaluation| a.c_s.total_cmp(&b.c_s).then(a.subset.cmp(&b.subset));
    let affordable = || table.iter().enumerate().filter(|(_, e)| e.c_s <= max_cost);
    let best = affordable()
        .filter_map(|(i, e)| e.loss.map(|l| (i, e, l)))
        .min_by(|(_, a, la), (_, b, lb)| la.total_cmp(lb).then(tie(a, b)))
        .map(|(i, _, _)| i);
    if let Some(i) = best {
        return Ok(i);
    }
    affordable()
        .min_by(|(_, a), (_, b)| tie(a, b))
        .map(|(i, _)| i)
        .ok_or(Error::InsufficientBudget {
            budget: max_cost,
            required: table.iter().map(|e| e.c_s).fold(f64::INFINITY, f64::min),
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvmdlOptions {
    pub alpha_mode: AlphaMode,
    /// Evaluation grid of the estimate. `None` uses the sample-driven grid
    /// for `d = 1` and the weight quadrature grid otherwise.
    pub grid: Option<GridSpec>,
    /// Also produce the monotone rearrangement.
    pub sort: bool,
    /// Singular value cutoff of the surrogate fits.
    pub rcond: Option<f64>,
}

impl Default for CvmdlOptions {
    fn default() -> Self {
        CvmdlOptions {
            alpha_mode: AlphaMode::Plain,
            grid: None,
            sort: true,
            rcond: None,
        }
    }
}

/// Why the exploration loop ended, or the size it grew to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum LoopAction {
    Explore { target: usize },
    /// `m` reached the estimated optimum of the selected subset.
    Converged,
    /// Growing further would leave no budget for one exploitation draw.
    BudgetCap,
    /// A pool drawn without replacement has no rows left for more.
    PoolCap,
    /// Every affordable subset has vanishing loss estimates.
    Degenerate,
}

/// One iteration of the exploration loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub m: usize,
    pub spent: f64,
    pub evaluations: Vec<SubsetEvaluation>,
    pub selected: Subset,
    pub m_star_hat: Option<f64>,
    #[serde(flatten)]
    pub action: LoopAction,
}

/// Samples behind a run, kept so the estimate can be rebuilt with a
/// different `alpha` mode on the same draws.
#[derive(Clone, Debug, PartialEq)]
pub struct CvmdlSamples<T> {
    pub exploration: JointBatch<T>,
    pub exploitation: SubsetBatch<T>,
}

/// Estimates derived from one set of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CdfVariants<T> {
    pub alpha_mode: AlphaMode,
    /// Control-variate values before clipping.
    pub raw: CdfEstimate<T>,
    /// `raw` clipped to `[0, 1]`.
    pub clipped: CdfEstimate<T>,
    /// Alternating sort of `raw`, then clipped.
    pub sorted: Option<CdfEstimate<T>>,
    pub sort_sweeps: Option<usize>,
}

impl<T: Real> CdfVariants<T> {
    /// Sorted estimate if present, clipped otherwise.
    pub fn best(&self) -> &CdfEstimate<T> {
        self.sorted.as_ref().unwrap_or(&self.clipped)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CvmdlOutput<T> {
    pub selected: Subset,
    pub m: usize,
    pub n_exploit: usize,
    /// Exploitation draws the budget allowed before a finite pool capped
    /// them, when that happened.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_exploit_uncapped: Option<usize>,
    pub coefficients: SurrogateCoefficients<T>,
    pub cdf: CdfVariants<T>,
    pub ledger: BudgetLedger,
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub samples: Option<CvmdlSamples<T>>,
}

impl<T: Real> CvmdlOutput<T> {
    /// Rebuilds the estimate from the stored samples with another `alpha`
    /// mode (and optionally grid).
    pub fn reestimate(&self, weight: &WeightSpec, options: &CvmdlOptions) -> Result<CdfVariants<T>> {
        let s = self
            .samples
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("run output carries no samples".into()))?;
        estimate_variants(&s.exploration, &self.coefficients, &s.exploitation, weight, options)
    }
}

/// Evaluation grid of an estimate built from exploration and exploitation
/// samples.
pub fn estimate_grid<T: Real>(
    spec: Option<&GridSpec>,
    weight: &WeightSpec,
    exploration: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    exploitation: &SubsetBatch<T>,
) -> Result<EvalGrid<T>> {
    let d = exploration.dim();
    match (spec, d) {
        (Some(GridSpec::SampleDriven), _) | (None, 1) => {
            let h_epr = coeffs.predict_batch(exploration)?;
            let h_ept = coeffs.predict_rows(exploitation.x.view())?;
            build_grid(
                &GridSpec::SampleDriven,
                &[exploration.y.view(), h_epr.view(), h_ept.view()],
            )
        }
        (Some(s), _) => build_grid(s, &[]),
        (None, _) => match weight.integration {
            Integration::Grid { .. } => Ok(weight.quadrature_grid()?.0),
            Integration::Exact => Err(Error::InvalidConfig(format!(
                "no default evaluation grid for d = {d} with exact integration"
            ))),
        },
    }
}

fn estimate_variants<T: Real>(
    exploration: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    exploitation: &SubsetBatch<T>,
    weight: &WeightSpec,
    options: &CvmdlOptions,
) -> Result<CdfVariants<T>> {
    let grid = estimate_grid(options.grid.as_ref(), weight, exploration, coeffs, exploitation)?;
    let raw = exploitation_cdf_raw(exploration, coeffs, options.alpha_mode, exploitation, &grid)?;
    let clipped = raw.clipped();
    let (sorted, sort_sweeps) = if options.sort {
        let (s, sweeps) = alternating_sort(&raw);
        (Some(s.clipped()), Some(sweeps))
    } else {
        (None, None)
    };
    Ok(CdfVariants {
        alpha_mode: options.alpha_mode,
        raw,
        clipped,
        sorted,
        sort_sweeps,
    })
}

/// Smallest budget accepted by [`run_cvmdl`]: the minimum exploration and
/// one draw of the cheapest subset.
pub fn budget_floor(descriptor: &EnsembleDescriptor) -> f64 {
    descriptor.min_exploration() as f64 * descriptor.c_epr + descriptor.min_subset_cost()
}

/// Largest `N` with `m c_epr + N c_S <= budget`.
fn exploitation_count(budget: f64, c_epr: f64, m: usize, c_s: f64) -> usize {
    let spent = m as f64 * c_epr;
    let mut n = ((budget - spent) / c_s).floor().max(0.0) as usize;
    while n > 0 && !within_budget(spent + n as f64 * c_s, budget) {
        n -= 1;
    }
    n
}

/// Largest `m` with `m c_epr + c_S <= budget`.
fn exploration_cap(budget: f64, c_epr: f64, c_s: f64) -> usize {
    let mut m = ((budget - c_s) / c_epr).floor().max(0.0) as usize;
    while m > 0 && !within_budget(m as f64 * c_epr + c_s, budget) {
        m -= 1;
    }
    m
}

/// Runs the full adaptive estimator with budget `budget`.
pub fn run_cvmdl<T: Real>(
    ensemble: &Ensemble,
    budget: f64,
    weight: &WeightSpec,
    options: &CvmdlOptions,
    seed: SeedStream,
) -> Result<CvmdlOutput<T>> {
    let desc = ensemble.descriptor();
    weight.validate(desc.dim)?;
    let floor = budget_floor(&desc);
    if !(budget.is_finite() && within_budget(floor, budget)) {
        return Err(Error::InsufficientBudget { budget, required: floor });
    }
    let c_epr = desc.c_epr;
    let m_min = desc.min_exploration();
    let rcond = options.rcond.map(T::of);
    let subsets: Vec<Subset> = desc.subset_costs.iter().map(|(s, _)| s.clone()).collect();
    let mut ledger = BudgetLedger::new(budget, c_epr);
    let mut sampler = ensemble.sampler(seed);
    if let Some(rows) = sampler.remaining_pool_rows() {
        if rows <= m_min {
            return Err(Error::PoolExhausted {
                requested: m_min + 1,
                remaining: rows,
            });
        }
    }

    let mut batch: JointBatch<T> = sampler.sample_joint(m_min, seed.derive(purpose::EXPLORATION, 0))?;
    ledger.charge(Phase::Exploration, m_min, batch.charged_cost)?;
    let mut trace = Vec::new();
    let (selected, coeffs) = loop {
        let m = batch.count();
        let mut table = Vec::with_capacity(subsets.len());
        let mut fits = Vec::with_capacity(subsets.len());
        for s in &subsets {
            let (eval, coeffs) = evaluate_subset(&batch, &desc, s, weight, budget, rcond)?;
            table.push(eval);
            fits.push(coeffs);
        }
        let pick = select_subset(&table, budget - c_epr * m as f64)?;
        let sel = &table[pick];
        let action = match sel.m_star_hat {
            None => LoopAction::Degenerate,
            Some(m_star) if m as f64 >= m_star => LoopAction::Converged,
            Some(m_star) => {
                let mut target = q_growth(m, m_star).min(exploration_cap(budget, c_epr, sel.c_s));
                let pool_limit = sampler.remaining_pool_rows().map(|r| m + r.saturating_sub(1));
                if let Some(limit) = pool_limit {
                    target = target.min(limit);
                }
                if target > m {
                    LoopAction::Explore { target }
                } else if pool_limit == Some(target) {
                    LoopAction::PoolCap
                } else {
                    LoopAction::BudgetCap
                }
            }
        };
        trace.push(TraceRecord {
            iteration: trace.len(),
            m,
            spent: ledger.spent,
            selected: sel.subset.clone(),
            m_star_hat: sel.m_star_hat,
            evaluations: table.clone(),
            action: action.clone(),
        });
        match action {
            LoopAction::Explore { target } => {
                let stream = seed.derive(purpose::EXPLORATION, trace.len() as u64);
                let more = sampler.sample_joint(target - m, stream)?;
                ledger.charge(Phase::Exploration, target - m, more.charged_cost)?;
                batch.append(&more)?;
            }
            _ => break (table.swap_remove(pick), fits.swap_remove(pick)),
        }
    };

    let m = batch.count();
    let budget_n = exploitation_count(budget, c_epr, m, selected.c_s);
    let (n, uncapped) = match sampler.remaining_pool_rows() {
        Some(rows) if rows < budget_n => (rows, Some(budget_n)),
        _ => (budget_n, None),
    };
    if n == 0 {
        return Err(Error::InsufficientBudget {
            budget: ledger.remaining(),
            required: selected.c_s,
        });
    }
    let exploit: SubsetBatch<T> =
        sampler.sample_subset(&selected.subset, n, seed.derive(purpose::EXPLOITATION, 0))?;
    ledger.charge(Phase::Exploitation, n, exploit.charged_cost)?;
    let cdf = estimate_variants(&batch, &coeffs, &exploit, weight, options)?;
    Ok(CvmdlOutput {
        selected: selected.subset,
        m,
        n_exploit: n,
        n_exploit_uncapped: uncapped,
        coefficients: coeffs,
        cdf,
        ledger,
        trace,
        samples: Some(CvmdlSamples {
            exploration: batch,
            exploitation: exploit,
        }),
    })
}

/// High-fidelity ECDF spending the whole budget on `Y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EcdfOutput<T> {
    pub n: usize,
    pub spent: f64,
    pub estimate: CdfEstimate<T>,
}

/// ECDF of `floor(B / c_0)` high-fidelity draws on `grid` (sample-driven
/// when `None`).
pub fn run_ecdf_baseline<T: Real>(
    ensemble: &Ensemble,
    budget: f64,
    grid: Option<&GridSpec>,
    seed: SeedStream,
) -> Result<EcdfOutput<T>> {
    let c0 = ensemble.specs()[0].cost;
    let mut n = (budget / c0).floor().max(0.0) as usize;
    while n > 0 && !within_budget(n as f64 * c0, budget) {
        n -= 1;
    }
    if n == 0 || !budget.is_finite() {
        return Err(Error::InsufficientBudget { budget, required: c0 });
    }
    let mut sampler = ensemble.sampler(seed);
    let (y, spent) = sampler.sample_high_fidelity::<T>(n, seed.derive(purpose::BASELINE, 0))?;
    let spec = grid.unwrap_or(&GridSpec::SampleDriven);
    let g = build_grid(spec, &[y.view()])?;
    Ok(EcdfOutput {
        n,
        spent,
        estimate: ecdf_on_grid(y.view(), &g)?,
    })
}
