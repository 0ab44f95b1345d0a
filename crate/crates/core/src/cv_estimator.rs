//! Control-variate statistics of sliced linear surrogates: indicator CDF
//! triples, the optimal coefficient `alpha`, the residual fields `K1`/`K2`,
//! their weighted integrals, the estimated loss curve, and the
//! exploitation CDF estimator.

use ndarray::{Array2, ArrayD, ArrayView2, IxDyn, Zip};
use serde::{Deserialize, Serialize};

use crate::cdf::{build_grid, ecdf_counts, CdfEstimate, EvalGrid, GridSpec};
use crate::ensemble::{Ensemble, EnsembleDescriptor, JointBatch, SubsetBatch};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::SeedStream;
use crate::subset::Subset;
use crate::surrogate::{fit_surrogate, SurrogateCoefficients};

pub const DEFAULT_QUADRATURE_RESOLUTION: usize = 128;

/// Weight function `omega`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Weight {
    /// `omega = 1` on the real line; scalar outputs only.
    ConstantOne,
    /// Indicator of a closed box.
    Rectangle { lower: Vec<f64>, upper: Vec<f64> },
}

/// How weighted integrals of step fields are evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Integration {
    /// Exact summation over the sample-induced partition (`d = 1`).
    Exact,
    /// Midpoint rule on the weight rectangle, `resolution` cells per axis.
    Grid { resolution: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub weight: Weight,
    pub integration: Integration,
}

impl WeightSpec {
    pub fn constant_one() -> Self {
        WeightSpec {
            weight: Weight::ConstantOne,
            integration: Integration::Exact,
        }
    }

    /// Box indicator integrated by the midpoint rule.
    pub fn rectangle(lower: Vec<f64>, upper: Vec<f64>, resolution: usize) -> Self {
        WeightSpec {
            weight: Weight::Rectangle { lower, upper },
            integration: Integration::Grid { resolution },
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::WeightMismatch {
                dim: d,
                reason: reason.to_string(),
            })
        };
        match &self.weight {
            Weight::ConstantOne if d != 1 => return bad("constant weight requires d = 1"),
            Weight::ConstantOne => {}
            Weight::Rectangle { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return bad("rectangle bounds must have one entry per dimension");
                }
                if lower.iter().zip(upper).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
                    return bad("rectangle must be finite with positive volume");
                }
            }
        }
        match self.integration {
            Integration::Exact if d != 1 => bad("exact integration requires d = 1"),
            Integration::Grid { .. } if self.weight == Weight::ConstantOne => {
                bad("grid integration requires a rectangle weight")
            }
            Integration::Grid { resolution: 0 } => bad("quadrature resolution must be positive"),
            _ => Ok(()),
        }
    }

    /// Midpoint nodes and the common cell volume (grid mode).
    pub fn quadrature_grid<T: Real>(&self) -> Result<(EvalGrid<T>, f64)> {
        let (Weight::Rectangle { lower, upper }, Integration::Grid { resolution }) =
            (&self.weight, &self.integration)
        else {
            return Err(Error::InvalidArgument(
                "quadrature grid needs a rectangle weight in grid mode".into(),
            ));
        };
        let spec = GridSpec::Midpoints {
            lower: lower.clone(),
            upper: upper.clone(),
            resolution: vec![*resolution; lower.len()],
        };
        let volume: f64 = lower
            .iter()
            .zip(upper)
            .map(|(a, b)| (b - a) / *resolution as f64)
            .product();
        Ok((build_grid(&spec, &[])?, volume))
    }

    /// Integration bounds for `d = 1` exact mode.
    pub fn interval(&self) -> (f64, f64) {
        match &self.weight {
            Weight::ConstantOne => (f64::NEG_INFINITY, f64::INFINITY),
            Weight::Rectangle { lower, upper } => (lower[0], upper[0]),
        }
    }
}

/// Lengths of `[z_j, z_{j+1}) ∩ [lo, hi]`, the last cell being
/// `[z_last, inf)`. Lengths may be infinite for unbounded weights.
pub(crate) fn cell_lengths<T: Real>(z: &[T], lo: f64, hi: f64) -> Vec<f64> {
    (0..z.len())
        .map(|j| {
            let a = z[j].as_f64().max(lo);
            let b = z.get(j + 1).map_or(f64::INFINITY, |v| v.as_f64()).min(hi);
            (b - a).max(0.0)
        })
        .collect()
}

/// Empirical CDFs of `Y`, of `H`, and of `Y ∨ H` (componentwise max) at
/// one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorStats<T> {
    pub f_y: T,
    pub f_h: T,
    pub f_yh: T,
}

/// Row counts behind an [`IndicatorStats`]; `alpha` and the `K` fields are
/// formed from exact integer numerators so that identities such as
/// `K1 = 0` for a perfect surrogate hold without rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndicatorCounts {
    pub y: u64,
    pub h: u64,
    pub yh: u64,
    pub m: u64,
}

impl IndicatorCounts {
    pub fn stats<T: Real>(&self) -> IndicatorStats<T> {
        let m = T::of(self.m as f64);
        let c = |v: u64| T::of(v as f64) / m;
        IndicatorStats {
            f_y: c(self.y),
            f_h: c(self.h),
            f_yh: c(self.yh),
        }
    }

    /// `m^2 Cov` and `m^2 Var` of the two indicators.
    fn moments(&self) -> (i128, i128, i128) {
        let (y, h, yh, m) = (self.y as i128, self.h as i128, self.yh as i128, self.m as i128);
        (m * yh - y * h, y * (m - y), h * (m - h))
    }

    pub fn alpha<T: Real>(&self) -> T {
        let (cov, _, var_h) = self.moments();
        if var_h == 0 {
            T::zero()
        } else {
            T::of(cov as f64 / var_h as f64)
        }
    }

    pub fn k_fields<T: Real>(&self) -> (T, T) {
        let (cov, var_y, var_h) = self.moments();
        let m2 = (self.m as f64).powi(2);
        let v = var_y as f64 / m2;
        let k1 = if var_h == 0 {
            v
        } else {
            // Cauchy-Schwarz keeps the numerator nonnegative.
            let num = var_y * var_h - cov * cov;
            num as f64 / (m2 * var_h as f64)
        };
        (T::of(k1), T::of(v) - T::of(k1))
    }
}

impl<T: Real> IndicatorStats<T> {
    /// `F_Y (1 - F_Y)`.
    pub fn variance(&self) -> T {
        self.f_y * (T::one() - self.f_y)
    }

    /// Empirical correlation of the two indicators, 0 when undefined.
    pub fn rho(&self) -> T {
        let denom = self.variance() * self.f_h * (T::one() - self.f_h);
        if denom > T::zero() {
            (self.f_yh - self.f_y * self.f_h) / denom.sqrt()
        } else {
            T::zero()
        }
    }
}

/// `Y ∨ H` row-wise.
fn componentwise_max<T: Real>(y: ArrayView2<'_, T>, h: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = y.to_owned();
    Zip::from(&mut out).and(h).for_each(|a, &b| *a = a.max(b));
    out
}

/// Surrogate predictions on the exploration rows, and their max with `Y`.
struct Fitted<T> {
    h: Array2<T>,
    yh: Array2<T>,
}

fn fitted<T: Real>(batch: &JointBatch<T>, coeffs: &SurrogateCoefficients<T>) -> Result<Fitted<T>> {
    if batch.count() == 0 {
        return Err(Error::EmptySample);
    }
    let h = coeffs.predict_batch(batch)?;
    if h.ncols() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            found: h.ncols(),
        });
    }
    let yh = componentwise_max(batch.y.view(), h.view());
    Ok(Fitted { h, yh })
}

/// Counts of `Y <= z`, `H <= z`, `Y ∨ H <= z` at every node of a grid.
pub struct StatsField<T> {
    grid: EvalGrid<T>,
    m: usize,
    y: ArrayD<u64>,
    h: ArrayD<u64>,
    yh: ArrayD<u64>,
}

impl<T: Real> StatsField<T> {
    pub fn new(batch: &JointBatch<T>, coeffs: &SurrogateCoefficients<T>, grid: &EvalGrid<T>) -> Result<Self> {
        let f = fitted(batch, coeffs)?;
        Self::from_rows(batch.y.view(), f.h.view(), f.yh.view(), grid)
    }

    fn from_rows(y: ArrayView2<'_, T>, h: ArrayView2<'_, T>, yh: ArrayView2<'_, T>, grid: &EvalGrid<T>) -> Result<Self> {
        Ok(StatsField {
            grid: grid.clone(),
            m: y.nrows(),
            y: ecdf_counts(y, grid)?,
            h: ecdf_counts(h, grid)?,
            yh: ecdf_counts(yh, grid)?,
        })
    }

    pub fn grid(&self) -> &EvalGrid<T> {
        &self.grid
    }

    pub fn at(&self, index: &[usize]) -> IndicatorCounts {
        let i = IxDyn(index);
        IndicatorCounts {
            y: self.y[&i],
            h: self.h[&i],
            yh: self.yh[&i],
            m: self.m as u64,
        }
    }

    /// Applies `f` at every node, row-major.
    pub fn map<U, F: FnMut(IndicatorCounts) -> U>(&self, mut f: F) -> ArrayD<U> {
        let m = self.m as u64;
        let mut out = Vec::with_capacity(self.grid.len());
        for ((&y, &h), &yh) in self.y.iter().zip(self.h.iter()).zip(self.yh.iter()) {
            out.push(f(IndicatorCounts { y, h, yh, m }));
        }
        ArrayD::from_shape_vec(IxDyn(&self.grid.shape()), out).expect("grid shape")
    }
}

/// Indicator statistics of the exploration rows at a single point.
pub fn indicator_stats<T: Real>(
    batch: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    x: &[T],
) -> Result<IndicatorStats<T>> {
    Ok(indicator_counts(batch, coeffs, x)?.stats())
}

pub fn indicator_counts<T: Real>(
    batch: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    x: &[T],
) -> Result<IndicatorCounts> {
    let f = fitted(batch, coeffs)?;
    if x.len() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            found: x.len(),
        });
    }
    let below = |a: ArrayView2<'_, T>| {
        a.rows()
            .into_iter()
            .filter(|r| r.iter().zip(x).all(|(v, z)| v <= z))
            .count() as u64
    };
    Ok(IndicatorCounts {
        y: below(batch.y.view()),
        h: below(f.h.view()),
        yh: below(f.yh.view()),
        m: batch.count() as u64,
    })
}

/// `(f_yh - f_y f_h) / (f_h (1 - f_h))` inside the support of `F_H`, else 0.
pub fn alpha_hat<T: Real>(s: &IndicatorStats<T>) -> T {
    let var_h = s.f_h * (T::one() - s.f_h);
    if s.f_h > T::zero() && s.f_h < T::one() {
        (s.f_yh - s.f_y * s.f_h) / var_h
    } else {
        T::zero()
    }
}

/// `(K1, K2)`: mean squared residual of regressing `1{Y <= x}` on
/// `[1, 1{H <= x}]`, and its complement in `F_Y (1 - F_Y)`.
pub fn k_fields_from_stats<T: Real>(s: &IndicatorStats<T>) -> (T, T) {
    let v = s.variance();
    let var_h = s.f_h * (T::one() - s.f_h);
    let k1 = if var_h > T::zero() {
        let cov = s.f_yh - s.f_y * s.f_h;
        (v - cov * cov / var_h).max(T::zero())
    } else {
        v
    };
    (k1, v - k1)
}

pub fn k_fields<T: Real>(batch: &JointBatch<T>, coeffs: &SurrogateCoefficients<T>, x: &[T]) -> Result<(T, T)> {
    Ok(indicator_counts(batch, coeffs, x)?.k_fields())
}

/// Replacement values of `alpha` below and above the support of `F_H`
/// (scalar outputs), evaluated at the `tau` and `1 - tau` quantiles of
/// the surrogate values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailAlpha<T> {
    pub lower: T,
    pub upper: T,
}

pub fn tail_alpha<T: Real>(batch: &JointBatch<T>, coeffs: &SurrogateCoefficients<T>, tau: f64) -> Result<TailAlpha<T>> {
    if batch.dim() != 1 {
        return Err(Error::InvalidArgument("tail extension of alpha requires d = 1".into()));
    }
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1/2), got {tau}")));
    }
    let f = fitted(batch, coeffs)?;
    let m = batch.count();
    let mut h: Vec<T> = f.h.iter().cloned().collect();
    h.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    // Generalized inverse of the empirical CDF: the ceil(p m)-th order statistic.
    let order_stat = |p: f64| -> Result<T> {
        let k = (p * m as f64 - 1e-9).ceil();
        if tau * (m as f64) < 1.0 - 1e-9 {
            return Err(Error::BatchTooSmall {
                required: (1.0 / tau).ceil() as usize,
                found: m,
            });
        }
        Ok(h[(k as usize).min(m) - 1])
    };
    let value = |x: T, p: f64| -> T {
        let mut y = 0usize;
        let mut yh = 0usize;
        for (&yv, &yhv) in batch.y.iter().zip(f.yh.iter()) {
            y += (yv <= x) as usize;
            yh += (yhv <= x) as usize;
        }
        let mm = T::of_usize(m);
        let p = T::of(p);
        let t = T::of(tau);
        (T::of_usize(yh) / mm - T::of_usize(y) / mm * p) / (t * (T::one() - t))
    };
    let lo = order_stat(tau)?;
    let hi = order_stat(1.0 - tau)?;
    Ok(TailAlpha {
        lower: value(lo, tau),
        upper: value(hi, 1.0 - tau),
    })
}

/// Tail-extended `alpha` at a point `x` outside the surrogate support.
pub fn alpha_tail_extension<T: Real>(
    batch: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    x: T,
    tau: f64,
) -> Result<T> {
    let tails = tail_alpha(batch, coeffs, tau)?;
    let c = indicator_counts(batch, coeffs, &[x])?;
    if c.h == 0 {
        Ok(tails.lower)
    } else if c.h == c.m {
        Ok(tails.upper)
    } else {
        Err(Error::InvalidArgument(format!(
            "{x} lies inside the support of the surrogate CDF"
        )))
    }
}

/// `∫ω K1`, `∫ω K2` and `∫ω F_Y (1 - F_Y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KIntegrals {
    pub k1: f64,
    pub k2: f64,
    pub variance: f64,
}

/// Largest sample partition integrated exactly under a rectangle weight.
pub const PARTITION_NODE_CAP: usize = 1 << 20;

/// `∫ω K1`, `∫ω K2` and `∫ω F_Y(1 - F_Y)` over the exploration rows.
///
/// The fields are constant on the cells cut out by the sample coordinates,
/// so under a rectangle weight they are summed exactly over that partition.
/// The midpoint rule is used only once the partition exceeds
/// [`PARTITION_NODE_CAP`] nodes; at small `m` a fixed grid can miss every
/// gap between `Y` and `H` and report `k1 = 0`.
pub fn k_integrals<T: Real>(
    batch: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    weight: &WeightSpec,
) -> Result<KIntegrals> {
    k_integrals_capped(batch, coeffs, weight, PARTITION_NODE_CAP)
}

fn k_integrals_capped<T: Real>(
    batch: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    weight: &WeightSpec,
    node_cap: usize,
) -> Result<KIntegrals> {
    weight.validate(batch.dim())?;
    let f = fitted(batch, coeffs)?;
    let (grid, cell) = match weight.integration {
        Integration::Exact => {
            let grid = build_grid(&GridSpec::SampleDriven, &[batch.y.view(), f.h.view()])?;
            let (lo, hi) = weight.interval();
            let lengths = cell_lengths(grid.axis(0), lo, hi);
            (grid, CellWeights::PerNode(lengths))
        }
        Integration::Grid { .. } => match partition_cells(&[batch.y.view(), f.h.view()], weight, node_cap)? {
            Some((grid, volumes)) => (grid, CellWeights::PerNode(volumes)),
            None => {
                let (grid, volume) = weight.quadrature_grid()?;
                (grid, CellWeights::Uniform(volume))
            }
        },
    };
    let field = StatsField::from_rows(batch.y.view(), f.h.view(), f.yh.view(), &grid)?;
    let mut acc = KIntegrals {
        k1: 0.0,
        k2: 0.0,
        variance: 0.0,
    };
    let m = field.m as u64;
    let counts = field.y.iter().zip(field.h.iter()).zip(field.yh.iter());
    for (n, ((&y, &h), &yh)) in counts.enumerate() {
        // The unbounded last cell carries F_Y = 1, so every field vanishes there.
        if y == 0 || y == m {
            continue;
        }
        let c = IndicatorCounts { y, h, yh, m };
        let (k1, k2) = c.k_fields::<T>();
        let w = match &cell {
            CellWeights::Uniform(v) => *v,
            CellWeights::PerNode(l) => l[n],
        };
        acc.k1 += w * k1.as_f64();
        acc.k2 += w * k2.as_f64();
        acc.variance += w * c.stats::<T>().variance().as_f64();
    }
    Ok(acc)
}

/// Nodes of the partition induced by `samples` inside a rectangle weight,
/// with the volume of the cell each node opens. `None` past `node_cap`.
fn partition_cells<T: Real>(
    samples: &[ArrayView2<'_, T>],
    weight: &WeightSpec,
    node_cap: usize,
) -> Result<Option<(EvalGrid<T>, Vec<f64>)>> {
    let Weight::Rectangle { lower, upper } = &weight.weight else {
        return Err(Error::InvalidArgument("partition integration needs a rectangle weight".into()));
    };
    let mut axes = Vec::with_capacity(lower.len());
    let mut lengths = Vec::with_capacity(lower.len());
    let mut nodes = 1usize;
    for (k, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        let mut z = vec![lo];
        for s in samples {
            z.extend(s.column(k).iter().map(|v| v.as_f64()).filter(|&v| v > lo && v < hi));
        }
        z.sort_by(f64::total_cmp);
        z.dedup();
        nodes = nodes.saturating_mul(z.len());
        if nodes > node_cap {
            return Ok(None);
        }
        lengths.push(cell_lengths(&z, lo, hi));
        axes.push(z.into_iter().map(T::of).collect());
    }
    let grid = EvalGrid::new(axes)?;
    // Row-major outer product of the per-axis lengths.
    let mut volumes = vec![1.0];
    for l in &lengths {
        volumes = volumes.iter().flat_map(|&v| l.iter().map(move |&x| v * x)).collect();
    }
    Ok(Some((grid, volumes)))
}

enum CellWeights {
    Uniform(f64),
    PerNode(Vec<f64>),
}

/// `(k1_hat, k2_hat) = (∫ω K1, c_S ∫ω K2)`.
pub fn k_hats<T: Real>(
    batch: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    weight: &WeightSpec,
    c_s: f64,
) -> Result<(f64, f64)> {
    let k = k_integrals(batch, coeffs, weight)?;
    Ok((k.k1, c_s * k.k2))
}

/// `(sqrt(c_epr k1) + sqrt(k2))^2`, the budget-scaled minimal loss.
pub fn gamma(k1: f64, k2: f64, c_epr: f64) -> f64 {
    ((c_epr * k1).sqrt() + k2.sqrt()).powi(2)
}

/// Estimated loss `L(z) = k1 / z + k2 / (B - c_epr z)` and its minimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub k1: f64,
    pub k2: f64,
    pub budget: f64,
    pub c_epr: f64,
    pub m_star: f64,
}

impl LossCurve {
    pub fn loss(&self, z: f64) -> f64 {
        self.k1 / z + self.k2 / (self.budget - self.c_epr * z)
    }

    pub fn gamma(&self) -> f64 {
        gamma(self.k1, self.k2, self.c_epr)
    }
}

/// Closed-form minimizer `B / (c_epr + sqrt(c_epr k2 / k1))`. If `k1 = 0`
/// it is clamped to `m_min`; if `k2 = 0`, to the largest `m` that still
/// affords one exploitation draw of cost `c_s`.
pub fn loss_and_mstar(k1: f64, k2: f64, budget: f64, c_epr: f64, c_s: f64, m_min: usize) -> Result<LossCurve> {
    if !(budget > 0.0 && c_epr > 0.0 && k1 >= 0.0 && k2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss needs B, c_epr > 0 and k1, k2 >= 0; got B={budget}, c_epr={c_epr}, k1={k1}, k2={k2}"
        )));
    }
    let m_star = match (k1 > 0.0, k2 > 0.0) {
        (false, false) => return Err(Error::DegenerateSubset),
        (false, true) => m_min as f64,
        (true, false) => ((budget - c_s) / c_epr).floor().max(m_min as f64),
        (true, true) => budget / (c_epr + (c_epr * k2 / k1).sqrt()),
    };
    Ok(LossCurve {
        k1,
        k2,
        budget,
        c_epr,
        m_star,
    })
}

/// `c_epr (k1 + k2 / c_S) / gamma`, the error of an ECDF with the same
/// budget relative to the optimal loss of `S`; never below 1/4.
pub fn relative_efficiency(k1: f64, k2: f64, c_epr: f64, c_s: f64) -> Result<f64> {
    let g = gamma(k1, k2, c_epr);
    if !(g > 0.0) {
        return Err(Error::InvalidArgument("relative efficiency undefined for gamma = 0".into()));
    }
    Ok(c_epr * (k1 + k2 / c_s) / g)
}

/// Estimated statistics of one subset after `m` exploration samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetEvaluation {
    pub subset: Subset,
    pub mask: u32,
    pub c_s: f64,
    pub k1_hat: f64,
    pub k2_hat: f64,
    /// `None` when both `k` estimates vanish.
    pub m_star_hat: Option<f64>,
    /// `L(m_star)`.
    pub min_loss: Option<f64>,
    /// `L(max(m, m_star))`, the selection criterion.
    pub loss: Option<f64>,
    pub rank: usize,
}

impl SubsetEvaluation {
    pub fn is_degenerate(&self) -> bool {
        self.loss.is_none()
    }
}

/// Fits the surrogate of `subset` and evaluates its loss estimates.
pub fn evaluate_subset<T: Real>(
    batch: &JointBatch<T>,
    descriptor: &EnsembleDescriptor,
    subset: &Subset,
    weight: &WeightSpec,
    budget: f64,
    rcond: Option<T>,
) -> Result<(SubsetEvaluation, SurrogateCoefficients<T>)> {
    let coeffs = fit_surrogate(batch, subset, rcond)?;
    let c_s = descriptor.subset_cost(subset);
    let (k1, k2) = k_hats(batch, &coeffs, weight, c_s)?;
    let m = batch.count();
    let (m_star, min_loss, loss) =
        match loss_and_mstar(k1, k2, budget, descriptor.c_epr, c_s, descriptor.min_exploration()) {
            Ok(c) => {
                let z = c.m_star.max(m as f64);
                (Some(c.m_star), Some(c.loss(c.m_star)), Some(c.loss(z)))
            }
            Err(Error::DegenerateSubset) => (None, None, None),
            Err(e) => return Err(e),
        };
    let eval = SubsetEvaluation {
        subset: subset.clone(),
        mask: subset.mask(),
        c_s,
        k1_hat: k1,
        k2_hat: k2,
        m_star_hat: m_star,
        min_loss,
        loss,
        rank: coeffs.rank,
    };
    Ok((eval, coeffs))
}

/// How `alpha` is set outside the support of the surrogate CDF.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AlphaMode {
    /// Zero outside the support.
    Plain,
    /// Constant tail values from the `tau` / `1 - tau` quantiles (`d = 1`).
    TailExtended { tau: f64 },
}

/// `alpha` at every grid node.
pub fn alpha_field<T: Real>(
    batch: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    mode: AlphaMode,
    field: &StatsField<T>,
) -> Result<ArrayD<T>> {
    let tails = match mode {
        AlphaMode::Plain => None,
        AlphaMode::TailExtended { tau } => Some(tail_alpha(batch, coeffs, tau)?),
    };
    Ok(field.map(|c| match tails {
        Some(t) if c.h == 0 => t.lower,
        Some(t) if c.h == c.m => t.upper,
        _ => c.alpha(),
    }))
}

/// Control-variate CDF `F_Y - alpha (F_H^epr - F_H^ept)` at every grid
/// node, unclipped and unsorted.
pub fn exploitation_cdf_raw<T: Real>(
    exploration: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    mode: AlphaMode,
    exploitation: &SubsetBatch<T>,
    grid: &EvalGrid<T>,
) -> Result<CdfEstimate<T>> {
    if exploitation.subset != coeffs.subset {
        return Err(Error::InvalidSubset(format!(
            "exploitation batch of {} with a surrogate of {}",
            exploitation.subset, coeffs.subset
        )));
    }
    if exploitation.count() == 0 {
        return Err(Error::EmptySample);
    }
    let field = StatsField::new(exploration, coeffs, grid)?;
    let alpha = alpha_field(exploration, coeffs, mode, &field)?;
    let h_ept = coeffs.predict_rows(exploitation.x.view())?;
    let counts_ept = ecdf_counts(h_ept.view(), grid)?;
    let n = T::of_usize(exploitation.count());
    let values = field.map(|c| {
        let s = c.stats::<T>();
        (s.f_y, s.f_h)
    });
    let mut out = ArrayD::zeros(values.raw_dim());
    Zip::from(&mut out)
        .and(&values)
        .and(&alpha)
        .and(&counts_ept)
        .for_each(|o, &(f_y, f_h), &a, &c| {
            *o = f_y - a * (f_h - T::of_usize(c as usize) / n);
        });
    CdfEstimate::new(grid.clone(), out)
}

/// [`exploitation_cdf_raw`] clipped to `[0, 1]`.
pub fn exploitation_cdf<T: Real>(
    exploration: &JointBatch<T>,
    coeffs: &SurrogateCoefficients<T>,
    mode: AlphaMode,
    exploitation: &SubsetBatch<T>,
    grid: &EvalGrid<T>,
) -> Result<CdfEstimate<T>> {
    Ok(exploitation_cdf_raw(exploration, coeffs, mode, exploitation, grid)?.clipped())
}

/// Monte Carlo ground truth for one subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSubsetStats {
    pub subset: Subset,
    pub mask: u32,
    pub c_s: f64,
    pub k1: f64,
    pub k2: f64,
    pub gamma: f64,
    pub m_star: f64,
    /// `gamma / B`, the loss at `m_star`.
    pub min_loss: f64,
    pub relative_efficiency: f64,
    /// Indicator correlation on `rho_grid` (row-major), if requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub n_samples: usize,
    pub budget: f64,
    pub c_epr: f64,
    pub subsets: Vec<OracleSubsetStats>,
    /// Subset with the smallest `gamma`.
    pub best: Subset,
    /// Correlations between `Y` components (rows) and all low-fidelity
    /// components (columns, models in index order).
    pub correlations: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<Vec<Vec<f64>>>,
}

impl OracleStats {
    pub fn get(&self, subset: &Subset) -> Option<&OracleSubsetStats> {
        self.subsets.iter().find(|s| &s.subset == subset)
    }
}

/// Oracle statistics from a large joint sample, with surrogates fitted on
/// that same sample.
pub fn oracle_stats_from_batch<T: Real>(
    batch: &JointBatch<T>,
    descriptor: &EnsembleDescriptor,
    weight: &WeightSpec,
    budget: f64,
    rho_grid: Option<&EvalGrid<T>>,
) -> Result<OracleStats> {
    let c_epr = descriptor.c_epr;
    let mut subsets = Vec::new();
    for (subset, c_s) in &descriptor.subset_costs {
        let coeffs = fit_surrogate(batch, subset, None)?;
        let (k1, k2) = k_hats(batch, &coeffs, weight, *c_s)?;
        let g = gamma(k1, k2, c_epr);
        let m_star = if k1 > 0.0 {
            budget / (c_epr + (c_epr * k2 / k1).sqrt())
        } else {
            0.0
        };
        let rho = match rho_grid {
            Some(grid) => {
                let field = StatsField::new(batch, &coeffs, grid)?;
                Some(field.map(|c| c.stats::<T>().rho().as_f64()).iter().cloned().collect())
            }
            None => None,
        };
        subsets.push(OracleSubsetStats {
            subset: subset.clone(),
            mask: subset.mask(),
            c_s: *c_s,
            k1,
            k2,
            gamma: g,
            m_star,
            min_loss: g / budget,
            relative_efficiency: relative_efficiency(k1, k2, c_epr, *c_s).unwrap_or(f64::NAN),
            rho,
        });
    }
    let best = subsets
        .iter()
        .min_by(|a, b| {
            a.gamma
                .total_cmp(&b.gamma)
                .then(a.c_s.total_cmp(&b.c_s))
                .then(a.subset.cmp(&b.subset))
        })
        .map(|s| s.subset.clone())
        .ok_or(Error::EmptySample)?;
    let corr = batch.correlations();
    Ok(OracleStats {
        n_samples: batch.count(),
        budget,
        c_epr,
        subsets,
        best,
        correlations: corr.rows().into_iter().map(|r| r.to_vec()).collect(),
        rho_grid: rho_grid.map(|g| g.axes().iter().map(|a| a.iter().map(|v| v.as_f64()).collect()).collect()),
    })
}

/// Samples `n` joint draws from `stream` and computes oracle statistics.
pub fn oracle_stats<T: Real>(
    ensemble: &Ensemble,
    weight: &WeightSpec,
    n: usize,
    budget: f64,
    rho_grid: Option<&EvalGrid<T>>,
    stream: SeedStream,
) -> Result<OracleStats> {
    let batch = ensemble.sampler(stream).sample_joint::<T>(n, stream)?;
    oracle_stats_from_batch(&batch, &ensemble.descriptor(), weight, budget, rho_grid)
}
