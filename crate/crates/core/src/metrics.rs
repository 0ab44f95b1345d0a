//! Error of an estimate against a reference CDF, and risk measures (mean,
//! standard deviation, quantiles, CVaR) of scalar CDFs.

use std::io::{Read, Write};

use ndarray::{Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use crate::cdf::{quantile, CdfEstimate, Cdf1D};
use crate::cv_estimator::{cell_lengths, Integration, WeightSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `∫ω |est - reference|^2`. For `d = 1` with exact integration the
/// integral is summed over the common refinement of both grids; otherwise
/// the midpoint rule on the weight rectangle is used.
pub fn weighted_l2_error<T: Real>(est: &CdfEstimate<T>, reference: &CdfEstimate<T>, weight: &WeightSpec) -> Result<f64> {
    if est.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            found: est.dim(),
        });
    }
    weight.validate(est.dim())?;
    let diff2 = |x: &[T]| {
        let d = est.eval(x).as_f64() - reference.eval(x).as_f64();
        d * d
    };
    match weight.integration {
        Integration::Exact => {
            let mut z: Vec<T> = est.grid().axis(0).iter().chain(reference.grid().axis(0)).cloned().collect();
            z.sort_by(|a, b| a.partial_cmp(b).expect("grid nodes are finite"));
            z.dedup();
            let (lo, hi) = weight.interval();
            let lengths = cell_lengths(&z, lo, hi);
            // Below the first node both CDFs vanish.
            Ok(z.iter()
                .zip(&lengths)
                .map(|(&zj, &len)| match diff2(&[zj]) {
                    d if d == 0.0 || len == 0.0 => 0.0,
                    d => d * len,
                })
                .sum())
        }
        Integration::Grid { .. } => {
            let (grid, volume) = weight.quadrature_grid::<T>()?;
            let mut acc = 0.0;
            for idx in ndarray::indices(grid.shape()) {
                acc += diff2(&grid.point(idx.slice()));
            }
            Ok(acc * volume)
        }
    }
}

/// `max |est(z) - f(z)|` over the nodes of the estimate's grid.
pub fn sup_error<T: Real, F: Fn(&[f64]) -> f64>(est: &CdfEstimate<T>, f: F) -> f64 {
    let grid = est.grid();
    ndarray::indices(grid.shape())
        .into_iter()
        .map(|idx| {
            let x: Vec<f64> = grid.point(idx.slice()).iter().map(|v| v.as_f64()).collect();
            (est.values()[IxDyn(idx.slice())].as_f64() - f(&x)).abs()
        })
        .fold(0.0, f64::max)
}

/// How the inverse of a step CDF is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InverseMode {
    /// Linear interpolation between consecutive `(value, jump)` pairs.
    #[default]
    Interpolated,
    /// The generalized inverse of the step function itself.
    Atoms,
}

/// `F^{-1}` is linear from `x0` to `x1` on `[p0, p1]`.
#[derive(Clone, Copy, Debug)]
struct Piece {
    p0: f64,
    p1: f64,
    x0: f64,
    x1: f64,
}

impl Piece {
    fn at(&self, p: f64) -> f64 {
        if self.p1 == self.p0 {
            self.x0
        } else {
            self.x0 + (p - self.p0) / (self.p1 - self.p0) * (self.x1 - self.x0)
        }
    }

    /// Restriction to `[a, 1]`, if nonempty.
    fn above(&self, a: f64) -> Option<Piece> {
        (self.p1 > a).then(|| {
            let p0 = self.p0.max(a);
            Piece {
                p0,
                x0: self.at(p0),
                ..*self
            }
        })
    }

    fn integral(&self) -> f64 {
        (self.p1 - self.p0) * (self.x0 + self.x1) / 2.0
    }

    fn centered_square_integral(&self, mu: f64) -> f64 {
        let (u, v) = (self.x0 - mu, self.x1 - mu);
        (self.p1 - self.p0) * (u * u + u * v + v * v) / 3.0
    }
}

const PROPER_TOL: f64 = 1e-9;

fn inverse_pieces<T: Real>(cdf: &Cdf1D<T>, mode: InverseMode) -> Result<Vec<Piece>> {
    let z: Vec<f64> = cdf.jumps().iter().map(|v| v.as_f64()).collect();
    let v: Vec<f64> = cdf.values().iter().map(|v| v.as_f64()).collect();
    let last = *v.last().expect("nonempty by construction");
    if (last - 1.0).abs() > PROPER_TOL {
        return Err(Error::InvalidArgument(format!(
            "CDF reaches {last} instead of 1 on its grid; support is unbounded"
        )));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("CDF jump locations"));
    }
    let mut pieces = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let p0 = if j == 0 { 0.0 } else { v[j - 1] };
        let p1 = if j + 1 == z.len() { 1.0 } else { v[j] };
        if p1 <= p0 {
            continue;
        }
        let x0 = match mode {
            InverseMode::Interpolated if j > 0 => z[j - 1],
            _ => z[j],
        };
        pieces.push(Piece { p0, p1, x0, x1: z[j] });
    }
    Ok(pieces)
}

/// Upper-tail conditional value at risk `(1/(1-a)) ∫_a^1 F^{-1}(p) dp`
/// with the interpolated inverse.
pub fn cvar<T: Real>(cdf: &Cdf1D<T>, a: f64) -> Result<f64> {
    cvar_with(cdf, a, InverseMode::Interpolated)
}

pub fn cvar_with<T: Real>(cdf: &Cdf1D<T>, a: f64, mode: InverseMode) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidArgument(format!("CVaR level must lie in (0, 1), got {a}")));
    }
    let total: f64 = inverse_pieces(cdf, mode)?
        .iter()
        .filter_map(|p| p.above(a))
        .map(|p| p.integral())
        .sum();
    Ok(total / (1.0 - a))
}

/// Mean and standard deviation of `F^{-1}(U)`, `U` uniform on `(0, 1)`,
/// with the interpolated inverse.
pub fn mean_std_from_cdf<T: Real>(cdf: &Cdf1D<T>) -> Result<(f64, f64)> {
    mean_std_with(cdf, InverseMode::Interpolated)
}

pub fn mean_std_with<T: Real>(cdf: &Cdf1D<T>, mode: InverseMode) -> Result<(f64, f64)> {
    let pieces = inverse_pieces(cdf, mode)?;
    let mean: f64 = pieces.iter().map(Piece::integral).sum();
    let var: f64 = pieces.iter().map(|p| p.centered_square_integral(mean)).sum();
    Ok((mean, var.max(0.0).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelValue {
    pub level: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub mean: f64,
    pub std: f64,
    pub cvar: Vec<LevelValue>,
    pub quantiles: Vec<LevelValue>,
}

pub fn risk_report<T: Real>(cdf: &Cdf1D<T>, cvar_levels: &[f64], quantile_levels: &[f64]) -> Result<RiskReport> {
    let (mean, std) = mean_std_from_cdf(cdf)?;
    let cvar = cvar_levels
        .iter()
        .map(|&a| Ok(LevelValue { level: a, value: cvar(cdf, a)? }))
        .collect::<Result<_>>()?;
    let quantiles = quantile_levels
        .iter()
        .map(|&p| {
            Ok(LevelValue {
                level: p,
                value: quantile(cdf, T::of(p))?.as_f64(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(RiskReport {
        mean,
        std,
        cvar,
        quantiles,
    })
}

/// One row of the long-format risk table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub label: String,
    pub metric: String,
    pub level: Option<f64>,
    pub value: f64,
}

impl RiskReport {
    pub fn rows(&self, label: &str) -> Vec<RiskRow> {
        let row = |metric: &str, level, value| RiskRow {
            label: label.to_string(),
            metric: metric.to_string(),
            level,
            value,
        };
        let mut out = vec![row("mean", None, self.mean), row("std", None, self.std)];
        out.extend(self.cvar.iter().map(|c| row("cvar", Some(c.level), c.value)));
        out.extend(self.quantiles.iter().map(|q| row("quantile", Some(q.level), q.value)));
        out
    }
}

/// Writes `label,metric,level,value` rows for a set of labelled reports.
pub fn write_risk_csv<W: Write>(out: W, reports: &[(String, RiskReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (label, r) in reports {
        for row in r.rows(label) {
            w.serialize(row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_risk_csv<R: Read>(input: R) -> Result<Vec<RiskRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
