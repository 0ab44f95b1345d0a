//! Piecewise-constant multivariate CDFs on tensor-product grids.
//!
//! A [`CdfEstimate`] stores `F(z)` at every node `z` of an [`EvalGrid`] and
//! is extended as a right-continuous step function: `F(x)` is the value at
//! the largest node below `x` componentwise, and `0` if `x` lies below the
//! first node in any coordinate.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, ArrayView2, Axis, Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-dimension strictly increasing breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>", bound = "T: Real")]
pub struct EvalGrid<T> {
    axes: Vec<Vec<T>>,
}

impl<T: Real> TryFrom<Vec<Vec<T>>> for EvalGrid<T> {
    type Error = Error;
    fn try_from(axes: Vec<Vec<T>>) -> Result<Self> {
        EvalGrid::new(axes)
    }
}

impl<T> From<EvalGrid<T>> for Vec<Vec<T>> {
    fn from(g: EvalGrid<T>) -> Self {
        g.axes
    }
}

impl<T: Real> EvalGrid<T> {
    pub fn new(axes: Vec<Vec<T>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one dimension".into()));
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::InvalidArgument(format!("grid axis {k} is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("grid breakpoints"));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "grid axis {k} is not strictly increasing"
                )));
            }
        }
        Ok(EvalGrid { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<T>] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &[T] {
        &self.axes[k]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node coordinates for a multi-index.
    pub fn point(&self, index: &[usize]) -> Vec<T> {
        index.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect()
    }

    /// Multi-index of the largest node `<= x`, or `None` below the grid.
    pub fn locate(&self, x: &[T]) -> Option<Vec<usize>> {
        x.iter()
            .zip(&self.axes)
            .map(|(v, a)| a.partition_point(|z| z <= v).checked_sub(1))
            .collect()
    }
}

/// How a run chooses its evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GridSpec {
    /// Sorted unique sample values per dimension (the exact partition in 1-D).
    SampleDriven,
    /// `resolution[k] >= 2` equispaced points including both endpoints.
    Uniform {
        lower: Vec<f64>,
        upper: Vec<f64>,
        resolution: Vec<usize>,
    },
    /// Midpoints of `resolution[k]` equal cells.
    Midpoints {
        lower: Vec<f64>,
        upper: Vec<f64>,
        resolution: Vec<usize>,
    },
}

fn check_domain(lower: &[f64], upper: &[f64], resolution: &[usize], min_res: usize) -> Result<()> {
    if lower.len() != upper.len() || lower.len() != resolution.len() || lower.is_empty() {
        return Err(Error::InvalidArgument(
            "grid bounds and resolution must have one entry per dimension".into(),
        ));
    }
    for k in 0..lower.len() {
        if !(lower[k].is_finite() && upper[k].is_finite() && lower[k] < upper[k]) {
            return Err(Error::InvalidArgument(format!(
                "empty grid domain [{}, {}] in dimension {k}",
                lower[k], upper[k]
            )));
        }
        if resolution[k] < min_res {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be at least {min_res}, got {}",
                resolution[k]
            )));
        }
    }
    Ok(())
}

/// Builds a grid. `samples` (rows are points) is only read in
/// sample-driven mode, where every column contributes its unique values.
pub fn build_grid<T: Real>(spec: &GridSpec, samples: &[ArrayView2<'_, T>]) -> Result<EvalGrid<T>> {
    match spec {
        GridSpec::SampleDriven => {
            let d = samples.first().map(|s| s.ncols()).ok_or(Error::EmptySample)?;
            let mut axes = vec![Vec::new(); d];
            for block in samples {
                if block.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: block.ncols(),
                    });
                }
                for row in block.rows() {
                    for (axis, &v) in axes.iter_mut().zip(row) {
                        axis.push(v);
                    }
                }
            }
            for axis in axes.iter_mut() {
                if axis.is_empty() {
                    return Err(Error::EmptySample);
                }
                axis.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                axis.dedup();
            }
            EvalGrid::new(axes)
        }
        GridSpec::Uniform {
            lower,
            upper,
            resolution,
        } => {
            check_domain(lower, upper, resolution, 2)?;
            let axes = (0..lower.len())
                .map(|k| {
                    let n = resolution[k];
                    let h = (upper[k] - lower[k]) / (n - 1) as f64;
                    (0..n)
                        .map(|j| T::of(if j + 1 == n { upper[k] } else { lower[k] + j as f64 * h }))
                        .collect()
                })
                .collect();
            EvalGrid::new(axes)
        }
        GridSpec::Midpoints {
            lower,
            upper,
            resolution,
        } => {
            check_domain(lower, upper, resolution, 1)?;
            let axes = (0..lower.len())
                .map(|k| {
                    let h = (upper[k] - lower[k]) / resolution[k] as f64;
                    (0..resolution[k])
                        .map(|j| T::of(lower[k] + (j as f64 + 0.5) * h))
                        .collect()
                })
                .collect();
            EvalGrid::new(axes)
        }
    }
}

/// CDF values on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CdfRepr<T>", into = "CdfRepr<T>", bound = "T: Real")]
pub struct CdfEstimate<T> {
    grid: EvalGrid<T>,
    values: ArrayD<T>,
    /// Set once the tensor has been repaired or verified monotone.
    pub monotone: bool,
}

#[derive(Serialize, Deserialize)]
struct CdfRepr<T> {
    axes: Vec<Vec<T>>,
    /// Row-major (last axis fastest).
    values: Vec<T>,
    monotone: bool,
}

impl<T: Real> From<CdfEstimate<T>> for CdfRepr<T> {
    fn from(c: CdfEstimate<T>) -> Self {
        CdfRepr {
            values: c.values.iter().cloned().collect(),
            axes: c.grid.axes,
            monotone: c.monotone,
        }
    }
}

impl<T: Real> TryFrom<CdfRepr<T>> for CdfEstimate<T> {
    type Error = Error;
    fn try_from(r: CdfRepr<T>) -> Result<Self> {
        let grid = EvalGrid::new(r.axes)?;
        let values = ArrayD::from_shape_vec(IxDyn(&grid.shape()), r.values).map_err(|_| {
            Error::InvalidArgument("CDF value count does not match the grid".into())
        })?;
        let mut c = CdfEstimate::new(grid, values)?;
        c.monotone = r.monotone;
        Ok(c)
    }
}

impl<T: Real> CdfEstimate<T> {
    pub fn new(grid: EvalGrid<T>, values: ArrayD<T>) -> Result<Self> {
        if values.shape() != grid.shape().as_slice() {
            return Err(Error::InvalidArgument(format!(
                "values of shape {:?} on a grid of shape {:?}",
                values.shape(),
                grid.shape()
            )));
        }
        Ok(CdfEstimate {
            grid,
            values,
            monotone: false,
        })
    }

    pub fn grid(&self) -> &EvalGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &ArrayD<T> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Step-function evaluation at an arbitrary point.
    pub fn eval(&self, x: &[T]) -> T {
        match self.grid.locate(x) {
            Some(idx) => self.values[IxDyn(&idx)],
            None => T::zero(),
        }
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clipped(&self) -> Self {
        CdfEstimate {
            grid: self.grid.clone(),
            values: self.values.mapv(|v| v.max(T::zero()).min(T::one())),
            monotone: self.monotone,
        }
    }

    /// Nondecreasing along every axis (checked, not the flag).
    pub fn is_monotone(&self) -> bool {
        (0..self.dim()).all(|a| {
            self.values
                .lanes(Axis(a))
                .into_iter()
                .all(|lane| lane.windows(2).into_iter().all(|w| w[0] <= w[1]))
        })
    }

    /// Monotonicity repair with the default (ascending) axis order.
    pub fn sorted(&self) -> Self {
        alternating_sort(self).0
    }

    /// CSV with columns `z_1..z_d,value`, one row per node, row-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("z_{k}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (idx, v) in self.values.indexed_iter() {
            let mut rec: Vec<String> = self.grid.point(idx.slice()).iter().map(|z| z.to_string()).collect();
            rec.push(v.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
        Ok(())
    }

    /// Inverse of [`CdfEstimate::write_csv`]; the monotone flag is re-derived.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let d = r.headers()?.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::InvalidArgument("CDF csv needs coordinate and value columns".into())
        })?;
        let mut coords: Vec<Vec<T>> = vec![Vec::new(); d];
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<T> {
                s.trim()
                    .parse::<f64>()
                    .map(T::of)
                    .map_err(|_| Error::InvalidArgument(format!("bad number {s:?} in CDF csv")))
            };
            for (k, c) in coords.iter_mut().enumerate() {
                c.push(parse(&rec[k])?);
            }
            values.push(parse(&rec[d])?);
        }
        let axes = coords
            .into_iter()
            .map(|mut c| {
                c.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                c.dedup();
                c
            })
            .collect();
        let grid = EvalGrid::new(axes)?;
        let values = ArrayD::from_shape_vec(IxDyn(&grid.shape()), values)
            .map_err(|_| Error::InvalidArgument("CDF csv is not a full tensor grid".into()))?;
        let mut c = CdfEstimate::new(grid, values)?;
        c.monotone = c.is_monotone();
        Ok(c)
    }
}

/// Fraction of rows of `samples` that are componentwise `<= x`.
pub fn ecdf_eval<T: Real>(samples: ArrayView2<'_, T>, x: &[T]) -> Result<T> {
    if samples.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    if samples.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.ncols(),
            found: x.len(),
        });
    }
    let hits = samples
        .rows()
        .into_iter()
        .filter(|r| r.iter().zip(x).all(|(a, b)| a <= b))
        .count();
    Ok(T::of_usize(hits) / T::of_usize(samples.nrows()))
}

/// Number of rows `<= z` at every grid node, by binning each row into its
/// first dominating node and taking cumulative sums along every axis.
pub fn ecdf_counts<T: Real>(samples: ArrayView2<'_, T>, grid: &EvalGrid<T>) -> Result<ArrayD<u64>> {
    if samples.ncols() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: samples.ncols(),
        });
    }
    let mut counts = ArrayD::<u64>::zeros(IxDyn(&grid.shape()));
    let mut idx = vec![0usize; grid.dim()];
    'rows: for row in samples.rows() {
        for (k, &v) in row.iter().enumerate() {
            let axis = grid.axis(k);
            let j = axis.partition_point(|z| *z < v);
            if j == axis.len() {
                continue 'rows;
            }
            idx[k] = j;
        }
        counts[IxDyn(&idx)] += 1;
    }
    for a in 0..grid.dim() {
        counts.accumulate_axis_inplace(Axis(a), |&prev, cur| *cur += prev);
    }
    Ok(counts)
}

/// Empirical CDF of `samples` at every grid node.
pub fn ecdf_on_grid<T: Real>(samples: ArrayView2<'_, T>, grid: &EvalGrid<T>) -> Result<CdfEstimate<T>> {
    let m = samples.nrows();
    if m == 0 {
        return Err(Error::EmptySample);
    }
    let counts = ecdf_counts(samples, grid)?;
    let denom = T::of_usize(m);
    let mut est = CdfEstimate::new(grid.clone(), counts.mapv(|c| T::of_usize(c as usize) / denom))?;
    est.monotone = true;
    Ok(est)
}

/// Sorts every lane along each axis in `order`, repeating full sweeps
/// until one changes nothing. Returns the number of sweeps, including the
/// final unchanged one. Sorting is stable and moves values without
/// arithmetic, so the multiset of entries is preserved bitwise.
pub fn alternating_sort_in_place<T: Real>(values: &mut ArrayD<T>, order: &[usize]) -> usize {
    let mut sweeps = 0;
    let mut buf: Vec<T> = Vec::new();
    loop {
        sweeps += 1;
        let mut changed = false;
        for &a in order {
            for mut lane in values.lanes_mut(Axis(a)) {
                if lane.windows(2).into_iter().all(|w| w[0] <= w[1]) {
                    continue;
                }
                buf.clear();
                buf.extend(lane.iter().cloned());
                buf.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
                for (dst, &src) in lane.iter_mut().zip(&buf) {
                    *dst = src;
                }
                changed = true;
            }
        }
        if !changed {
            return sweeps;
        }
    }
}

/// Monotonicity repair with an explicit axis order; `order` must be a
/// permutation of `0..d`.
pub fn alternating_sort_with_order<T: Real>(est: &CdfEstimate<T>, order: &[usize]) -> Result<(CdfEstimate<T>, usize)> {
    let mut seen = vec![false; est.dim()];
    for &a in order {
        if a >= est.dim() || std::mem::replace(&mut seen[a], true) {
            return Err(Error::InvalidArgument(format!("{order:?} is not an axis permutation")));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument(format!("{order:?} is not an axis permutation")));
    }
    if est.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CDF tensor"));
    }
    let mut out = est.clone();
    let sweeps = alternating_sort_in_place(&mut out.values, order);
    out.monotone = true;
    Ok((out, sweeps))
}

/// Monotonicity repair sweeping axes `0, 1, .., d-1`.
pub fn alternating_sort<T: Real>(est: &CdfEstimate<T>) -> (CdfEstimate<T>, usize) {
    let order: Vec<usize> = (0..est.dim()).collect();
    let mut out = est.clone();
    let sweeps = alternating_sort_in_place(&mut out.values, &order);
    out.monotone = true;
    (out, sweeps)
}

/// One-dimensional right-continuous step CDF: value `values[j]` on
/// `[jumps[j], jumps[j+1])`, zero below `jumps[0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cdf1D<T> {
    jumps: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> Cdf1D<T> {
    pub fn new(jumps: Vec<T>, values: Vec<T>) -> Result<Self> {
        if jumps.is_empty() || jumps.len() != values.len() {
            return Err(Error::InvalidArgument(
                "a 1-D CDF needs equally many (nonzero) jumps and values".into(),
            ));
        }
        if jumps.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("jump locations must be strictly increasing".into()));
        }
        let bad_range = values.iter().any(|v| !(*v >= T::zero() && *v <= T::one()));
        if bad_range || values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(
                "CDF values must be nondecreasing within [0, 1]".into(),
            ));
        }
        Ok(Cdf1D { jumps, values })
    }

    /// Empirical CDF of scalar samples.
    pub fn from_samples(samples: &[T]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let m = T::of_usize(sorted.len());
        let mut jumps: Vec<T> = Vec::new();
        let mut values = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            if jumps.last() == Some(&v) {
                *values.last_mut().unwrap() = T::of_usize(i + 1) / m;
            } else {
                jumps.push(v);
                values.push(T::of_usize(i + 1) / m);
            }
        }
        Cdf1D::new(jumps, values)
    }

    /// View of a monotone 1-D estimate (clipped to `[0, 1]`).
    pub fn from_estimate(est: &CdfEstimate<T>) -> Result<Self> {
        if est.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: est.dim(),
            });
        }
        let c = est.clipped();
        Cdf1D::new(c.grid.axis(0).to_vec(), c.values.iter().cloned().collect())
    }

    pub fn jumps(&self) -> &[T] {
        &self.jumps
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn eval(&self, x: T) -> T {
        match self.jumps.partition_point(|z| *z <= x) {
            0 => T::zero(),
            j => self.values[j - 1],
        }
    }
}

/// Inverse CDF by linear interpolation between consecutive
/// `(value, jump)` pairs; below the first value the first jump is returned.
pub fn quantile<T: Real>(cdf: &Cdf1D<T>, p: T) -> Result<T> {
    let last = *cdf.values.last().expect("nonempty by construction");
    if !(p > T::zero() && p <= last) {
        return Err(Error::InvalidArgument(format!(
            "quantile level {p} outside the attained range (0, {last}]"
        )));
    }
    let j = cdf.values.partition_point(|v| *v < p);
    if j == 0 {
        return Ok(cdf.jumps[0]);
    }
    let (v0, v1) = (cdf.values[j - 1], cdf.values[j]);
    let (z0, z1) = (cdf.jumps[j - 1], cdf.jumps[j]);
    Ok(z0 + (p - v0) / (v1 - v0) * (z1 - z0))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2, Dimension};
    use proptest::prelude::*;

    use super::*;

    fn grid1(z: &[f64]) -> EvalGrid<f64> {
        EvalGrid::new(vec![z.to_vec()]).unwrap()
    }

    fn tensor(rows: &[[f64; 3]; 3]) -> CdfEstimate<f64> {
        let g = EvalGrid::new(vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let v = Array2::from_shape_fn((3, 3), |(i, j)| rows[i][j]).into_dyn();
        CdfEstimate::new(g, v).unwrap()
    }

    #[test]
    fn ecdf_eval_examples() {
        let s = array![[1.0], [2.0], [3.0]];
        assert_abs_diff_eq!(ecdf_eval(s.view(), &[2.0]).unwrap(), 2.0 / 3.0);
        assert_eq!(ecdf_eval(s.view(), &[0.5]).unwrap(), 0.0);
        assert_eq!(ecdf_eval(s.view(), &[9.0]).unwrap(), 1.0);
        let s2 = array![[0.0, 0.0], [1.0, 1.0]];
        assert_eq!(ecdf_eval(s2.view(), &[1.0, 0.0]).unwrap(), 0.5);
        let empty = Array2::<f64>::zeros((0, 1));
        assert!(matches!(ecdf_eval(empty.view(), &[0.0]), Err(Error::EmptySample)));
    }

    #[test]
    fn ecdf_on_grid_matches_direct_count() {
        let s = array![[0.1, 2.0], [0.4, 1.0], [0.4, 3.0], [0.9, 0.5], [2.0, 2.0]];
        let g = EvalGrid::new(vec![vec![0.0, 0.4, 1.0], vec![1.0, 2.0, 2.5]]).unwrap();
        let est = ecdf_on_grid(s.view(), &g).unwrap();
        for (idx, v) in est.values().indexed_iter() {
            let x = g.point(idx.slice());
            assert_eq!(*v, ecdf_eval(s.view(), &x).unwrap(), "{x:?}");
        }
    }

    #[test]
    fn three_by_three_example_both_orders() {
        let input = tensor(&[[0.7, 0.4, 0.0], [0.3, 0.5, 0.2], [1.0, 0.8, 0.6]]);
        let (col_first, _) = alternating_sort_with_order(&input, &[0, 1]).unwrap();
        let (row_first, _) = alternating_sort_with_order(&input, &[1, 0]).unwrap();
        assert_eq!(
            col_first.values(),
            &array![[0.0, 0.3, 0.4], [0.2, 0.5, 0.7], [0.6, 0.8, 1.0]].into_dyn()
        );
        assert_eq!(
            row_first.values(),
            &array![[0.0, 0.3, 0.5], [0.2, 0.4, 0.7], [0.6, 0.8, 1.0]].into_dyn()
        );
        assert_eq!(alternating_sort(&input).0, col_first);
    }

    #[test]
    fn monotone_tensor_takes_one_sweep() {
        let t = tensor(&[[0.0, 0.1, 0.2], [0.1, 0.3, 0.4], [0.5, 0.6, 1.0]]);
        let (out, sweeps) = alternating_sort(&t);
        assert_eq!(sweeps, 1);
        assert_eq!(out.values(), t.values());
        assert!(out.monotone);
    }

    #[test]
    fn bad_axis_orders_are_rejected() {
        let t = tensor(&[[0.0; 3]; 3]);
        assert!(alternating_sort_with_order(&t, &[0]).is_err());
        assert!(alternating_sort_with_order(&t, &[0, 0]).is_err());
        assert!(alternating_sort_with_order(&t, &[0, 2]).is_err());
    }

    #[test]
    fn step_evaluation_is_right_continuous() {
        let est = CdfEstimate::new(grid1(&[1.0, 2.0]), array![0.25, 1.0].into_dyn()).unwrap();
        assert_eq!(est.eval(&[0.999]), 0.0);
        assert_eq!(est.eval(&[1.0]), 0.25);
        assert_eq!(est.eval(&[1.999]), 0.25);
        assert_eq!(est.eval(&[2.0]), 1.0);
        assert_eq!(est.eval(&[1e9]), 1.0);
    }

    #[test]
    fn quantile_examples() {
        let c = Cdf1D::from_samples(&[0.0, 1.0]).unwrap();
        assert_eq!(c.values(), &[0.5, 1.0]);
        assert_abs_diff_eq!(quantile(&c, 0.75).unwrap(), 0.5);
        assert_eq!(quantile(&c, 0.3).unwrap(), 0.0);
        let atom = Cdf1D::new(vec![5.0], vec![1.0]).unwrap();
        for p in [0.01, 0.5, 1.0] {
            assert_eq!(quantile(&atom, p).unwrap(), 5.0);
        }
        let z: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let uniform = Cdf1D::new(z.clone(), z).unwrap();
        assert_abs_diff_eq!(quantile(&uniform, 0.3).unwrap(), 0.3, epsilon = 1e-12);
        let partial = Cdf1D::new(vec![0.0, 1.0], vec![0.2, 0.6]).unwrap();
        assert!(quantile(&partial, 0.7).is_err());
        assert!(quantile(&partial, 0.0).is_err());
    }

    #[test]
    fn build_grid_examples() {
        let s = array![[3.0], [1.0], [2.0], [2.0]];
        let g = build_grid(&GridSpec::SampleDriven, &[s.view()]).unwrap();
        assert_eq!(g.axes(), &[vec![1.0, 2.0, 3.0]]);
        let spec = GridSpec::Uniform {
            lower: vec![0.5, 1.0],
            upper: vec![1.0, 3.0],
            resolution: vec![4, 4],
        };
        let g: EvalGrid<f64> = build_grid(&spec, &[]).unwrap();
        assert_eq!(g.shape(), vec![4, 4]);
        assert_eq!(g.point(&[0, 0]), vec![0.5, 1.0]);
        assert_eq!(g.point(&[3, 3]), vec![1.0, 3.0]);
        let two = GridSpec::Uniform {
            lower: vec![0.0],
            upper: vec![1.0],
            resolution: vec![2],
        };
        assert_eq!(build_grid::<f64>(&two, &[]).unwrap().axes(), &[vec![0.0, 1.0]]);
        let empty = GridSpec::Uniform {
            lower: vec![1.0],
            upper: vec![1.0],
            resolution: vec![3],
        };
        assert!(build_grid::<f64>(&empty, &[]).is_err());
        let mid = GridSpec::Midpoints {
            lower: vec![0.0],
            upper: vec![1.0],
            resolution: vec![4],
        };
        assert_eq!(build_grid::<f64>(&mid, &[]).unwrap().axes(), &[vec![0.125, 0.375, 0.625, 0.875]]);
    }

    #[test]
    fn serialization_round_trips() {
        let t = tensor(&[[0.7, 0.4, 0.0], [0.3, 0.5, 0.2], [1.0, 0.8, 1.0 / 3.0]]);
        let json = serde_json::to_string(&t).unwrap();
        let back: CdfEstimate<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("z_1,z_2,value\n0,0,0.7\n0,1,0.4\n"));
        let from_csv = CdfEstimate::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(from_csv.values(), t.values());
        assert_eq!(from_csv.grid(), t.grid());
    }

    fn arb_tensor(max_side: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1..=max_side, 1..=max_side).prop_flat_map(|(r, c)| {
            let vals = prop::collection::vec(prop_oneof![(0u8..5).prop_map(|k| k as f64 / 4.0), -0.2f64..1.2], r * c);
            (Just(r), Just(c), vals)
        })
    }

    fn make(r: usize, c: usize, v: Vec<f64>) -> CdfEstimate<f64> {
        let g = EvalGrid::new(vec![(0..r).map(|i| i as f64).collect(), (0..c).map(|i| i as f64).collect()]).unwrap();
        CdfEstimate::new(g, ArrayD::from_shape_vec(IxDyn(&[r, c]), v).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn sort_preserves_multiset_and_is_idempotent((r, c, v) in arb_tensor(8)) {
            let t = make(r, c, v);
            let (once, _) = alternating_sort(&t);
            let bits = |e: &CdfEstimate<f64>| {
                let mut b: Vec<u64> = e.values().iter().map(|x| x.to_bits()).collect();
                b.sort_unstable();
                b
            };
            prop_assert_eq!(bits(&once), bits(&t));
            prop_assert!(once.is_monotone());
            let (twice, sweeps) = alternating_sort(&once);
            prop_assert_eq!(twice.values(), once.values());
            prop_assert_eq!(sweeps, 1);
        }

        #[test]
        fn one_dimensional_sort_is_plain_sort(v in prop::collection::vec(-1.0f64..2.0, 1..40)) {
            let g = EvalGrid::new(vec![(0..v.len()).map(|i| i as f64).collect()]).unwrap();
            let t = CdfEstimate::new(g, ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.clone()).unwrap()).unwrap();
            let mut expect = v;
            expect.sort_by(f64::total_cmp);
            let (out, _) = alternating_sort(&t);
            prop_assert_eq!(out.values().iter().cloned().collect::<Vec<_>>(), expect);
        }

        #[test]
        fn sort_terminates_well_under_entry_count(v in prop::collection::vec(0.0f64..1.0, 400)) {
            let t = make(20, 20, v);
            let (out, sweeps) = alternating_sort(&t);
            prop_assert!(out.is_monotone());
            prop_assert!(sweeps <= 40, "{} sweeps", sweeps);
        }

        #[test]
        fn ecdf_is_monotone_and_right_continuous(
            s in prop::collection::vec(-5i32..5, 1..30),
            x in -6i32..6,
        ) {
            let samples = Array2::from_shape_fn((s.len(), 1), |(i, _)| s[i] as f64);
            let at = ecdf_eval(samples.view(), &[x as f64]).unwrap();
            let next = ecdf_eval(samples.view(), &[x as f64 + 1.0]).unwrap();
            let just_after = ecdf_eval(samples.view(), &[x as f64 + 1e-9]).unwrap();
            prop_assert!(at <= next);
            prop_assert_eq!(at, just_after);
        }
    }
}
