//! Least-squares linear predictors `H_S = B^T (1, X_S)` of the
//! high-fidelity output from a subset of low-fidelity outputs.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::ensemble::JointBatch;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::subset::Subset;

/// Fitted coefficients. Row 0 of `matrix` holds the intercepts; row `k`
/// the weights of the `k`-th column of `X_S`. Column `i` predicts `Y^(i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    into = "CoefficientsRepr<T>",
    try_from = "CoefficientsRepr<T>",
    bound = "T: Real"
)]
pub struct SurrogateCoefficients<T> {
    pub subset: Subset,
    pub matrix: Array2<T>,
    pub rank: usize,
}

#[derive(Serialize, Deserialize)]
struct CoefficientsRepr<T> {
    subset: Subset,
    rank: usize,
    rows: Vec<Vec<T>>,
}

impl<T: Real> From<SurrogateCoefficients<T>> for CoefficientsRepr<T> {
    fn from(c: SurrogateCoefficients<T>) -> Self {
        CoefficientsRepr {
            subset: c.subset,
            rank: c.rank,
            rows: c.matrix.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl<T: Real> TryFrom<CoefficientsRepr<T>> for SurrogateCoefficients<T> {
    type Error = Error;

    fn try_from(r: CoefficientsRepr<T>) -> Result<Self> {
        let cols = r.rows.first().map_or(0, |row| row.len());
        if r.rows.iter().any(|row| row.len() != cols) {
            return Err(Error::InvalidArgument("ragged coefficient rows".into()));
        }
        let flat: Vec<T> = r.rows.into_iter().flatten().collect();
        let matrix = Array2::from_shape_vec((flat.len() / cols.max(1), cols), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut c = SurrogateCoefficients::new(r.subset, matrix)?;
        c.rank = r.rank;
        Ok(c)
    }
}

impl<T: Real> SurrogateCoefficients<T> {
    /// Wraps a hand-built `(d_S + 1) x d` matrix; `rank` is set to its row count.
    pub fn new(subset: Subset, matrix: Array2<T>) -> Result<Self> {
        if matrix.nrows() < 2 || matrix.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "coefficient matrix must be at least 2 x 1, got {:?}",
                matrix.dim()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("surrogate coefficients"));
        }
        let rank = matrix.nrows();
        Ok(SurrogateCoefficients { subset, matrix, rank })
    }

    /// `d_S`.
    pub fn input_dim(&self) -> usize {
        self.matrix.nrows() - 1
    }

    /// `d`.
    pub fn output_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// `B^T (1, x_S)`.
    pub fn apply(&self, x_s: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if x_s.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x_s.len(),
            });
        }
        Ok(self.matrix.slice(s![1.., ..]).t().dot(&x_s) + self.matrix.row(0))
    }

    /// Row-wise predictions for an `N x d_S` matrix.
    pub fn predict_rows(&self, x_s: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x_s.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x_s.ncols(),
            });
        }
        Ok(x_s.dot(&self.matrix.slice(s![1.., ..])) + self.matrix.row(0))
    }

    /// Predictions on the rows of an exploration batch.
    pub fn predict_batch(&self, batch: &JointBatch<T>) -> Result<Array2<T>> {
        self.predict_rows(batch.x_subset(&self.subset)?.view())
    }
}

/// `[1, X]` design matrix.
pub fn design_matrix<T: Real>(x: ArrayView2<'_, T>) -> Array2<T> {
    let ones = Array2::from_elem((x.nrows(), 1), T::one());
    concatenate(Axis(1), &[ones.view(), x]).expect("row counts agree")
}

/// Fits `H_S` on an exploration batch by minimum-norm least squares.
/// `rcond` overrides the default relative singular-value cutoff
/// `max(m, d_S + 1) * eps`.
pub fn fit_surrogate<T: Real>(
    batch: &JointBatch<T>,
    subset: &Subset,
    rcond: Option<T>,
) -> Result<SurrogateCoefficients<T>> {
    let x = batch.x_subset(subset)?;
    let required = x.ncols() + 2;
    if batch.count() < required {
        return Err(Error::BatchTooSmall {
            required,
            found: batch.count(),
        });
    }
    if x.iter().chain(batch.y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("exploration batch"));
    }
    let design = design_matrix(x.view());
    let fit = T::lstsq(design.view(), batch.y.view(), rcond);
    if fit.solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("surrogate coefficients"));
    }
    Ok(SurrogateCoefficients {
        subset: subset.clone(),
        matrix: fit.solution,
        rank: fit.rank,
    })
}
