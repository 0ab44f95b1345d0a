//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All estimators are written against [`Real`], which is implemented for
//! `f32` and `f64`. Dense linear algebra is delegated to `nalgebra` through
//! the concrete implementations, so generic code only ever sees
//! `num_traits::Float` arithmetic.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Result of a minimum-norm least-squares solve.
#[derive(Clone, Debug)]
pub struct LstsqSolution<T> {
    /// `p x k` solution, one column per right-hand side.
    pub solution: Array2<T>,
    /// Number of singular values above the cutoff.
    pub rank: usize,
}

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Minimum-norm solution of `design * X ~= rhs` through an SVD
    /// pseudoinverse. Singular values at or below
    /// `rcond * sigma_max` are discarded; `rcond = None` uses
    /// `max(rows, cols) * eps`.
    fn lstsq(design: ArrayView2<'_, Self>, rhs: ArrayView2<'_, Self>, rcond: Option<Self>)
        -> LstsqSolution<Self>;

    /// One draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            fn lstsq(
                design: ArrayView2<'_, Self>,
                rhs: ArrayView2<'_, Self>,
                rcond: Option<Self>,
            ) -> LstsqSolution<Self> {
                let (rows, cols) = design.dim();
                let k = rhs.ncols();
                let a = DMatrix::<$t>::from_fn(rows, cols, |i, j| design[[i, j]]);
                let b = DMatrix::<$t>::from_fn(rows, k, |i, j| rhs[[i, j]]);
                if rows == 0 || cols == 0 {
                    return LstsqSolution {
                        solution: Array2::zeros((cols, k)),
                        rank: 0,
                    };
                }
                let svd = a.svd(true, true);
                let sigma_max = svd.singular_values.iter().cloned().fold(0.0, <$t>::max);
                let rcond = rcond.unwrap_or((rows.max(cols) as $t) * <$t>::EPSILON);
                let cutoff = rcond * sigma_max;
                let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
                let x = if rank == 0 {
                    DMatrix::<$t>::zeros(cols, k)
                } else {
                    // `solve` zeroes singular values <= eps, which matches the cutoff rule.
                    svd.solve(&b, cutoff).expect("u and v^t were computed")
                };
                LstsqSolution {
                    solution: Array2::from_shape_fn((cols, k), |(i, j)| x[(i, j)]),
                    rank,
                }
            }

            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
