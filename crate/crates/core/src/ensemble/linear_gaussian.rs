//! Synthetic ensemble with a Gaussian high-fidelity model and affine,
//! noisy low-fidelity models: `Y = mean + diag(std) Z`,
//! `X_i = G_i Y + o_i + diag(noise_i) E_i`.

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `d_i x d` gain matrix, row-major.
    pub gain: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub noise_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianParams {
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    pub models: Vec<LinearModel>,
}

impl LinearGaussianParams {
    /// Scalar ensemble `X_i = gain_i Y + noise_i E_i` with `Y ~ N(0, 1)`.
    pub fn scalar(pairs: &[(f64, f64)]) -> Self {
        LinearGaussianParams {
            y_mean: vec![0.0],
            y_std: vec![1.0],
            models: pairs
                .iter()
                .map(|&(g, s)| LinearModel {
                    gain: vec![vec![g]],
                    offset: vec![0.0],
                    noise_std: vec![s],
                })
                .collect(),
        }
    }

    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let d = dims[0];
        if self.y_mean.len() != d || self.y_std.len() != d {
            return bad(format!("y_mean and y_std must have length {d}"));
        }
        if self.y_std.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return bad("y_std entries must be nonnegative".into());
        }
        if self.models.len() != dims.len() - 1 {
            return bad(format!(
                "{} linear models for {} low-fidelity dims",
                self.models.len(),
                dims.len() - 1
            ));
        }
        for (k, m) in self.models.iter().enumerate() {
            let di = dims[k + 1];
            if m.gain.len() != di || m.gain.iter().any(|r| r.len() != d) {
                return bad(format!("gain of model {} must be {di} x {d}", k + 1));
            }
            if m.offset.len() != di || m.noise_std.len() != di {
                return bad(format!("offset/noise_std of model {} must have length {di}", k + 1));
            }
            if m.noise_std.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
                return bad(format!("noise_std of model {} must be nonnegative", k + 1));
            }
        }
        Ok(())
    }

    pub(crate) fn draw_y<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<T> {
        self.y_mean
            .iter()
            .zip(&self.y_std)
            .map(|(&m, &s)| T::of(m) + T::of(s) * T::standard_normal(rng))
            .collect()
    }

    /// Draws `X_i` (1-based `i`) given a realized `Y`.
    pub(crate) fn draw_x<T: Real, R: Rng + ?Sized>(&self, i: usize, y: &Array1<T>, rng: &mut R) -> Array1<T> {
        let m = &self.models[i - 1];
        m.gain
            .iter()
            .zip(&m.offset)
            .zip(&m.noise_std)
            .map(|((row, &o), &s)| {
                let lin: T = row.iter().zip(y.iter()).map(|(&g, &v)| T::of(g) * v).sum();
                lin + T::of(o) + T::of(s) * T::standard_normal(rng)
            })
            .collect()
    }

    /// Closed-form `Corr(Y^(j), X_i^(k))`.
    pub fn correlation(&self, i: usize, k: usize, j: usize) -> f64 {
        let m = &self.models[i - 1];
        let row = &m.gain[k];
        let var_x: f64 = row
            .iter()
            .zip(&self.y_std)
            .map(|(g, s)| g * g * s * s)
            .sum::<f64>()
            + m.noise_std[k].powi(2);
        row[j] * self.y_std[j].powi(2) / (self.y_std[j] * var_x.sqrt())
    }

    /// Exact `F_Y(x)`; components of `Y` are independent.
    pub fn high_fidelity_cdf(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.y_mean.iter().zip(&self.y_std))
            .map(|(&xi, (&m, &s))| {
                if s == 0.0 {
                    if xi >= m {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    Normal::new(m, s).expect("validated std").cdf(xi)
                }
            })
            .product()
    }
}
