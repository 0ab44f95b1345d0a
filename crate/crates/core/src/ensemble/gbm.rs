//! Discrete extrema of geometric Brownian motion under Euler-Maruyama at
//! nested time steps. Coarse levels reuse the fine Brownian increments,
//! summed over each coarse step, so all levels see one realization of `W`.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub mu: f64,
    pub sigma: f64,
    pub s0: f64,
    pub horizon: f64,
    /// Time step of each model, high fidelity (finest) first.
    pub dt_levels: Vec<f64>,
}

const NEST_TOL: f64 = 1e-9;

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = r.round();
    (k >= 1.0 && (r - k).abs() <= NEST_TOL * k.max(1.0)).then_some(k as usize)
}

impl GbmParams {
    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dt_levels.len() != dims.len() {
            return bad(format!(
                "{} dt levels for {} models",
                self.dt_levels.len(),
                dims.len()
            ));
        }
        if let Some(i) = dims.iter().position(|&d| d != 2) {
            return bad(format!("gbm-extrema models have dimension 2, model {i} has {}", dims[i]));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return bad(format!("s0 must be positive, got {}", self.s0));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !self.mu.is_finite() {
            return bad("mu must be finite and sigma nonnegative".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        let finest = self.dt_levels[0];
        for (i, &dt) in self.dt_levels.iter().enumerate() {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt of model {i} must be positive"));
            }
            if integer_ratio(self.horizon, dt).is_none() {
                return bad(format!("dt {dt} of model {i} does not divide the horizon"));
            }
            if integer_ratio(dt, finest).is_none() {
                return bad(format!(
                    "dt {dt} of model {i} is not a multiple of the finest step {finest}"
                ));
            }
        }
        Ok(())
    }

    /// Number of steps at time step `dt`.
    pub fn steps(&self, dt: f64) -> usize {
        integer_ratio(self.horizon, dt).expect("validated time step")
    }

    /// Brownian increments `sqrt(dt) * Z` covering the horizon.
    pub fn draw_increments<T: Real, R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut Vec<T>) {
        let n = self.steps(dt);
        let scale = T::of(dt.sqrt());
        out.clear();
        out.extend((0..n).map(|_| scale * T::standard_normal(rng)));
    }

    /// Fills `blocks[k]` (one per entry of `levels`) with `(s_min, s_max)`
    /// rows. Increments are drawn once per row at the finest requested step.
    pub(crate) fn fill_rows<T: Real>(
        &self,
        levels: &[usize],
        blocks: &mut [Array2<T>],
        stream: SeedStream,
    ) -> Result<()> {
        let count = blocks.first().map_or(0, |b| b.nrows());
        let finest = levels
            .iter()
            .map(|&l| self.dt_levels[l])
            .fold(f64::INFINITY, f64::min);
        let mut rng = stream.rng();
        let mut increments = Vec::with_capacity(self.steps(finest));
        for r in 0..count {
            self.draw_increments(finest, &mut rng, &mut increments);
            for (b, &l) in levels.iter().enumerate() {
                let (lo, hi) = gbm_extrema_path(self, self.dt_levels[l], &increments)?;
                blocks[b][[r, 0]] = lo;
                blocks[b][[r, 1]] = hi;
            }
        }
        Ok(())
    }
}

/// Euler-Maruyama extrema `(min_k S_k, max_k S_k)`, including `S_0`, at
/// step `dt`, driven by `increments` that tile the horizon at a finer (or
/// equal) resolution. Each coarse increment is the sum of the fine ones it
/// spans.
pub fn gbm_extrema_path<T: Real>(params: &GbmParams, dt: f64, increments: &[T]) -> Result<(T, T)> {
    if increments.is_empty() {
        return Err(Error::EmptySample);
    }
    let fine_dt = params.horizon / increments.len() as f64;
    let ratio = integer_ratio(dt, fine_dt).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{} increments do not refine time step {dt}",
            increments.len()
        ))
    })?;
    if increments.len() % ratio != 0 {
        return Err(Error::DimensionMismatch {
            expected: (increments.len() / ratio + 1) * ratio,
            found: increments.len(),
        });
    }
    let drift = T::of(params.mu * dt);
    let vol = T::of(params.sigma);
    let mut s = T::of(params.s0);
    let (mut lo, mut hi) = (s, s);
    for chunk in increments.chunks_exact(ratio) {
        let dw: T = chunk.iter().copied().sum();
        s = s + s * drift + vol * s * dw;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mu: f64, sigma: f64) -> GbmParams {
        GbmParams {
            mu,
            sigma,
            s0: 1.0,
            horizon: 1.0,
            dt_levels: vec![2f64.powi(-14), 2f64.powi(-8), 2f64.powi(-6), 2f64.powi(-4)],
        }
    }

    #[test]
    fn constant_path_without_noise_or_drift() {
        let p = params(0.0, 0.0);
        let inc = vec![0.3f64; 1 << 14];
        for &dt in &p.dt_levels {
            assert_eq!(gbm_extrema_path(&p, dt, &inc).unwrap(), (1.0, 1.0));
        }
    }

    #[test]
    fn pure_drift_matches_direct_product() {
        let p = params(0.05, 0.0);
        let dt = 2f64.powi(-14);
        let inc = vec![0.0f64; 1 << 14];
        let (lo, hi) = gbm_extrema_path(&p, dt, &inc).unwrap();
        let mut expected = 1.0;
        for _ in 0..(1 << 14) {
            expected *= 1.0 + 0.05 * dt;
        }
        assert_eq!(lo, 1.0);
        assert!((hi - expected).abs() < 1e-12, "{hi} vs {expected}");
    }

    #[test]
    fn coarse_step_sums_fine_increments() {
        let p = GbmParams {
            mu: 0.0,
            sigma: 1.0,
            s0: 1.0,
            horizon: 1.0,
            dt_levels: vec![0.25, 0.5],
        };
        let inc: [f64; 4] = [0.1, 0.2, -0.4, 0.1];
        let (lo, hi) = gbm_extrema_path(&p, 0.5, &inc).unwrap();
        let s1: f64 = 1.0 + 1.0 * (0.1 + 0.2);
        let s2 = s1 + s1 * (-0.4 + 0.1);
        assert!((hi - s1).abs() < 1e-15);
        assert!((lo - 1.0f64.min(s2)).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_increments() {
        let p = params(0.05, 0.2);
        let inc = vec![0.0f64; 100];
        assert!(gbm_extrema_path(&p, 2f64.powi(-4), &inc).is_err());
        assert!(gbm_extrema_path::<f64>(&p, 0.5, &[]).is_err());
    }

    #[test]
    fn validation_catches_unnested_steps() {
        let mut p = params(0.05, 0.2);
        assert!(p.validate(&[2, 2, 2, 2]).is_ok());
        assert!(p.validate(&[2, 2, 1, 2]).is_err());
        p.dt_levels[2] = 0.3;
        assert!(p.validate(&[2, 2, 2, 2]).is_err());
        let mut q = params(0.05, 0.2);
        q.dt_levels[0] = 2f64.powi(-5);
        assert!(q.validate(&[2, 2, 2, 2]).is_err());
    }
}
