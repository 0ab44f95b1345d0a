//! Coupled multifidelity model families and their samplers.
//!
//! Model `0` is the high-fidelity model `Y`; models `1..=n` are the
//! low-fidelity models `X_1..X_n`. A validated [`Ensemble`] is immutable;
//! all randomness flows through explicit [`SeedStream`]s, and the only
//! mutable state (the row cursor of a pool drawn without replacement) lives
//! in a per-run [`Sampler`].

mod gbm;
mod linear_gaussian;
mod pool;

use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gbm::{gbm_extrema_path, GbmParams};
pub use linear_gaussian::{LinearGaussianParams, LinearModel};
pub use pool::{pool_column_names, PoolSource};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::{purpose, SeedStream};
use crate::subset::{Subset, MAX_LOW_FIDELITY_MODELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: usize,
    pub dim: usize,
    pub cost: f64,
}

/// Kind-specific part of an ensemble configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KindConfig {
    GbmExtrema(GbmParams),
    LinearGaussian(LinearGaussianParams),
    Pool(PoolConfig),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoolConfig {
    /// CSV (`.csv`) or binary matrix file; relative paths resolve against
    /// the directory of the configuration file.
    pub path: PathBuf,
    #[serde(default)]
    pub replacement: bool,
}

/// Declarative ensemble description (JSON or TOML).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleConfig {
    #[serde(flatten)]
    pub kind: KindConfig,
    /// `c_0, c_1, ..., c_n`.
    pub costs: Vec<f64>,
    /// `d, d_1, ..., d_n`.
    pub dims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl EnsembleConfig {
    /// Parses a `.toml` file, or JSON for any other extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.extension().and_then(|e| e.to_str()) == Some("toml"))
    }

    pub fn parse(text: &str, toml: bool) -> Result<Self> {
        if toml {
            Ok(toml::from_str(text)?)
        } else {
            Ok(serde_json::from_str(text)?)
        }
    }
}

#[derive(Clone, Debug)]
pub enum ModelFamily {
    GbmExtrema(GbmParams),
    LinearGaussian(LinearGaussianParams),
    Pool(PoolSource),
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::GbmExtrema(_) => "gbm-extrema",
            ModelFamily::LinearGaussian(_) => "linear-gaussian",
            ModelFamily::Pool(_) => "pool",
        }
    }
}

/// Validated ensemble handle.
#[derive(Clone, Debug)]
pub struct Ensemble {
    specs: Vec<ModelSpec>,
    family: ModelFamily,
    base_seed: u64,
}

/// Costs and dimensions derived from a validated ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDescriptor {
    /// `d` of the high-fidelity model.
    pub dim: usize,
    /// `d_1..d_n`.
    pub low_fidelity_dims: Vec<usize>,
    pub costs: Vec<f64>,
    /// Cost of one joint draw of every model.
    pub c_epr: f64,
    /// `c_S` for every nonempty subset, lexicographic order.
    pub subset_costs: Vec<(Subset, f64)>,
}

impl EnsembleDescriptor {
    pub fn n_low_fidelity(&self) -> usize {
        self.low_fidelity_dims.len()
    }

    /// `sum d_i + 2`, the smallest exploration size that can give a
    /// full-rank design for every subset.
    pub fn min_exploration(&self) -> usize {
        self.low_fidelity_dims.iter().sum::<usize>() + 2
    }

    pub fn subset_cost(&self, subset: &Subset) -> f64 {
        subset.indices().iter().map(|&i| self.costs[i]).sum()
    }

    pub fn subset_dim(&self, subset: &Subset) -> usize {
        subset
            .indices()
            .iter()
            .map(|&i| self.low_fidelity_dims[i - 1])
            .sum()
    }

    pub fn min_subset_cost(&self) -> f64 {
        self.costs[1..].iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Validates a configuration, resolving pool paths against `base_dir`.
pub fn validate(config: &EnsembleConfig, base_dir: &Path) -> Result<(Ensemble, EnsembleDescriptor)> {
    let ensemble = Ensemble::from_config(config, base_dir)?;
    let descriptor = ensemble.descriptor();
    Ok((ensemble, descriptor))
}

impl Ensemble {
    pub fn from_config(config: &EnsembleConfig, base_dir: &Path) -> Result<Self> {
        let family = match &config.kind {
            KindConfig::GbmExtrema(p) => ModelFamily::GbmExtrema(p.clone()),
            KindConfig::LinearGaussian(p) => ModelFamily::LinearGaussian(p.clone()),
            KindConfig::Pool(p) => {
                let path = if p.path.is_absolute() {
                    p.path.clone()
                } else {
                    base_dir.join(&p.path)
                };
                ModelFamily::Pool(PoolSource::load(&path, &config.dims, p.replacement)?)
            }
        };
        Ensemble::new(&config.costs, &config.dims, family, config.seed)
    }

    pub fn new(costs: &[f64], dims: &[usize], family: ModelFamily, base_seed: u64) -> Result<Self> {
        if costs.len() != dims.len() {
            return Err(Error::InvalidConfig(format!(
                "{} costs but {} dims",
                costs.len(),
                dims.len()
            )));
        }
        let n = costs.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::InvalidConfig(
                "at least one low-fidelity model is required".into(),
            ));
        }
        if n > MAX_LOW_FIDELITY_MODELS {
            return Err(Error::InvalidConfig(format!(
                "at most {MAX_LOW_FIDELITY_MODELS} low-fidelity models are supported"
            )));
        }
        for (i, (&c, &d)) in costs.iter().zip(dims).enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "cost of model {i} must be positive and finite, got {c}"
                )));
            }
            if d == 0 {
                return Err(Error::InvalidConfig(format!("model {i} has dimension 0")));
            }
        }
        match &family {
            ModelFamily::GbmExtrema(p) => p.validate(dims)?,
            ModelFamily::LinearGaussian(p) => p.validate(dims)?,
            ModelFamily::Pool(p) => p.validate(dims)?,
        }
        let specs = costs
            .iter()
            .zip(dims)
            .enumerate()
            .map(|(id, (&cost, &dim))| ModelSpec { id, dim, cost })
            .collect();
        Ok(Ensemble {
            specs,
            family,
            base_seed,
        })
    }

    pub fn specs(&self) -> &[ModelSpec] {
        &self.specs
    }

    pub fn family(&self) -> &ModelFamily {
        &self.family
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn n_low_fidelity(&self) -> usize {
        self.specs.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.specs[0].dim
    }

    pub fn descriptor(&self) -> EnsembleDescriptor {
        let costs: Vec<f64> = self.specs.iter().map(|s| s.cost).collect();
        let subset_costs = Subset::all_nonempty(self.n_low_fidelity())
            .expect("validated model count")
            .into_iter()
            .map(|s| {
                let c = s.indices().iter().map(|&i| costs[i]).sum();
                (s, c)
            })
            .collect();
        EnsembleDescriptor {
            dim: self.specs[0].dim,
            low_fidelity_dims: self.specs[1..].iter().map(|s| s.dim).collect(),
            c_epr: costs.iter().sum(),
            costs,
            subset_costs,
        }
    }

    /// Per-run sampler; `run` seeds the row permutation of a pool.
    pub fn sampler(&self, run: SeedStream) -> Sampler<'_> {
        let pool = match &self.family {
            ModelFamily::Pool(p) if !p.replacement => {
                let mut order: Vec<usize> = (0..p.rows()).collect();
                order.shuffle(&mut run.derive(purpose::POOL, 0).rng());
                Some(PoolCursor { order, next: 0 })
            }
            _ => None,
        };
        Sampler {
            ensemble: self,
            pool,
        }
    }
}

/// Exploration draw of all models jointly; row `l` of every block comes
/// from one coupled draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointBatch<T> {
    /// `m x d` high-fidelity block.
    pub y: Array2<T>,
    /// `m x d_i` block of model `i + 1`.
    pub x: Vec<Array2<T>>,
    pub charged_cost: f64,
}

impl<T: Real> JointBatch<T> {
    pub fn new(y: Array2<T>, x: Vec<Array2<T>>, charged_cost: f64) -> Result<Self> {
        let m = y.nrows();
        if let Some(bad) = x.iter().find(|b| b.nrows() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.nrows(),
            });
        }
        Ok(JointBatch { y, x, charged_cost })
    }

    pub fn count(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_low_fidelity(&self) -> usize {
        self.x.len()
    }

    /// Columns of `X_S`, models in ascending index order.
    pub fn x_subset(&self, subset: &Subset) -> Result<Array2<T>> {
        subset.check_within(self.x.len())?;
        let views: Vec<ArrayView2<'_, T>> =
            subset.indices().iter().map(|&i| self.x[i - 1].view()).collect();
        Ok(concatenate(Axis(1), &views).expect("blocks share row count"))
    }

    /// Appends the rows of `other`, accumulating charged cost.
    pub fn append(&mut self, other: &JointBatch<T>) -> Result<()> {
        if other.dim() != self.dim() || other.x.len() != self.x.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        self.y.append(Axis(0), other.y.view()).map_err(shape_err)?;
        for (a, b) in self.x.iter_mut().zip(&other.x) {
            a.append(Axis(0), b.view()).map_err(shape_err)?;
        }
        self.charged_cost += other.charged_cost;
        Ok(())
    }

    /// Pearson correlations between every `Y` component (rows) and every
    /// low-fidelity component (columns, models in index order).
    pub fn correlations(&self) -> Array2<f64> {
        let xs: Vec<ArrayView2<'_, T>> = self.x.iter().map(|b| b.view()).collect();
        let x = concatenate(Axis(1), &xs).expect("blocks share row count");
        let col = |a: ArrayView2<'_, T>, j: usize| -> Vec<f64> {
            a.column(j).iter().map(|v| v.as_f64()).collect()
        };
        Array2::from_shape_fn((self.y.ncols(), x.ncols()), |(i, j)| {
            pearson(&col(self.y.view(), i), &col(x.view(), j))
        })
    }
}

fn shape_err(e: ndarray::ShapeError) -> Error {
    Error::InvalidArgument(format!("incompatible batch shapes: {e}"))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Exploitation draw of one subset of low-fidelity models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetBatch<T> {
    pub subset: Subset,
    /// `N x d_S`, models in ascending index order.
    pub x: Array2<T>,
    pub charged_cost: f64,
}

impl<T: Real> SubsetBatch<T> {
    pub fn count(&self) -> usize {
        self.x.nrows()
    }
}

#[derive(Clone, Debug)]
struct PoolCursor {
    order: Vec<usize>,
    next: usize,
}

/// Per-run sampling front end for an [`Ensemble`].
#[derive(Clone, Debug)]
pub struct Sampler<'a> {
    ensemble: &'a Ensemble,
    pool: Option<PoolCursor>,
}

impl<'a> Sampler<'a> {
    pub fn ensemble(&self) -> &'a Ensemble {
        self.ensemble
    }

    /// Rows left in a pool drawn without replacement.
    pub fn remaining_pool_rows(&self) -> Option<usize> {
        self.pool.as_ref().map(|c| c.order.len() - c.next)
    }

    fn pool_rows(&mut self, count: usize, stream: SeedStream) -> Result<Vec<usize>> {
        let ModelFamily::Pool(source) = &self.ensemble.family else {
            unreachable!("pool_rows called on a non-pool ensemble")
        };
        match &mut self.pool {
            Some(cursor) => {
                let remaining = cursor.order.len() - cursor.next;
                if count > remaining {
                    return Err(Error::PoolExhausted {
                        requested: count,
                        remaining,
                    });
                }
                let rows = cursor.order[cursor.next..cursor.next + count].to_vec();
                cursor.next += count;
                Ok(rows)
            }
            None => {
                let mut rng = stream.rng();
                Ok((0..count).map(|_| rng.random_range(0..source.rows())).collect())
            }
        }
    }

    /// `count` i.i.d. coupled draws of `(Y, X_1, ..., X_n)`.
    pub fn sample_joint<T: Real>(&mut self, count: usize, stream: SeedStream) -> Result<JointBatch<T>> {
        let specs = &self.ensemble.specs;
        let charged = count as f64 * specs.iter().map(|s| s.cost).sum::<f64>();
        let mut blocks: Vec<Array2<T>> =
            specs.iter().map(|s| Array2::zeros((count, s.dim))).collect();
        match &self.ensemble.family {
            ModelFamily::GbmExtrema(p) => {
                let levels: Vec<usize> = (0..specs.len()).collect();
                p.fill_rows(&levels, &mut blocks, stream)?;
            }
            ModelFamily::LinearGaussian(p) => {
                let mut rng = stream.rng();
                for r in 0..count {
                    let y = p.draw_y::<T, _>(&mut rng);
                    blocks[0].row_mut(r).assign(&y);
                    for i in 1..specs.len() {
                        let x = p.draw_x(i, &y, &mut rng);
                        blocks[i].row_mut(r).assign(&x);
                    }
                }
            }
            ModelFamily::Pool(_) => {
                let rows = self.pool_rows(count, stream)?;
                let ModelFamily::Pool(source) = &self.ensemble.family else { unreachable!() };
                let models: Vec<usize> = (0..specs.len()).collect();
                source.gather(&rows, &models, &mut blocks);
            }
        }
        let y = blocks.remove(0);
        JointBatch::new(y, blocks, charged)
    }

    /// `count` draws of `X_S` alone, independent of every joint draw.
    pub fn sample_subset<T: Real>(
        &mut self,
        subset: &Subset,
        count: usize,
        stream: SeedStream,
    ) -> Result<SubsetBatch<T>> {
        subset.check_within(self.ensemble.n_low_fidelity())?;
        let specs = &self.ensemble.specs;
        let models = subset.indices();
        let charged = count as f64 * models.iter().map(|&i| specs[i].cost).sum::<f64>();
        let mut blocks: Vec<Array2<T>> = models
            .iter()
            .map(|&i| Array2::zeros((count, specs[i].dim)))
            .collect();
        match &self.ensemble.family {
            ModelFamily::GbmExtrema(p) => p.fill_rows(models, &mut blocks, stream)?,
            ModelFamily::LinearGaussian(p) => {
                let mut rng = stream.rng();
                for r in 0..count {
                    let y = p.draw_y::<T, _>(&mut rng);
                    for (b, &i) in models.iter().enumerate() {
                        let x = p.draw_x(i, &y, &mut rng);
                        blocks[b].row_mut(r).assign(&x);
                    }
                }
            }
            ModelFamily::Pool(_) => {
                let rows = self.pool_rows(count, stream)?;
                let ModelFamily::Pool(source) = &self.ensemble.family else { unreachable!() };
                source.gather(&rows, models, &mut blocks);
            }
        }
        let views: Vec<ArrayView2<'_, T>> = blocks.iter().map(|b| b.view()).collect();
        let x = concatenate(Axis(1), &views).map_err(shape_err)?;
        Ok(SubsetBatch {
            subset: subset.clone(),
            x,
            charged_cost: charged,
        })
    }

    /// `count` draws of `Y` alone (the ECDF baseline), charged `c_0` each.
    pub fn sample_high_fidelity<T: Real>(
        &mut self,
        count: usize,
        stream: SeedStream,
    ) -> Result<(Array2<T>, f64)> {
        let specs = &self.ensemble.specs;
        let charged = count as f64 * specs[0].cost;
        let mut blocks = vec![Array2::zeros((count, specs[0].dim))];
        match &self.ensemble.family {
            ModelFamily::GbmExtrema(p) => p.fill_rows(&[0], &mut blocks, stream)?,
            ModelFamily::LinearGaussian(p) => {
                let mut rng = stream.rng();
                for r in 0..count {
                    let y = p.draw_y::<T, _>(&mut rng);
                    blocks[0].row_mut(r).assign(&y);
                }
            }
            ModelFamily::Pool(_) => {
                let rows = self.pool_rows(count, stream)?;
                let ModelFamily::Pool(source) = &self.ensemble.family else { unreachable!() };
                source.gather(&rows, &[0], &mut blocks);
            }
        }
        Ok((blocks.remove(0), charged))
    }
}
