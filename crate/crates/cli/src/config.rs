//! Experiment configuration files (TOML or JSON).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mfcdf::cdf::GridSpec;
use mfcdf::cv_estimator::WeightSpec;
use mfcdf::ensemble::{Ensemble, EnsembleConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MFCDF_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Ecdf,
    Cvmdl,
    CvmdlSorted,
    CvmdlStar,
    CvmdlStarSorted,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Ecdf,
        EstimatorKind::Cvmdl,
        EstimatorKind::CvmdlSorted,
        EstimatorKind::CvmdlStar,
        EstimatorKind::CvmdlStarSorted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ecdf => "ecdf",
            EstimatorKind::Cvmdl => "cvmdl",
            EstimatorKind::CvmdlSorted => "cvmdl-sorted",
            EstimatorKind::CvmdlStar => "cvmdl-star",
            EstimatorKind::CvmdlStarSorted => "cvmdl-star-sorted",
        }
    }

    pub fn is_cvmdl(self) -> bool {
        self != EstimatorKind::Ecdf
    }

    pub fn tail_extended(self) -> bool {
        matches!(self, EstimatorKind::CvmdlStar | EstimatorKind::CvmdlStarSorted)
    }

    pub fn sorted(self) -> bool {
        matches!(self, EstimatorKind::CvmdlSorted | EstimatorKind::CvmdlStarSorted)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown estimator `{s}`"))
    }
}

/// Ensemble given by file path or inline.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnsembleRef {
    Path(PathBuf),
    Inline(EnsembleConfig),
}

/// Reference CDF used to score estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleSpec {
    /// ECDF of `samples` high-fidelity draws.
    Samples { samples: usize },
    /// CDF estimate stored as CSV (`z_1..z_d,value`).
    File { path: PathBuf },
    /// Closed-form CDF (linear-Gaussian ensembles), tabulated on a uniform
    /// grid of `resolution` nodes per axis over the weight rectangle, or at
    /// its quadrature nodes in grid mode.
    Analytic {
        #[serde(default = "default_analytic_resolution")]
        resolution: usize,
    },
}

fn default_analytic_resolution() -> usize {
    4096
}

fn default_trials() -> usize {
    1
}

fn default_tau() -> f64 {
    0.05
}

fn default_cvar_levels() -> Vec<f64> {
    vec![0.95, 0.99]
}

fn default_quantile_levels() -> Vec<f64> {
    vec![0.05, 0.5, 0.95]
}

fn default_oracle_samples() -> usize {
    50_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleRef,
    pub budgets: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub weight: WeightSpec,
    /// Evaluation grid of every estimate; defaults to sample-driven for
    /// `d = 1` and the weight quadrature grid otherwise.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub oracle: OracleSpec,
    /// Joint draws behind `oracle` statistics (`k1`, `k2`, correlations).
    #[serde(default = "default_oracle_samples")]
    pub oracle_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub rcond: Option<f64>,
    #[serde(default = "default_cvar_levels")]
    pub cvar_levels: Vec<f64>,
    #[serde(default = "default_quantile_levels")]
    pub quantile_levels: Vec<f64>,
}

/// A parsed configuration together with the directory its relative paths
/// resolve against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    /// File stem, used to name the default output directory.
    pub name: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str, toml: bool) -> Result<Self, CliError> {
        let c: ExperimentConfig = if toml {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        };
        c.check()?;
        Ok(c)
    }

    /// Structural checks that need no ensemble.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.budgets.is_empty() {
            return bad("at least one budget is required".into());
        }
        if self.budgets.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad("budgets must be positive and finite".into());
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return bad("budgets must be strictly ascending".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        if !(self.tau > 0.0 && self.tau < 0.5) {
            return bad(format!("tau must lie in (0, 1/2), got {}", self.tau));
        }
        if let Some(l) = self.cvar_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("CVaR level {l} outside (0, 1)"));
        }
        if let Some(l) = self.quantile_levels.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return bad(format!("quantile level {l} outside (0, 1]"));
        }
        Ok(())
    }

    pub fn estimators_sorted(&self) -> Vec<EstimatorKind> {
        let mut e = self.estimators.clone();
        e.sort();
        e.dedup();
        e
    }
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let toml = path.extension().and_then(|e| e.to_str()) == Some("toml");
        let config = ExperimentConfig::parse(&text, toml)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("experiment")
            .to_string();
        Ok(LoadedConfig { config, base_dir, name })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Builds and validates the ensemble, and checks the weight and the
    /// estimator list against its dimension.
    pub fn ensemble(&self) -> Result<Ensemble, CliError> {
        let (cfg, dir) = match &self.config.ensemble {
            EnsembleRef::Path(p) => {
                let path = self.resolve(p);
                let cfg = EnsembleConfig::from_path(&path).map_err(CliError::from_config)?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (cfg, dir)
            }
            EnsembleRef::Inline(c) => (c.clone(), self.base_dir.clone()),
        };
        let e = Ensemble::from_config(&cfg, &dir).map_err(CliError::from_config)?;
        let d = e.dim();
        self.config.weight.validate(d).map_err(CliError::from_config)?;
        if d != 1 && self.config.estimators.iter().any(|k| k.tail_extended()) {
            return Err(CliError::Config(
                "cvmdl-star estimators need a scalar high-fidelity output".into(),
            ));
        }
        Ok(e)
    }

    /// `--out`, then the config's `out`, then `$MFCDF_OUT/<name>`, then
    /// `mfcdf-out/<name>`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.config.out {
            return self.resolve(p);
        }
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("mfcdf-out"));
        root.join(&self.name)
    }
}
