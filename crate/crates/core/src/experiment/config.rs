use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distributions::{GaussianMixture, MixtureComponent, Perturbation};
use crate::error::{Error, Result};
use crate::flow::DEFAULT_PAIR_DISTANCE_FLOOR;
use crate::griddiag::GridSpec;

fn default_seed() -> u64 {
    7
}
fn default_n_samples() -> usize {
    10_000
}
fn default_n_perturbations() -> usize {
    10
}
fn default_clip_factor() -> f64 {
    10.0
}
fn default_kde_sigma() -> f64 {
    0.2
}
fn default_kde_step() -> f64 {
    1e-4
}
fn default_median_window() -> usize {
    3
}
fn default_pair_distance_floor() -> f64 {
    DEFAULT_PAIR_DISTANCE_FLOOR
}
fn default_max_arrows() -> usize {
    1000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_nodes() -> usize {
    200
}

/// 15 points log-spaced over `[1e-4, 3e-1]`.
pub fn default_epsilons() -> Vec<f64> {
    let (lo, hi, k) = (1e-4f64, 3e-1f64, 15);
    (0..k)
        .map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub components: Vec<MixtureComponent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Defaults to [`Perturbation::default_scale`].
    pub scale: Option<f64>,
    /// Fixed per-component shift directions; random unit vectors when absent.
    pub shifts: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_nodes")]
    pub nx: usize,
    #[serde(default = "default_nodes")]
    pub ny: usize,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    /// Margin around the samples when no explicit window is given.
    pub margin: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: default_nodes(),
            ny: default_nodes(),
            x_min: None,
            x_max: None,
            y_min: None,
            y_max: None,
            margin: None,
        }
    }
}

impl GridConfig {
    /// Explicit window, if all four bounds are set.
    pub fn window(&self) -> Option<GridSpec> {
        Some(GridSpec {
            x_min: self.x_min?,
            x_max: self.x_max?,
            y_min: self.y_min?,
            y_max: self.y_max?,
            nx: self.nx,
            ny: self.ny,
        })
    }
}

/// Everything a `fig1`, `fig2` or `continuity` run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mixture: MixtureConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_n_perturbations")]
    pub n_perturbations: usize,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_clip_factor")]
    pub clip_factor: f64,
    #[serde(default = "default_kde_sigma")]
    pub kde_sigma: f64,
    #[serde(default = "default_kde_step")]
    pub kde_step: f64,
    #[serde(default = "default_median_window")]
    pub median_window: usize,
    #[serde(default = "default_pair_distance_floor")]
    pub pair_distance_floor: f64,
    #[serde(default = "default_max_arrows")]
    pub max_arrows: usize,
    /// Pins the KSD bandwidth instead of the median heuristic.
    pub ksd_bandwidth: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    fn with_mixture(components: Vec<MixtureComponent>) -> Self {
        Self {
            mixture: MixtureConfig { components },
            perturbation: PerturbationConfig::default(),
            seed: default_seed(),
            n_samples: default_n_samples(),
            n_perturbations: default_n_perturbations(),
            epsilons: default_epsilons(),
            clip_factor: default_clip_factor(),
            kde_sigma: default_kde_sigma(),
            kde_step: default_kde_step(),
            median_window: default_median_window(),
            pair_distance_floor: default_pair_distance_floor(),
            max_arrows: default_max_arrows(),
            ksd_bandwidth: None,
            grid: GridConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    /// Three-component 2-D mixture used for the flow and KSD figures.
    pub fn three_component() -> Self {
        Self::with_mixture(vec![
            MixtureComponent {
                weight: 0.3,
                mean: vec![-1.5, -1.0],
                covariance: vec![vec![0.6, 0.2], vec![0.2, 0.4]],
            },
            MixtureComponent {
                weight: 0.45,
                mean: vec![1.5, -0.5],
                covariance: vec![vec![0.5, -0.15], vec![-0.15, 0.7]],
            },
            MixtureComponent {
                weight: 0.25,
                mean: vec![0.0, 1.8],
                covariance: vec![vec![0.8, 0.0], vec![0.0, 0.3]],
            },
        ])
    }

    /// Standard 2-D normal with a unit shift along x, on `[−5, 5]²`.
    pub fn single_gaussian() -> Self {
        let mut cfg = Self::with_mixture(vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0, 0.0],
            covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        }]);
        cfg.perturbation = PerturbationConfig {
            scale: Some(1.0),
            shifts: Some(vec![vec![1.0, 0.0]]),
        };
        cfg.grid = GridConfig {
            x_min: Some(-5.0),
            x_max: Some(5.0),
            y_min: Some(-5.0),
            y_max: Some(5.0),
            ..GridConfig::default()
        };
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("config")
                .to_string();
            Error::config(field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build_mixture(&self) -> Result<GaussianMixture> {
        GaussianMixture::new(self.mixture.components.clone())
            .map_err(|e| Error::config("mixture", e.to_string()))
    }

    pub fn perturbation_scale(&self, mix: &GaussianMixture) -> f64 {
        self.perturbation
            .scale
            .unwrap_or_else(|| Perturbation::default_scale(mix))
    }

    /// Checks every field invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let mix = self.build_mixture()?;
        if let Some(s) = self.perturbation.scale {
            if !s.is_finite() {
                return Err(Error::config("perturbation.scale", "must be finite"));
            }
        }
        if let Some(shifts) = &self.perturbation.shifts {
            Perturbation::new(shifts.clone(), 1.0)
                .and_then(|p| p.check(&mix))
                .map_err(|e| Error::config("perturbation.shifts", e.to_string()))?;
        }
        if self.n_samples < 100 {
            return Err(Error::config("n_samples", "must be at least 100"));
        }
        if self.n_perturbations == 0 {
            return Err(Error::config("n_perturbations", "must be positive"));
        }
        if self.epsilons.is_empty() {
            return Err(Error::config("epsilons", "must not be empty"));
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::config("epsilons", "must be positive and finite"));
        }
        if self.epsilons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("epsilons", "must be strictly ascending"));
        }
        if !(self.clip_factor.is_finite() && self.clip_factor >= 1.0) {
            return Err(Error::config("clip_factor", "must be finite and at least 1"));
        }
        if !(self.kde_sigma.is_finite() && self.kde_sigma > 0.0) {
            return Err(Error::config("kde_sigma", "must be positive"));
        }
        if !(self.kde_step.is_finite() && self.kde_step > 0.0) {
            return Err(Error::config("kde_step", "must be positive"));
        }
        if self.median_window < 3 || self.median_window % 2 == 0 {
            return Err(Error::config("median_window", "must be odd and at least 3"));
        }
        if !(self.pair_distance_floor.is_finite() && self.pair_distance_floor >= 0.0) {
            return Err(Error::config("pair_distance_floor", "must be non-negative"));
        }
        if self.max_arrows == 0 {
            return Err(Error::config("max_arrows", "must be positive"));
        }
        if let Some(bw) = self.ksd_bandwidth {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(Error::config("ksd_bandwidth", "must be positive"));
            }
        }
        if self.grid.nx < GridSpec::MIN_NODES || self.grid.ny < GridSpec::MIN_NODES {
            return Err(Error::config(
                "grid",
                format!("need at least {} nodes per axis", GridSpec::MIN_NODES),
            ));
        }
        if self.grid.nx < self.median_window || self.grid.ny < self.median_window {
            return Err(Error::config("median_window", "larger than the grid"));
        }
        if let Some(m) = self.grid.margin {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::config("grid.margin", "must be non-negative"));
            }
        }
        let bounds = [self.grid.x_min, self.grid.x_max, self.grid.y_min, self.grid.y_max];
        let set = bounds.iter().filter(|b| b.is_some()).count();
        if set != 0 && set != 4 {
            return Err(Error::config("grid", "give all of x_min, x_max, y_min, y_max or none"));
        }
        if let Some(w) = self.grid.window() {
            w.validate().map_err(|e| Error::config("grid", e.to_string()))?;
        }
        Ok(())
    }
}
