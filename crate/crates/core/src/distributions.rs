//! Gaussian-mixture test densities.
//!
//! Besides sampling, log-density and score, a mixture exposes the analytic
//! response of its log-density to an infinitesimal displacement of the
//! component means ([`Perturbation`]): `δℓ(x)` and `δp(x) = p(x)·(δℓ(x) −
//! E_p[δℓ])`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Dim;
use crate::points::Points;

/// One weighted Gaussian component, as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Prepared {
    log_weight: f64,
    mean: Vec<f64>,
    // row-major inverse covariance
    precision: Vec<f64>,
    chol: DMatrix<f64>,
    // −(n/2)log 2π − ½ log det Σ
    log_norm: f64,
    min_eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: Dim,
    spec: Vec<MixtureComponent>,
    comps: Vec<Prepared>,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidDistribution("mixture has no components".into()))?;
        let n = first.mean.len();
        let dim = Dim::new(n)?;

        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, expected 1"
            )));
        }

        let mut comps = Vec::with_capacity(components.len());
        for (ci, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidDistribution(format!(
                    "component {ci}: weight {} is not positive",
                    c.weight
                )));
            }
            if c.mean.len() != n || c.covariance.len() != n {
                return Err(Error::InvalidDistribution(format!(
                    "component {ci}: expected dimension {n}"
                )));
            }
            if !c.mean.iter().all(|m| m.is_finite()) {
                return Err(Error::InvalidDistribution(format!(
                    "component {ci}: non-finite mean"
                )));
            }
            let mut cov = DMatrix::<f64>::zeros(n, n);
            for (r, row) in c.covariance.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::InvalidDistribution(format!(
                        "component {ci}: covariance row {r} has length {}",
                        row.len()
                    )));
                }
                for (k, v) in row.iter().enumerate() {
                    cov[(r, k)] = *v;
                }
            }
            let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !cov.iter().all(|v| v.is_finite())
                || (&cov - cov.transpose()).iter().any(|d| d.abs() > 1e-12 * scale)
            {
                return Err(Error::InvalidDistribution(format!(
                    "component {ci}: covariance is not a finite symmetric matrix"
                )));
            }
            let chol = cov.clone().cholesky().ok_or_else(|| {
                Error::InvalidDistribution(format!(
                    "component {ci}: covariance is not positive definite"
                ))
            })?;
            let l = chol.l();
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let inv = chol.inverse();
            let precision = (0..n)
                .flat_map(|r| (0..n).map(move |k| (r, k)))
                .map(|(r, k)| 0.5 * (inv[(r, k)] + inv[(k, r)]))
                .collect();
            let min_eigenvalue = cov.symmetric_eigenvalues().min();
            if !(min_eigenvalue > 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "component {ci}: covariance is not positive definite"
                )));
            }
            comps.push(Prepared {
                log_weight: c.weight.ln(),
                mean: c.mean.clone(),
                precision,
                chol: l,
                log_norm: -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det,
                min_eigenvalue,
            });
        }

        Ok(Self {
            dim,
            spec: components,
            comps,
        })
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean,
            covariance,
        }])
    }

    /// `N(0, I)` in `n` dimensions.
    pub fn standard_normal(n: usize) -> Result<Self> {
        let cov = (0..n)
            .map(|r| (0..n).map(|k| if r == k { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::gaussian(vec![0.0; n], cov)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.spec
    }

    /// Smallest standard deviation along any principal axis of any component.
    pub fn min_std(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| c.min_eigenvalue.sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    fn check_point(&self, x: &[f64]) {
        assert_eq!(x.len(), self.dim.n(), "point dimension mismatch");
    }

    /// Per-component `(log w_c + log N(x; μ_c, Σ_c), Σ_c⁻¹(x − μ_c))`.
    fn component_terms(&self, x: &[f64]) -> Vec<(f64, Vec<f64>)> {
        self.check_point(x);
        let n = self.dim.n();
        self.comps
            .iter()
            .map(|c| {
                let d: Vec<f64> = x.iter().zip(&c.mean).map(|(a, m)| a - m).collect();
                let pd: Vec<f64> = (0..n)
                    .map(|r| {
                        c.precision[r * n..(r + 1) * n]
                            .iter()
                            .zip(&d)
                            .map(|(p, v)| p * v)
                            .sum()
                    })
                    .collect();
                let quad: f64 = d.iter().zip(&pd).map(|(a, b)| a * b).sum();
                (c.log_weight + c.log_norm - 0.5 * quad, pd)
            })
            .collect()
    }

    fn log_sum_exp(logs: impl Iterator<Item = f64> + Clone) -> f64 {
        let m = logs.clone().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + logs.map(|l| (l - m).exp()).sum::<f64>().ln()
    }

    /// Normalized `log p(x)` via log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms = self.component_terms(x);
        Self::log_sum_exp(terms.iter().map(|t| t.0))
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// Posterior responsibilities `r_c(x)`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.component_terms(x);
        let lse = Self::log_sum_exp(terms.iter().map(|t| t.0));
        terms.iter().map(|t| (t.0 - lse).exp()).collect()
    }

    /// Score `∇ log p(x) = Σ_c r_c(x) Σ_c⁻¹(μ_c − x)`.
    pub fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.component_terms(x);
        let lse = Self::log_sum_exp(terms.iter().map(|t| t.0));
        let mut g = vec![0.0; self.dim.n()];
        for (lt, pd) in &terms {
            let r = (lt - lse).exp();
            for (gk, v) in g.iter_mut().zip(pd) {
                *gk -= r * v;
            }
        }
        g
    }

    /// `δℓ(x) = scale · Σ_c r_c(x) (Σ_c⁻¹(x − μ_c))ᵀ shift_c`.
    pub fn delta_ell(&self, pert: &Perturbation, x: &[f64]) -> Result<f64> {
        pert.check(self)?;
        let terms = self.component_terms(x);
        let lse = Self::log_sum_exp(terms.iter().map(|t| t.0));
        let s: f64 = terms
            .iter()
            .zip(&pert.mean_shifts)
            .map(|((lt, pd), shift)| {
                let r = (lt - lse).exp();
                r * pd.iter().zip(shift).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum();
        Ok(pert.scale * s)
    }

    /// `E_p[δℓ]` for a mean perturbation.
    ///
    /// Under component `c`, `E[Σ_c⁻¹(x − μ_c)] = 0`, and `p·δℓ` is the
    /// responsibility-free sum `Σ_c w_c N_c(x)(Σ_c⁻¹(x − μ_c))ᵀshift_c`, so the
    /// expectation is exactly zero for every mean perturbation.
    pub fn expected_delta_ell(&self, pert: &Perturbation) -> Result<f64> {
        pert.check(self)?;
        Ok(0.0)
    }

    /// `δp(x) = p(x)·(δℓ(x) − E_p[δℓ])`.
    pub fn delta_p(&self, pert: &Perturbation, x: &[f64]) -> Result<f64> {
        let centered = self.delta_ell(pert, x)? - self.expected_delta_ell(pert)?;
        Ok(self.density(x) * centered)
    }

    /// Mixture with means `μ_c + t·scale·shift_c`.
    pub fn shifted(&self, pert: &Perturbation, t: f64) -> Result<Self> {
        pert.check(self)?;
        let comps = self
            .spec
            .iter()
            .zip(&pert.mean_shifts)
            .map(|(c, s)| MixtureComponent {
                weight: c.weight,
                mean: c
                    .mean
                    .iter()
                    .zip(s)
                    .map(|(m, d)| m + t * pert.scale * d)
                    .collect(),
                covariance: c.covariance.clone(),
            })
            .collect();
        Self::new(comps)
    }

    /// `count` i.i.d. draws together with their component labels.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> (Points, Vec<usize>) {
        let n = self.dim.n();
        let weights: Vec<f64> = self.spec.iter().map(|c| c.weight).collect();
        let mut coords = Vec::with_capacity(count * n);
        let mut labels = Vec::with_capacity(count);
        let mut z = DVector::<f64>::zeros(n);
        for _ in 0..count {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut label = weights.len() - 1;
            for (c, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    label = c;
                    break;
                }
            }
            for zk in z.iter_mut() {
                *zk = rng.sample(StandardNormal);
            }
            let comp = &self.comps[label];
            let y = &comp.chol * &z;
            coords.extend(y.iter().zip(&comp.mean).map(|(a, m)| a + m));
            labels.push(label);
        }
        (Points::new(n, coords).expect("consistent dimension"), labels)
    }

    pub fn sample_with_rng<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Points {
        self.sample_labeled(count, rng).0
    }

    /// Seeded i.i.d. sample.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Points> {
        if count == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.sample_with_rng(count, &mut rng))
    }
}

/// Default perturbation scale in units of the smallest component standard
/// deviation. With it, ε in `[1e-3, 3e-2]` moves the means by roughly
/// `0.05σ..1.5σ`, the range a KSD sweep at a few thousand samples resolves.
pub const DEFAULT_SCALE_PER_STD: f64 = 50.0;

/// Infinitesimal displacement of the component means: `μ_c → μ_c + t·scale·shift_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub mean_shifts: Vec<Vec<f64>>,
    pub scale: f64,
}

impl Perturbation {
    pub fn new(mean_shifts: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::InvalidPerturbation("scale must be finite".into()));
        }
        if mean_shifts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPerturbation("non-finite shift".into()));
        }
        Ok(Self { mean_shifts, scale })
    }

    /// All-zero shifts for `mix`.
    pub fn zero(mix: &GaussianMixture) -> Self {
        Self {
            mean_shifts: vec![vec![0.0; mix.dim().n()]; mix.n_components()],
            scale: 1.0,
        }
    }

    /// [`DEFAULT_SCALE_PER_STD`] times the mixture's smallest principal
    /// standard deviation.
    pub fn default_scale(mix: &GaussianMixture) -> f64 {
        DEFAULT_SCALE_PER_STD * mix.min_std()
    }

    /// Independent uniformly random unit shift for every component.
    pub fn random<R: Rng + ?Sized>(mix: &GaussianMixture, scale: f64, rng: &mut R) -> Self {
        let n = mix.dim().n();
        let mean_shifts = (0..mix.n_components())
            .map(|_| loop {
                let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|a| a / norm).collect();
                }
            })
            .collect();
        Self { mean_shifts, scale }
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0 || self.mean_shifts.iter().flatten().all(|v| *v == 0.0)
    }

    pub(crate) fn check(&self, mix: &GaussianMixture) -> Result<()> {
        if self.mean_shifts.len() != mix.n_components() {
            return Err(Error::InvalidPerturbation(format!(
                "{} shifts for {} components",
                self.mean_shifts.len(),
                mix.n_components()
            )));
        }
        if let Some(s) = self.mean_shifts.iter().find(|s| s.len() != mix.dim().n()) {
            return Err(Error::InvalidPerturbation(format!(
                "shift of length {} in dimension {}",
                s.len(),
                mix.dim().n()
            )));
        }
        Ok(())
    }
}

/// Samples with their unnormalized log-density and its perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Points,
    pub ell: Vec<f64>,
    pub delta_ell: Vec<f64>,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(points: Points, ell: Vec<f64>, delta_ell: Vec<f64>, seed: u64) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InsufficientSamples { need: 2, got: n });
        }
        if ell.len() != n || delta_ell.len() != n {
            return Err(Error::shape(
                format!("{n} values of ell and delta_ell"),
                format!("{} and {}", ell.len(), delta_ell.len()),
            ));
        }
        if !points.all_finite() || !ell.iter().chain(&delta_ell).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("sample set has non-finite entries".into()));
        }
        Ok(Self {
            points,
            ell,
            delta_ell,
            seed,
        })
    }

    /// Draws `count` samples from `mix` and evaluates `ℓ` and `δℓ` at them.
    pub fn draw(mix: &GaussianMixture, pert: &Perturbation, count: usize, seed: u64) -> Result<Self> {
        let points = mix.sample(count, seed)?;
        Self::evaluate(mix, pert, points, seed)
    }

    pub fn evaluate(mix: &GaussianMixture, pert: &Perturbation, points: Points, seed: u64) -> Result<Self> {
        pert.check(mix)?;
        let ell = crate::par::map_range(points.len(), |i| mix.log_density(points.row(i)));
        let delta_ell = crate::par::map_range(points.len(), |i| {
            mix.delta_ell(pert, points.row(i)).expect("perturbation checked")
        });
        Self::new(points, ell, delta_ell, seed)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
