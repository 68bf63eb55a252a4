//! Free-space Green's functions, Coulomb potentials and the RBF kernel.
//!
//! Sign conventions: `greens_function` is the outward field of a unit point
//! charge, `G_n(x) = x / (S_{n−1}|x|ⁿ)` with `S_{n−1} = 2π^{n/2}/Γ(n/2)` the
//! area of the unit sphere, so `∇·G_n = δ`. The Coulomb potential `k_n` is the
//! positive potential of that charge and therefore satisfies `∇ₓk_n(x, z) =
//! −G_n(x − z)` (electrostatic `E = −∇φ`). [`coulomb_gradient`] returns that
//! gradient directly; it is the kernel the flow estimator convolves with.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::points::sq_dist;

/// Ambient dimension `n ≥ 2` with its Green's-function constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dim {
    n: usize,
    // Γ(n/2) / (2π^{n/2}), i.e. 1 / area of the unit (n−1)-sphere.
    green_coeff: f64,
}

impl Dim {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::UnsupportedDimension {
                n,
                reason: "dimension must be at least 2",
            });
        }
        let half = n as f64 / 2.0;
        let green_coeff = gamma(half) / (2.0 * PI.powf(half));
        Ok(Self { n, green_coeff })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// `Γ(n/2) / (2π^{n/2})`.
    #[inline]
    pub fn green_coefficient(&self) -> f64 {
        self.green_coeff
    }

    /// `|x|ⁿ` from `|x|²`.
    #[inline]
    pub(crate) fn pow_n(&self, r2: f64) -> f64 {
        let half = (self.n / 2) as i32;
        if self.n % 2 == 0 {
            r2.powi(half)
        } else {
            r2.powi(half) * r2.sqrt()
        }
    }

    /// Scalar `s` with `G_n(d) = s·d` for a displacement with `|d|² = r2 > 0`.
    #[inline]
    pub(crate) fn green_factor(&self, r2: f64) -> f64 {
        self.green_coeff / self.pow_n(r2)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::shape(format!("vector of length {}", self.n), v.len()));
        }
        Ok(())
    }
}

/// RBF bandwidth `σ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RbfBandwidth(f64);

impl RbfBandwidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "RBF bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self(sigma))
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.0
    }
}

fn displacement(x: &[f64], z: &[f64]) -> Result<(Vec<f64>, f64)> {
    if x.len() != z.len() {
        return Err(Error::shape(format!("vector of length {}", x.len()), z.len()));
    }
    if !x.iter().chain(z).all(|c| c.is_finite()) {
        return Err(Error::SingularInput("non-finite coordinate"));
    }
    let d: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
    let r2 = d.iter().map(|c| c * c).sum::<f64>();
    if r2 == 0.0 {
        return Err(Error::SingularInput("coincident points"));
    }
    Ok((d, r2))
}

/// `G_n(x) = Γ(n/2)·x / (2π^{n/2}|x|ⁿ)`.
pub fn greens_function(x: &[f64], dim: &Dim) -> Result<Vec<f64>> {
    dim.check_len(x)?;
    let zero = vec![0.0; x.len()];
    let (d, r2) = displacement(x, &zero)?;
    let s = dim.green_factor(r2);
    Ok(d.into_iter().map(|c| c * s).collect())
}

/// `k_n(x, z) = Γ(n/2) / (2(n−2)π^{n/2}|x−z|^{n−2})`, defined for `n ≥ 3`.
pub fn coulomb_kernel(x: &[f64], z: &[f64], dim: &Dim) -> Result<f64> {
    let n = dim.n();
    if n < 3 {
        return Err(Error::UnsupportedDimension {
            n,
            reason: "the Coulomb kernel formula divides by n − 2; use coulomb_kernel_2d",
        });
    }
    dim.check_len(x)?;
    let (_, r2) = displacement(x, z)?;
    // |d|^{n−2} = |d|ⁿ / |d|²
    Ok(dim.green_coefficient() * r2 / ((n - 2) as f64 * dim.pow_n(r2)))
}

/// Logarithmic potential `−log|x−z| / (2π)`.
pub fn coulomb_kernel_2d(x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::shape("vector of length 2", x.len()));
    }
    let (_, r2) = displacement(x, z)?;
    Ok(-0.25 * r2.ln() / PI)
}

/// Coulomb potential for any `n ≥ 2`: logarithmic at `n = 2`, `k_n` above.
pub fn coulomb_potential(x: &[f64], z: &[f64], dim: &Dim) -> Result<f64> {
    if dim.n() == 2 {
        coulomb_kernel_2d(x, z)
    } else {
        coulomb_kernel(x, z, dim)
    }
}

/// `∇ₓ k_n(x, z) = −G_n(x − z)`.
pub fn coulomb_gradient(x: &[f64], z: &[f64], dim: &Dim) -> Result<Vec<f64>> {
    dim.check_len(x)?;
    let (d, r2) = displacement(x, z)?;
    let s = -dim.green_factor(r2);
    Ok(d.into_iter().map(|c| c * s).collect())
}

fn check_rbf_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("vector of length {}", x.len()), y.len()));
    }
    if !x.iter().chain(y).all(|c| c.is_finite()) {
        return Err(Error::InvalidInput("non-finite RBF argument".into()));
    }
    Ok(())
}

/// `exp(−|x−y|² / (2σ²))`.
pub fn rbf_kernel(x: &[f64], y: &[f64], bw: RbfBandwidth) -> Result<f64> {
    check_rbf_inputs(x, y)?;
    let s2 = bw.sigma() * bw.sigma();
    Ok((-sq_dist(x, y) / (2.0 * s2)).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfDerivatives {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    /// `Tr(∇ₓ∇ᵧ k)`.
    pub trace_hessian_xy: f64,
}

pub fn rbf_kernel_derivatives(x: &[f64], y: &[f64], bw: RbfBandwidth) -> Result<RbfDerivatives> {
    check_rbf_inputs(x, y)?;
    let s2 = bw.sigma() * bw.sigma();
    let r2 = sq_dist(x, y);
    let k = (-r2 / (2.0 * s2)).exp();
    let grad_y: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - b) / s2 * k).collect();
    let grad_x = grad_y.iter().map(|g| -g).collect();
    let n = x.len() as f64;
    Ok(RbfDerivatives {
        value: k,
        grad_x,
        grad_y,
        trace_hessian_xy: (n / s2 - r2 / (s2 * s2)) * k,
    })
}
