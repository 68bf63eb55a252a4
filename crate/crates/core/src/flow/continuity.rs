//! Grid check that a flow transports `p` into `p + δp`.
//!
//! The flux `v·p` is obtained by quadrature of `∫ δp(z) ∇ₓk₂(x, z) dz` over
//! the grid cells (a discrete convolution, evaluated with zero-padded FFTs),
//! then its divergence is taken by central differences. The continuity
//! equation says `δp + ∇·(v p) = 0`; the residual is that sum.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::distributions::{GaussianMixture, Perturbation};
use crate::error::{Error, Result};
use crate::griddiag::{evaluate_scalar, GridSpec, ScalarGrid, VectorGrid};
use crate::par;

/// Smallest node count per axis accepted by [`continuity_residual`].
pub const MIN_CONTINUITY_NODES: usize = 32;

/// Cells where `p` exceeds this fraction of its maximum enter the residual norm.
pub const DENSITY_MASK_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ContinuityReport {
    pub density: ScalarGrid,
    pub delta_p: ScalarGrid,
    /// `v·p` at the nodes.
    pub flux: VectorGrid,
    pub divergence: ScalarGrid,
    /// `∇·(v p) + δp`; zero on the outermost ring of nodes.
    pub residual: ScalarGrid,
    /// `‖residual‖₂ / ‖δp‖₂` over masked interior nodes (0 when both vanish).
    pub relative_l2: f64,
    pub masked_nodes: usize,
}

/// `∇ₓk₂` at displacement `(dx, dy)`, zero at the origin.
#[inline]
fn log_kernel_gradient(dx: f64, dy: f64) -> [f64; 2] {
    let r2 = dx * dx + dy * dy;
    if r2 == 0.0 {
        return [0.0, 0.0];
    }
    let s = -1.0 / (2.0 * std::f64::consts::PI * r2);
    [s * dx, s * dy]
}

/// In-place 2-D FFT of a `width × height` row-major buffer.
fn fft2(data: &mut [Complex<f64>], width: usize, height: usize, row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
    row.process(data);
    let mut t = vec![Complex::new(0.0, 0.0); data.len()];
    for y in 0..height {
        for x in 0..width {
            t[x * height + y] = data[y * width + x];
        }
    }
    col.process(&mut t);
    for x in 0..width {
        for y in 0..height {
            data[y * width + x] = t[x * height + y];
        }
    }
}

fn check_2d_source(source: &ScalarGrid) -> Result<()> {
    source.spec.validate()?;
    if !source.values.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite source density".into()));
    }
    Ok(())
}

/// `F(x_g) = Σ_c s(z_c) ∇ₓk₂(x_g, z_c) · dA` over all cells, self term
/// excluded, via FFT convolution.
pub fn poisson_flux(source: &ScalarGrid) -> Result<VectorGrid> {
    check_2d_source(source)?;
    let spec = source.spec;
    let (nx, ny) = (spec.nx, spec.ny);
    let (px, py) = (2 * nx, 2 * ny);
    let (dx, dy, area) = (spec.dx(), spec.dy(), spec.cell_area());

    let mut s = vec![Complex::new(0.0, 0.0); px * py];
    for j in 0..ny {
        for i in 0..nx {
            s[j * px + i] = Complex::new(source.get(i, j) * area, 0.0);
        }
    }
    // Since s is real, convolving with Kx + iKy yields both components at once.
    let mut k = vec![Complex::new(0.0, 0.0); px * py];
    for b in -(ny as i64 - 1)..=(ny as i64 - 1) {
        for a in -(nx as i64 - 1)..=(nx as i64 - 1) {
            let [gx, gy] = log_kernel_gradient(a as f64 * dx, b as f64 * dy);
            let (ia, ib) = (a.rem_euclid(px as i64) as usize, b.rem_euclid(py as i64) as usize);
            k[ib * px + ia] = Complex::new(gx, gy);
        }
    }

    let mut planner = FftPlanner::new();
    let (fr, fc) = (planner.plan_fft_forward(px), planner.plan_fft_forward(py));
    let (ir, ic) = (planner.plan_fft_inverse(px), planner.plan_fft_inverse(py));
    fft2(&mut s, px, py, fr.as_ref(), fc.as_ref());
    fft2(&mut k, px, py, fr.as_ref(), fc.as_ref());
    for (a, b) in s.iter_mut().zip(&k) {
        *a *= b;
    }
    fft2(&mut s, px, py, ir.as_ref(), ic.as_ref());
    let norm = 1.0 / (px * py) as f64;

    let mut values = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let c = s[j * px + i] * norm;
            values.push(c.re);
            values.push(c.im);
        }
    }
    VectorGrid::new(spec, values)
}

/// Direct `O(M²)` evaluation of [`poisson_flux`], for cross-checking.
pub fn poisson_flux_direct(source: &ScalarGrid) -> Result<VectorGrid> {
    check_2d_source(source)?;
    let spec = source.spec;
    let (nx, ny) = (spec.nx, spec.ny);
    let area = spec.cell_area();
    let nodes = par::map_range(nx * ny, |g| {
        let (gi, gj) = (g % nx, g / nx);
        let mut acc = [0.0, 0.0];
        for j in 0..ny {
            for i in 0..nx {
                let [kx, ky] = log_kernel_gradient(spec.x(gi) - spec.x(i), spec.y(gj) - spec.y(j));
                let w = source.get(i, j) * area;
                acc[0] += w * kx;
                acc[1] += w * ky;
            }
        }
        acc
    });
    VectorGrid::new(spec, nodes.into_iter().flatten().collect())
}

/// Central-difference divergence; the outer ring of nodes is set to zero.
pub fn divergence(flux: &VectorGrid) -> ScalarGrid {
    let spec = flux.spec;
    let (nx, ny) = (spec.nx, spec.ny);
    let (dx, dy) = (spec.dx(), spec.dy());
    let mut values = vec![0.0; nx * ny];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let du = (flux.get(i + 1, j)[0] - flux.get(i - 1, j)[0]) / (2.0 * dx);
            let dv = (flux.get(i, j + 1)[1] - flux.get(i, j - 1)[1]) / (2.0 * dy);
            values[j * nx + i] = du + dv;
        }
    }
    ScalarGrid {
        spec,
        values,
    }
}

/// Builds `δp` on the grid, the quadrature flux, and the continuity residual.
pub fn continuity_residual(
    mix: &GaussianMixture,
    pert: &Perturbation,
    spec: &GridSpec,
) -> Result<ContinuityReport> {
    if mix.dim().n() != 2 {
        return Err(Error::UnsupportedDimension {
            n: mix.dim().n(),
            reason: "the continuity check runs on 2-D grids",
        });
    }
    spec.validate()?;
    if spec.nx < MIN_CONTINUITY_NODES || spec.ny < MIN_CONTINUITY_NODES {
        return Err(Error::InvalidGrid(format!(
            "{}x{} grid is too coarse; need at least {MIN_CONTINUITY_NODES} cells per axis",
            spec.nx, spec.ny
        )));
    }
    pert.check(mix)?;
    let density = evaluate_scalar(|x, y| mix.density(&[x, y]), spec)?;
    let delta_p = evaluate_scalar(
        |x, y| mix.delta_p(pert, &[x, y]).expect("perturbation checked"),
        spec,
    )?;
    let flux = poisson_flux(&delta_p)?;
    let div = divergence(&flux);

    let (nx, ny) = (spec.nx, spec.ny);
    let threshold = DENSITY_MASK_FRACTION * density.max();
    let mut residual = vec![0.0; nx * ny];
    let (mut num, mut den, mut masked) = (0.0, 0.0, 0);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = j * nx + i;
            residual[k] = div.values[k] + delta_p.values[k];
            if density.values[k] > threshold {
                num += residual[k] * residual[k];
                den += delta_p.values[k] * delta_p.values[k];
                masked += 1;
            }
        }
    }
    let relative_l2 = if num == 0.0 { 0.0 } else { (num / den).sqrt() };
    Ok(ContinuityReport {
        density,
        delta_p,
        flux,
        divergence: div,
        residual: ScalarGrid::new(*spec, residual)?,
        relative_l2,
        masked_nodes: masked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_flux_matches_direct_sum() {
        let spec = GridSpec::new(-2.0, 2.5, -1.5, 2.0, 24, 20).unwrap();
        let src = evaluate_scalar(|x, y| (x - 0.3) * (-(x * x + 2.0 * y * y)).exp() + 0.1 * y, &spec).unwrap();
        let a = poisson_flux(&src).unwrap();
        let b = poisson_flux_direct(&src).unwrap();
        let scale = b.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn zero_perturbation_has_zero_residual() {
        let mix = GaussianMixture::standard_normal(2).unwrap();
        let pert = Perturbation::zero(&mix);
        let spec = GridSpec::square(-5.0, 5.0, 40).unwrap();
        let r = continuity_residual(&mix, &pert, &spec).unwrap();
        assert!(r.residual.values.iter().all(|v| *v == 0.0));
        assert_eq!(r.relative_l2, 0.0);
    }

    #[test]
    fn rejects_coarse_grid_and_3d() {
        let mix = GaussianMixture::standard_normal(2).unwrap();
        let pert = Perturbation::new(vec![vec![1.0, 0.0]], 1.0).unwrap();
        let spec = GridSpec::square(-5.0, 5.0, 31).unwrap();
        assert!(matches!(continuity_residual(&mix, &pert, &spec), Err(Error::InvalidGrid(_))));
        let m3 = GaussianMixture::standard_normal(3).unwrap();
        let p3 = Perturbation::new(vec![vec![1.0, 0.0, 0.0]], 1.0).unwrap();
        let spec = GridSpec::square(-5.0, 5.0, 40).unwrap();
        assert!(matches!(
            continuity_residual(&m3, &p3, &spec),
            Err(Error::UnsupportedDimension { n: 3, .. })
        ));
    }
}
