//! Integrable flow estimation at sample locations.
//!
//! For samples `xⁱ` of `p ∝ exp(ℓ)` and a perturbation `δℓ`, the estimator is
//!
//! ```text
//! vⁱ = 1 / ((N−1)·exp(ℓⁱ)) · Σ_{j≠i} (δℓʲ − mean_k δℓᵏ) · ∇ₓk_n(xⁱ, xʲ)
//! ```
//!
//! with `∇ₓk_n(x, z) = −G_n(x − z)`, the gradient of the Coulomb potential.
//! It is a Monte Carlo estimate of `v·p = ∫ δp(z) ∇ₓk_n(x, z) dz`, whose
//! divergence is `−δp`, so the field satisfies the continuity equation
//! `δp + ∇·(v p) = 0`. Because `ℓ` is only known up to an additive constant,
//! the field is defined up to a positive factor; [`FlowField`] keeps that
//! factor separately as `log_scale`.

use std::fmt::Write as _;

use crate::distributions::SampleSet;
use crate::error::{Error, Result};
use crate::kernels::Dim;
use crate::par;
use crate::points::{canonical_order, norm, Points};

pub mod continuity;

pub use continuity::{
    continuity_residual, divergence, poisson_flux, poisson_flux_direct, ContinuityReport,
};

/// Default for [`FlowOptions::pair_distance_floor`].
pub const DEFAULT_PAIR_DISTANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Pairs closer than this are skipped (and counted).
    pub pair_distance_floor: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            pair_distance_floor: DEFAULT_PAIR_DISTANCE_FLOOR,
        }
    }
}

/// One velocity per sample.
///
/// The estimator's field is `exp(log_scale) · vectors`. Storing the factor
/// separately keeps `vectors` representable however peaked `exp(ℓ)` is.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    dim: usize,
    vectors: Vec<f64>,
    clipped: Vec<bool>,
    log_scale: f64,
    skipped_pairs: usize,
}

impl FlowField {
    /// Field with unit scale and no clipping flags.
    pub fn from_vectors(dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.len() % dim != 0 {
            return Err(Error::shape(format!("a multiple of {dim} components"), vectors.len()));
        }
        let n = vectors.len() / dim;
        Ok(Self {
            dim,
            vectors,
            clipped: vec![false; n],
            log_scale: 0.0,
            skipped_pairs: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.clipped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clipped.is_empty()
    }

    /// Stored (relative) vector `i`.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn clipped(&self) -> &[bool] {
        &self.clipped
    }

    pub fn n_clipped(&self) -> usize {
        self.clipped.iter().filter(|c| **c).count()
    }

    /// Natural log of the factor relating stored vectors to the field.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Unordered sample pairs dropped by the distance floor.
    pub fn skipped_pairs(&self) -> usize {
        self.skipped_pairs
    }

    /// `exp(log_scale) · vectors`.
    pub fn absolute_vectors(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.vectors.iter().map(|v| v * s).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.vectors.chunks_exact(self.dim).map(norm).collect()
    }

    /// CSV with header `i,x_1..x_n,v_1..v_n,clipped`; velocities on the
    /// absolute scale, `clipped` as 0/1.
    pub fn to_csv(&self, points: &Points) -> Result<String> {
        if points.len() != self.len() || points.dim() != self.dim {
            return Err(Error::shape(
                format!("{} points in {} dimensions", self.len(), self.dim),
                format!("{} points in {} dimensions", points.len(), points.dim()),
            ));
        }
        let mut s = String::from("i");
        for k in 1..=self.dim {
            let _ = write!(s, ",x_{k}");
        }
        for k in 1..=self.dim {
            let _ = write!(s, ",v_{k}");
        }
        s.push_str(",clipped\n");
        let abs = self.absolute_vectors();
        for i in 0..self.len() {
            let _ = write!(s, "{i}");
            for c in points.row(i) {
                let _ = write!(s, ",{c}");
            }
            for c in &abs[i * self.dim..(i + 1) * self.dim] {
                let _ = write!(s, ",{c}");
            }
            let _ = writeln!(s, ",{}", u8::from(self.clipped[i]));
        }
        Ok(s)
    }
}

fn check_dim(points: &Points, dim: &Dim) -> Result<()> {
    if points.dim() != dim.n() {
        return Err(Error::shape(
            format!("{}-D points", dim.n()),
            format!("{}-D points", points.dim()),
        ));
    }
    Ok(())
}

/// Σ_j weight_j · ∇ₓk_n(target, source_j) over sources in the given order,
/// skipping sources closer than `floor`. Returns the sum and the skip count.
#[inline]
fn coulomb_sum(
    target: &[f64],
    sources: &[f64],
    weights: &[f64],
    dim: &Dim,
    floor2: f64,
    skip: Option<usize>,
    acc: &mut [f64],
) -> usize {
    let n = dim.n();
    let mut skipped = 0;
    let mut d = [0.0f64; 8];
    let mut d_heap;
    let d: &mut [f64] = if n <= 8 {
        &mut d[..n]
    } else {
        d_heap = vec![0.0; n];
        &mut d_heap
    };
    acc.iter_mut().for_each(|a| *a = 0.0);
    for (j, (src, w)) in sources.chunks_exact(n).zip(weights).enumerate() {
        if Some(j) == skip {
            continue;
        }
        let mut r2 = 0.0;
        for k in 0..n {
            d[k] = target[k] - src[k];
            r2 += d[k] * d[k];
        }
        if r2 == 0.0 || r2 < floor2 {
            skipped += 1;
            continue;
        }
        let s = -w * dim.green_factor(r2);
        for k in 0..n {
            acc[k] += s * d[k];
        }
    }
    skipped
}

/// Pairwise estimate of the integrable flow at every sample.
///
/// `exp(ℓ)` is evaluated relative to `max ℓ`; the discarded constant lands in
/// [`FlowField::log_scale`], so adding `c` to every `ℓ` changes only
/// `log_scale` (by `−c`).
pub fn estimate_flow(samples: &SampleSet, dim: &Dim, opts: &FlowOptions) -> Result<FlowField> {
    let points = &samples.points;
    check_dim(points, dim)?;
    let count = points.len();
    if count < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: count });
    }
    if samples.ell.len() != count || samples.delta_ell.len() != count {
        return Err(Error::shape(count, format!("{} / {}", samples.ell.len(), samples.delta_ell.len())));
    }
    if !samples.ell.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite log-density value".into()));
    }
    if !samples.delta_ell.iter().all(|v| v.is_finite()) || !points.all_finite() {
        return Err(Error::InvalidInput("non-finite sample or perturbation value".into()));
    }

    let n = dim.n();
    let order = canonical_order(points, &[&samples.ell, &samples.delta_ell]);
    let sorted = points.permuted(&order);
    let delta: Vec<f64> = order.iter().map(|&i| samples.delta_ell[i]).collect();
    // Centre about a reference value so equal inputs give exactly zero weights.
    let reference = delta[0];
    let offsets: Vec<f64> = delta.iter().map(|d| d - reference).collect();
    let mean_offset = offsets.iter().sum::<f64>() / count as f64;
    let weights: Vec<f64> = offsets.iter().map(|d| d - mean_offset).collect();
    let ell_max = samples.ell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor2 = opts.pair_distance_floor * opts.pair_distance_floor;

    // rank[i] = position of sample i in canonical order
    let mut rank = vec![0; count];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }

    let per_sample = par::map_range(count, |i| {
        let mut acc = vec![0.0; n];
        let skipped = coulomb_sum(
            points.row(i),
            sorted.as_slice(),
            &weights,
            dim,
            floor2,
            Some(rank[i]),
            &mut acc,
        );
        let s = (-(samples.ell[i] - ell_max)).exp() / (count - 1) as f64;
        acc.iter_mut().for_each(|a| *a *= s);
        (acc, skipped)
    });

    let mut vectors = Vec::with_capacity(count * n);
    let mut skipped = 0;
    for (v, s) in per_sample {
        vectors.extend(v);
        skipped += s;
    }
    if !vectors.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(
            "flow overflowed; log-density values span too wide a range".into(),
        ));
    }
    Ok(FlowField {
        dim: n,
        vectors,
        clipped: vec![false; count],
        log_scale: -ell_max,
        skipped_pairs: skipped / 2,
    })
}

/// Monte Carlo estimate of the flow with a known normalizer:
/// `v(xⁱ) = (1/p(xⁱ)) · (1/M) Σ_j (δp(zʲ)/p(zʲ)) · ∇ₓk_n(xⁱ, zʲ)` over
/// sources `zʲ ~ p`. Coincident target/source pairs are skipped.
pub fn estimate_flow_normalized(
    points: &Points,
    density: &[f64],
    sources: &Points,
    source_density: &[f64],
    source_delta_p: &[f64],
    dim: &Dim,
    opts: &FlowOptions,
) -> Result<FlowField> {
    check_dim(points, dim)?;
    check_dim(sources, dim)?;
    let (count, m) = (points.len(), sources.len());
    if m == 0 {
        return Err(Error::InsufficientSamples { need: 1, got: 0 });
    }
    if density.len() != count {
        return Err(Error::shape(count, density.len()));
    }
    if source_density.len() != m || source_delta_p.len() != m {
        return Err(Error::shape(m, format!("{} / {}", source_density.len(), source_delta_p.len())));
    }
    if density.iter().chain(source_density).any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidInput("densities must be positive and finite".into()));
    }
    if !source_delta_p.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite density perturbation".into()));
    }
    let n = dim.n();
    let weights: Vec<f64> = source_delta_p
        .iter()
        .zip(source_density)
        .map(|(d, p)| d / p)
        .collect();
    let floor2 = opts.pair_distance_floor * opts.pair_distance_floor;
    let per_sample = par::map_range(count, |i| {
        let mut acc = vec![0.0; n];
        let skipped = coulomb_sum(points.row(i), sources.as_slice(), &weights, dim, floor2, None, &mut acc);
        let s = 1.0 / (density[i] * m as f64);
        acc.iter_mut().for_each(|a| *a *= s);
        (acc, skipped)
    });
    let mut vectors = Vec::with_capacity(count * n);
    let mut skipped = 0;
    for (v, s) in per_sample {
        vectors.extend(v);
        skipped += s;
    }
    Ok(FlowField {
        dim: n,
        vectors,
        clipped: vec![false; count],
        log_scale: 0.0,
        skipped_pairs: skipped,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Caps every vector norm at `factor` times the median norm, keeping direction.
pub fn clip_flow(field: &FlowField, factor: f64) -> FlowField {
    let mut out = field.clone();
    if field.is_empty() {
        return out;
    }
    let norms = field.norms();
    let m = median(&norms);
    if m == 0.0 || !m.is_finite() {
        return out;
    }
    let limit = factor * m;
    for (i, nrm) in norms.iter().enumerate() {
        // Vectors already rescaled to `limit` may sit an ulp above it.
        if *nrm > limit * (1.0 + 1e-12) {
            let s = limit / nrm;
            out.vectors[i * field.dim..(i + 1) * field.dim]
                .iter_mut()
                .for_each(|v| *v *= s);
            out.clipped[i] = true;
        }
    }
    out
}

/// `xⁱ + ε·vⁱ` with the field on its absolute scale.
pub fn apply_flow(points: &Points, field: &FlowField, epsilon: f64) -> Result<Points> {
    if points.len() != field.len() || points.dim() != field.dim {
        return Err(Error::shape(
            format!("{} points in {} dimensions", field.len(), field.dim),
            format!("{} points in {} dimensions", points.len(), points.dim()),
        ));
    }
    let step = epsilon * field.log_scale.exp();
    let coords = points
        .as_slice()
        .iter()
        .zip(&field.vectors)
        .map(|(x, v)| x + step * v)
        .collect();
    Points::new(points.dim(), coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_point_set(delta: [f64; 3]) -> SampleSet {
        let pts = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        SampleSet::new(pts, vec![0.0; 3], delta.to_vec(), 0).unwrap()
    }

    #[test]
    fn three_point_hand_values() {
        // weights (2/3, −1/3, −1/3), ∇k(r) = −r/(2π|r|²), factor 1/(N−1) = 1/2
        let f = estimate_flow(&three_point_set([1.0, 0.0, 0.0]), &Dim::new(2).unwrap(), &FlowOptions::default()).unwrap();
        let pi = std::f64::consts::PI;
        let expected = [
            [-1.0 / (12.0 * pi), -1.0 / (12.0 * pi)],
            [-1.0 / (8.0 * pi), -1.0 / (24.0 * pi)],
            [-1.0 / (24.0 * pi), -1.0 / (8.0 * pi)],
        ];
        for (i, e) in expected.iter().enumerate() {
            for k in 0..2 {
                assert!((f.vector(i)[k] - e[k]).abs() < 1e-15, "v[{i}][{k}]");
            }
        }
        assert_eq!(f.log_scale(), 0.0);
    }

    #[test]
    fn constant_delta_gives_zero() {
        let f = estimate_flow(&three_point_set([0.4, 0.4, 0.4]), &Dim::new(2).unwrap(), &FlowOptions::default()).unwrap();
        assert!(f.vectors().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_few_samples_and_bad_input() {
        let d = Dim::new(2).unwrap();
        let pts = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let mut s = SampleSet::new(pts, vec![0.0; 2], vec![1.0, 0.0], 0).unwrap();
        s.ell[0] = f64::INFINITY;
        assert!(matches!(estimate_flow(&s, &d, &FlowOptions::default()), Err(Error::InvalidInput(_))));
        s.ell[0] = 0.0;
        s.points = Points::from_rows(&[[0.0, 0.0]]).unwrap();
        s.ell.truncate(1);
        s.delta_ell.truncate(1);
        assert!(matches!(
            estimate_flow(&s, &d, &FlowOptions::default()),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn coincident_pairs_are_skipped_and_counted() {
        let pts = Points::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 1e-12]]).unwrap();
        let s = SampleSet::new(pts, vec![0.0; 4], vec![1.0, -1.0, 0.5, 0.0], 0).unwrap();
        let f = estimate_flow(&s, &Dim::new(2).unwrap(), &FlowOptions::default()).unwrap();
        assert_eq!(f.skipped_pairs(), 2);
        assert!(f.vectors().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn clip_examples() {
        let f = FlowField::from_vectors(2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]).unwrap();
        assert_eq!(clip_flow(&f, 10.0), f);

        let f = FlowField::from_vectors(2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8, 600.0, 800.0]).unwrap();
        let c = clip_flow(&f, 10.0);
        assert_eq!(&c.vectors()[..6], &f.vectors()[..6]);
        assert!((c.vector(3)[0] - 6.0).abs() < 1e-12 && (c.vector(3)[1] - 8.0).abs() < 1e-12);
        assert_eq!(c.clipped(), &[false, false, false, true]);
        assert_eq!(clip_flow(&c, 10.0), c);

        let z = FlowField::from_vectors(2, vec![0.0; 6]).unwrap();
        assert_eq!(clip_flow(&z, 10.0), z);
    }

    #[test]
    fn apply_examples() {
        let pts = Points::new(2, vec![0.0; 6]).unwrap();
        let f = FlowField::from_vectors(2, vec![1.0; 6]).unwrap();
        assert_eq!(apply_flow(&pts, &f, 0.0).unwrap(), pts);
        assert_eq!(apply_flow(&pts, &f, 1.0).unwrap().as_slice(), &[1.0; 6]);
        let short = FlowField::from_vectors(2, vec![1.0; 4]).unwrap();
        assert!(apply_flow(&pts, &short, 1.0).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let pts = Points::from_rows(&[[0.5, 1.0], [2.0, -1.0]]).unwrap();
        let mut f = FlowField::from_vectors(2, vec![0.25, 0.0, -1.0, 2.0]).unwrap();
        f.clipped[1] = true;
        let csv = f.to_csv(&pts).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "i,x_1,x_2,v_1,v_2,clipped");
        assert_eq!(lines[1], "0,0.5,1,0.25,0,0");
        assert_eq!(lines[2], "1,2,-1,-1,2,1");
    }

    #[test]
    fn normalized_rejects_nonpositive_density() {
        let d = Dim::new(2).unwrap();
        let pts = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let r = estimate_flow_normalized(&pts, &[0.1, 0.0], &pts, &[0.1, 0.1], &[0.0, 0.0], &d, &FlowOptions::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
        let f = estimate_flow_normalized(&pts, &[0.1, 0.2], &pts, &[0.1, 0.2], &[0.0, 0.0], &d, &FlowOptions::default()).unwrap();
        assert!(f.vectors().iter().all(|v| *v == 0.0));
    }
}
