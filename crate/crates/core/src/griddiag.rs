//! Regular 2-D grids for diagnostics: KDE, KDE differences, median filtering
//! and pointwise evaluation.
//!
//! Grids are cell-centred: node `(i, j)` sits at the centre of cell `i` along
//! x and cell `j` along y. Values are stored row-major with y as the outer
//! index, `values[j * nx + i]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::points::Points;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub const MIN_NODES: usize = 8;

    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        let spec = Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Square window `[lo, hi]²` with `nodes` cells per axis.
    pub fn square(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        Self::new(lo, hi, lo, hi, nodes, nodes)
    }

    /// Window covering every point plus `margin` on each side.
    pub fn enclosing(points: &Points, margin: f64, nx: usize, ny: usize) -> Result<Self> {
        if points.dim() != 2 || points.is_empty() {
            return Err(Error::InvalidGrid("enclosing grid needs non-empty 2-D points".into()));
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points.rows() {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        Self::new(x0 - margin, x1 + margin, y0 - margin, y1 + margin, nx, ny)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::InvalidGrid(format!(
                "window [{}, {}] x [{}, {}] is empty or non-finite",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        if self.nx < Self::MIN_NODES || self.ny < Self::MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "{}x{} nodes; need at least {} per axis",
                self.nx,
                self.ny,
                Self::MIN_NODES
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y_min + (j as f64 + 0.5) * self.dy()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same window with both node counts multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            nx: self.nx * factor,
            ny: self.ny * factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::shape(spec.len(), values.len()));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spec.nx + i]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Riemann sum `Σ v·dx·dy`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_area()
    }

    pub fn abs_integral(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.spec.cell_area()
    }

    /// `(i, j)` of the largest value (first in storage order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best % self.spec.nx, best / self.spec.nx)
    }

    /// `x,y,value` rows in storage order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,value\n");
        for j in 0..self.spec.ny {
            for i in 0..self.spec.nx {
                let _ = writeln!(s, "{},{},{}", self.spec.x(i), self.spec.y(j), self.get(i, j));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    pub spec: GridSpec,
    /// Interleaved `(u, v)` per node.
    pub values: Vec<f64>,
}

impl VectorGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != 2 * spec.len() {
            return Err(Error::shape(2 * spec.len(), values.len()));
        }
        Ok(Self { spec, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        let k = 2 * (j * self.spec.nx + i);
        [self.values[k], self.values[k + 1]]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,u,v\n");
        for j in 0..self.spec.ny {
            for i in 0..self.spec.nx {
                let [u, v] = self.get(i, j);
                let _ = writeln!(s, "{},{},{},{}", self.spec.x(i), self.spec.y(j), u, v);
            }
        }
        s
    }
}

fn require_2d(points: &Points) -> Result<()> {
    if points.dim() != 2 {
        return Err(Error::shape("2-D points", format!("{}-D points", points.dim())));
    }
    Ok(())
}

/// Gaussian KDE `(1/(N·2πσ²)) Σᵢ exp(−|g − xᵢ|²/(2σ²))` at every node.
pub fn kde(points: &Points, bandwidth: f64, spec: &GridSpec) -> Result<ScalarGrid> {
    spec.validate()?;
    require_2d(points)?;
    if points.is_empty() {
        return Err(Error::InsufficientSamples { need: 1, got: 0 });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidInput(format!("KDE bandwidth {bandwidth}")));
    }
    let (nx, ny) = (spec.nx, spec.ny);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    // The Gaussian factorises over axes, so each node weight is ex[i]·ey[j].
    let ex: Vec<f64> = points
        .rows()
        .flat_map(|p| (0..nx).map(move |i| (-(spec.x(i) - p[0]).powi(2) * inv).exp()))
        .collect();
    let ey: Vec<f64> = points
        .rows()
        .flat_map(|p| (0..ny).map(move |j| (-(spec.y(j) - p[1]).powi(2) * inv).exp()))
        .collect();
    let norm = 1.0 / (points.len() as f64 * 2.0 * std::f64::consts::PI * bandwidth * bandwidth);
    let mut values = vec![0.0; spec.len()];
    par::for_each_chunk_mut(&mut values, nx, |j, row| {
        for p in 0..points.len() {
            let wy = ey[p * ny + j];
            if wy == 0.0 {
                continue;
            }
            for (r, e) in row.iter_mut().zip(&ex[p * nx..(p + 1) * nx]) {
                *r += wy * e;
            }
        }
        for r in row.iter_mut() {
            *r *= norm;
        }
    });
    ScalarGrid::new(*spec, values)
}

/// `(kde(after) − kde(before)) / step`: a finite-difference estimate of the
/// density change produced by moving `before` to `after` over a step `step`.
pub fn kde_difference(
    before: &Points,
    after: &Points,
    bandwidth: f64,
    step: f64,
    spec: &GridSpec,
) -> Result<ScalarGrid> {
    if before.len() != after.len() || before.dim() != after.dim() {
        return Err(Error::shape(
            format!("{} points", before.len()),
            format!("{} points", after.len()),
        ));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("KDE step {step}")));
    }
    let a = kde(after, bandwidth, spec)?;
    let b = kde(before, bandwidth, spec)?;
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) / step)
        .collect();
    ScalarGrid::new(*spec, values)
}

fn median_of(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    buf.sort_unstable_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// `window × window` median filter; border nodes use only in-bounds cells.
pub fn median_filter(grid: &ScalarGrid, window: usize) -> Result<ScalarGrid> {
    let (nx, ny) = (grid.spec.nx, grid.spec.ny);
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidWindow {
            window,
            reason: "window must be odd and at least 3",
        });
    }
    if window > nx.min(ny) {
        return Err(Error::InvalidWindow {
            window,
            reason: "window exceeds grid size",
        });
    }
    let half = window / 2;
    let mut values = vec![0.0; grid.values.len()];
    par::for_each_chunk_mut(&mut values, nx, |j, row| {
        let mut buf = Vec::with_capacity(window * window);
        let (j0, j1) = (j.saturating_sub(half), (j + half).min(ny - 1));
        for (i, out) in row.iter_mut().enumerate() {
            let (i0, i1) = (i.saturating_sub(half), (i + half).min(nx - 1));
            buf.clear();
            for jj in j0..=j1 {
                buf.extend_from_slice(&grid.values[jj * nx + i0..=jj * nx + i1]);
            }
            *out = median_of(&mut buf);
        }
    });
    ScalarGrid::new(grid.spec, values)
}

/// Evaluates `f` at every node; a non-finite value is an error naming the node.
pub fn evaluate_scalar<F>(f: F, spec: &GridSpec) -> Result<ScalarGrid>
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
{
    spec.validate()?;
    let values = par::map_range(spec.len(), |k| {
        let (x, y) = (spec.x(k % spec.nx), spec.y(k / spec.nx));
        let v = f(x, y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteAt { x, y })
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    ScalarGrid::new(*spec, values)
}

pub fn evaluate_vector<F>(f: F, spec: &GridSpec) -> Result<VectorGrid>
where
    F: Fn(f64, f64) -> [f64; 2] + Sync + Send,
{
    spec.validate()?;
    let nodes = par::map_range(spec.len(), |k| {
        let (x, y) = (spec.x(k % spec.nx), spec.y(k / spec.nx));
        let v = f(x, y);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFiniteAt { x, y })
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    VectorGrid::new(*spec, nodes.into_iter().flatten().collect())
}

/// Pearson correlation over the entries where `mask` is true.
pub fn pearson(a: &[f64], b: &[f64], mask: &[bool]) -> Result<f64> {
    if a.len() != b.len() || a.len() != mask.len() {
        return Err(Error::shape(a.len(), format!("{} and {}", b.len(), mask.len())));
    }
    let idx: Vec<usize> = (0..a.len()).filter(|&k| mask[k]).collect();
    if idx.len() < 2 {
        return Err(Error::DegenerateData("fewer than two masked entries"));
    }
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&k| a[k]).sum::<f64>() / n;
    let mb = idx.iter().map(|&k| b[k]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &k in &idx {
        let (da, db) = (a[k] - ma, b[k] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateData("zero variance in correlation input"));
    }
    Ok(sab / (saa * sbb).sqrt())
}
