//! Kernelized Stein discrepancy with an RBF kernel.
//!
//! The Stein kernel for a target with score `s = ∇ℓ` is
//!
//! ```text
//! h(x, y) = s(x)ᵀs(y)·k + s(x)ᵀ∇ᵧk + ∇ₓkᵀs(y) + Tr(∇ₓ∇ᵧk)
//! ```
//!
//! and the U-statistic averages `h` over ordered pairs of distinct samples.
//! Only the score enters, so the target may be unnormalized.

use crate::error::{Error, Result};
use crate::kernels::RbfBandwidth;
use crate::par;
use crate::points::{canonical_order, sq_dist, Points};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsdResult {
    pub ustat: f64,
    pub bandwidth: f64,
    pub n_samples: usize,
}

impl KsdResult {
    pub const CSV_HEADER: &'static str = "epsilon,ustat,bandwidth,n_samples";

    pub fn csv_row(&self, epsilon: f64) -> String {
        format!("{},{},{},{}", epsilon, self.ustat, self.bandwidth, self.n_samples)
    }
}

const MEDIAN_BUCKETS: usize = 4096;
const ROW_BLOCKS: usize = 64;

/// Median of all `N(N−1)/2` pairwise Euclidean distances.
///
/// Exact, without materialising every distance: a first pass histograms the
/// distances, a second pass collects only the bucket(s) holding the central
/// order statistic(s).
pub fn median_bandwidth(points: &Points) -> Result<f64> {
    let count = points.len();
    if count < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: count });
    }
    if !points.all_finite() {
        return Err(Error::InvalidInput("non-finite sample coordinate".into()));
    }
    let n = points.dim();
    let mut span2 = 0.0;
    for k in 0..n {
        let (lo, hi) = points
            .rows()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[k]), hi.max(r[k])));
        span2 += (hi - lo) * (hi - lo);
    }
    if span2 == 0.0 {
        return Err(Error::DegenerateData("all points coincide"));
    }
    // Slightly inflated so the largest distance stays inside the last bucket.
    let upper = span2.sqrt() * (1.0 + 1e-9);
    let bucket = |d: f64| ((d / upper * MEDIAN_BUCKETS as f64) as usize).min(MEDIAN_BUCKETS - 1);

    let block = count.div_ceil(ROW_BLOCKS);
    let blocks = count.div_ceil(block);
    let rows = |b: usize| b * block..((b + 1) * block).min(count);

    let hists = par::map_range(blocks, |b| {
        let mut h = vec![0u64; MEDIAN_BUCKETS];
        for i in rows(b) {
            for j in i + 1..count {
                h[bucket(sq_dist(points.row(i), points.row(j)).sqrt())] += 1;
            }
        }
        h
    });
    let mut hist = vec![0u64; MEDIAN_BUCKETS];
    for h in &hists {
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
    }

    let total = (count * (count - 1) / 2) as u64;
    let ranks = if total % 2 == 1 {
        [total / 2, total / 2]
    } else {
        [total / 2 - 1, total / 2]
    };
    let locate = |rank: u64| {
        let mut acc = 0u64;
        for (b, c) in hist.iter().enumerate() {
            if acc + c > rank {
                return (b, acc);
            }
            acc += c;
        }
        unreachable!("rank below total pair count")
    };
    let (b_lo, below) = locate(ranks[0]);
    let (b_hi, _) = locate(ranks[1]);

    let mut window: Vec<f64> = par::map_range(blocks, |b| {
        let mut v = Vec::new();
        for i in rows(b) {
            for j in i + 1..count {
                let d = sq_dist(points.row(i), points.row(j)).sqrt();
                let k = bucket(d);
                if k >= b_lo && k <= b_hi {
                    v.push(d);
                }
            }
        }
        v
    })
    .into_iter()
    .flatten()
    .collect();
    window.sort_unstable_by(|a, b| a.total_cmp(b));
    let lo = window[(ranks[0] - below) as usize];
    let hi = window[(ranks[1] - below) as usize];
    let median = 0.5 * (lo + hi);
    if median <= 0.0 {
        return Err(Error::DegenerateData("median pairwise distance is zero"));
    }
    Ok(median)
}

/// Stein kernel `h(x, y)` for scores `sx = ∇ℓ(x)`, `sy = ∇ℓ(y)`.
#[inline]
pub fn stein_kernel(x: &[f64], y: &[f64], sx: &[f64], sy: &[f64], bw: RbfBandwidth) -> f64 {
    let s2 = bw.sigma() * bw.sigma();
    let (mut r2, mut ss, mut sxd, mut syd) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..x.len() {
        let d = x[k] - y[k];
        r2 += d * d;
        ss += sx[k] * sy[k];
        sxd += sx[k] * d;
        syd += sy[k] * d;
    }
    let kern = (-r2 / (2.0 * s2)).exp();
    let n = x.len() as f64;
    // ∇ᵧk = d k/σ², ∇ₓk = −d k/σ², Tr(∇ₓ∇ᵧk) = (n/σ² − r²/σ⁴) k
    kern * (ss + (sxd - syd) / s2 + n / s2 - r2 / (s2 * s2))
}

/// U-statistic from precomputed scores (row-major, one per point).
pub fn ksd_ustat_with_scores(points: &Points, scores: &[f64], bw: RbfBandwidth) -> Result<KsdResult> {
    let count = points.len();
    let n = points.dim();
    if count < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: count });
    }
    if scores.len() != count * n {
        return Err(Error::shape(count * n, scores.len()));
    }
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite score value".into()));
    }
    if !points.all_finite() {
        return Err(Error::InvalidInput("non-finite sample coordinate".into()));
    }

    let score_rows: Vec<&[f64]> = scores.chunks_exact(n).collect();
    let channels: Vec<Vec<f64>> = (0..n).map(|k| score_rows.iter().map(|s| s[k]).collect()).collect();
    let channel_refs: Vec<&[f64]> = channels.iter().map(|c| c.as_slice()).collect();
    let order = canonical_order(points, &channel_refs);
    let pts = points.permuted(&order);
    let sc: Vec<f64> = order.iter().flat_map(|&i| score_rows[i].iter().copied()).collect();

    let row_sums = par::map_range(count, |i| {
        let (xi, si) = (pts.row(i), &sc[i * n..(i + 1) * n]);
        (i + 1..count)
            .map(|j| stein_kernel(xi, pts.row(j), si, &sc[j * n..(j + 1) * n], bw))
            .sum::<f64>()
    });
    let upper: f64 = row_sums.iter().sum();
    Ok(KsdResult {
        ustat: 2.0 * upper / (count as f64 * (count - 1) as f64),
        bandwidth: bw.sigma(),
        n_samples: count,
    })
}

/// U-statistic of `points` against a target with score function `score`.
pub fn ksd_ustat<F>(points: &Points, score: F, bw: RbfBandwidth) -> Result<KsdResult>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync + Send,
{
    let n = points.dim();
    let rows = par::map_range(points.len(), |i| score(points.row(i)));
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::shape(format!("scores of length {n}"), "other length"));
    }
    let scores: Vec<f64> = rows.into_iter().flatten().collect();
    ksd_ustat_with_scores(points, &scores, bw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::rbf_kernel_derivatives;

    fn brute_median(points: &Points) -> f64 {
        let mut d = Vec::new();
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                d.push(sq_dist(points.row(i), points.row(j)).sqrt());
            }
        }
        d.sort_by(|a, b| a.total_cmp(b));
        let m = d.len();
        if m % 2 == 1 {
            d[m / 2]
        } else {
            0.5 * (d[m / 2 - 1] + d[m / 2])
        }
    }

    #[test]
    fn median_examples() {
        let two = Points::from_rows(&[[0.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(median_bandwidth(&two).unwrap(), 3.0);
        let three = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(median_bandwidth(&three).unwrap(), 2.0);
        let same = Points::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(median_bandwidth(&same), Err(Error::DegenerateData(_))));
        let one = Points::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(median_bandwidth(&one).is_err());
    }

    #[test]
    fn median_matches_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for count in [2, 3, 4, 7, 50, 201, 400] {
            let coords: Vec<f64> = (0..count * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = Points::new(3, coords).unwrap();
            assert_eq!(median_bandwidth(&p).unwrap(), brute_median(&p), "N={count}");
        }
    }

    #[test]
    fn stein_kernel_matches_four_terms() {
        let bw = RbfBandwidth::new(0.8).unwrap();
        let (x, y) = ([0.3, -0.2, 1.0], [-0.5, 0.4, 0.7]);
        let (sx, sy) = ([1.0, 0.5, -2.0], [0.2, -1.0, 0.3]);
        let d = rbf_kernel_derivatives(&x, &y, bw).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let expected = dot(&sx, &sy) * d.value + dot(&sx, &d.grad_y) + dot(&d.grad_x, &sy) + d.trace_hessian_xy;
        let got = stein_kernel(&x, &y, &sx, &sy, bw);
        assert!((got - expected).abs() < 1e-14);
        let swapped = stein_kernel(&y, &x, &sy, &sx, bw);
        assert!((got - swapped).abs() <= 1e-12 * got.abs());
    }

    #[test]
    fn ustat_rejects_bad_scores() {
        let p = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let bw = RbfBandwidth::new(1.0).unwrap();
        assert!(matches!(
            ksd_ustat(&p, |_| vec![f64::NAN, 0.0], bw),
            Err(Error::InvalidInput(_))
        ));
        assert!(ksd_ustat_with_scores(&p, &[0.0; 3], bw).is_err());
    }

    #[test]
    fn csv_row_format() {
        let r = KsdResult {
            ustat: 0.5,
            bandwidth: 1.25,
            n_samples: 10,
        };
        assert_eq!(r.csv_row(0.001), "0.001,0.5,1.25,10");
        assert_eq!(KsdResult::CSV_HEADER, "epsilon,ustat,bandwidth,n_samples");
    }
}
