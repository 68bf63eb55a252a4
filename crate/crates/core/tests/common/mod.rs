#![allow(dead_code)]

use intflow::{Points, SampleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Γ(n/2)/(2π^{n/2}) from the integer/half-integer recurrence, not the crate's gamma.
pub fn green_coefficient(n: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let mut gamma = if n % 2 == 0 { 1.0 } else { pi.sqrt() };
    let mut a = if n % 2 == 0 { 1.0 } else { 0.5 };
    while a < n as f64 / 2.0 - 1e-9 {
        gamma *= a;
        a += 1.0;
    }
    gamma / (2.0 * pi.powf(n as f64 / 2.0))
}

/// Scalar-by-scalar double loop of the unnormalized flow estimator with
/// `∇ₓk = −G`, centering over all samples.
pub fn naive_flow(points: &[Vec<f64>], ell: &[f64], delta: &[f64]) -> Vec<Vec<f64>> {
    let count = points.len();
    let n = points[0].len();
    let c = green_coefficient(n);
    let mut mean = 0.0;
    for d in delta {
        mean += d;
    }
    mean /= count as f64;
    let mut out = Vec::new();
    for i in 0..count {
        let mut v = vec![0.0; n];
        for j in 0..count {
            if j == i {
                continue;
            }
            let mut r2 = 0.0;
            for k in 0..n {
                r2 += (points[i][k] - points[j][k]).powi(2);
            }
            let r = r2.sqrt();
            for k in 0..n {
                let g = c * (points[i][k] - points[j][k]) / r.powi(n as i32);
                v[k] -= (delta[j] - mean) * g;
            }
        }
        let s = 1.0 / ((count - 1) as f64 * ell[i].exp());
        out.push(v.into_iter().map(|x| x * s).collect());
    }
    out
}

pub fn rows(points: &Points) -> Vec<Vec<f64>> {
    points.rows().map(|r| r.to_vec()).collect()
}

/// Largest absolute entry.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Max entrywise difference relative to the largest entry of `b`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = max_abs(b).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Random sample set with uniform coordinates, `ℓ ∈ [−3, 3]`, `δℓ ∈ [−1, 1]`.
pub fn random_samples(n: usize, count: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<f64> = (0..n * count).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ell: Vec<f64> = (0..count).map(|_| rng.random_range(-3.0..3.0)).collect();
    let delta: Vec<f64> = (0..count).map(|_| rng.random_range(-1.0..1.0)).collect();
    SampleSet::new(Points::new(n, coords).unwrap(), ell, delta, seed).unwrap()
}

/// Random rotation in `n` dimensions via Gram-Schmidt on a Gaussian matrix.
pub fn random_rotation(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nv > 1e-6 {
            q.push(v.into_iter().map(|a| a / nv).collect());
        }
    }
    q
}

pub fn rotate(r: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    r.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn rotate_points(r: &[Vec<f64>], p: &Points) -> Points {
    let rows: Vec<Vec<f64>> = p.rows().map(|x| rotate(r, x)).collect();
    Points::from_rows(&rows).unwrap()
}
