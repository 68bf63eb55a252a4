mod common;

use common::*;
use intflow::ksd::{ksd_ustat, ksd_ustat_with_scores, median_bandwidth};
use intflow::{GaussianMixture, Points, RbfBandwidth};
use proptest::prelude::*;

fn standard_score(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| -v).collect()
}

#[test]
fn two_point_hand_case() {
    // x = (0,0), y = (1,0), s = −x, σ = 1: s(x) = 0, so only ∇ₓk·s(y) and
    // the trace term survive.
    let bw = RbfBandwidth::new(1.0).unwrap();
    let k = (-0.5f64).exp();
    let grad_x_term = -k; // ∇ₓk = (y − x)k = (k, 0), s(y) = (−1, 0)
    let trace_2d = (2.0 - 1.0) * k; // (n/σ² − r²/σ⁴)k
    let p = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
    let r = ksd_ustat(&p, standard_score, bw).unwrap();
    assert!((r.ustat - (grad_x_term + trace_2d)).abs() < 1e-15);
    assert_eq!(r.n_samples, 2);
    assert_eq!(r.bandwidth, 1.0);

    let trace_1d = (1.0 - 1.0) * k;
    let q = Points::from_rows(&[[0.0], [1.0]]).unwrap();
    let r = ksd_ustat(&q, standard_score, bw).unwrap();
    assert!((r.ustat - (grad_x_term + trace_1d)).abs() < 1e-15);
}

#[test]
fn null_mean_is_within_three_standard_errors() {
    let mix = GaussianMixture::standard_normal(2).unwrap();
    let stats: Vec<f64> = (0..20)
        .map(|s| {
            let p = mix.sample(500, 100 + s).unwrap();
            let bw = RbfBandwidth::new(median_bandwidth(&p).unwrap()).unwrap();
            ksd_ustat(&p, standard_score, bw).unwrap().ustat
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / 20.0;
    let sd = (stats.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
    assert!(mean.abs() < 3.0 * sd / 20f64.sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn shifted_samples_score_higher_every_time() {
    let null = GaussianMixture::standard_normal(2).unwrap();
    let alt = GaussianMixture::gaussian(vec![2.0, 2.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    for s in 0..10 {
        let a = null.sample(500, 200 + s).unwrap();
        let b = alt.sample(500, 200 + s).unwrap();
        let bw = RbfBandwidth::new(median_bandwidth(&a).unwrap()).unwrap();
        let ua = ksd_ustat(&a, standard_score, bw).unwrap().ustat;
        let ub = ksd_ustat(&b, standard_score, bw).unwrap().ustat;
        assert!(ub > ua, "repeat {s}: {ub} <= {ua}");
    }
}

fn brute_ordered_pairs(p: &Points, scores: &[f64], bw: RbfBandwidth) -> f64 {
    let n = p.dim();
    let count = p.len();
    let mut total = 0.0;
    for i in 0..count {
        for j in 0..count {
            if i == j {
                continue;
            }
            let d = intflow::kernels::rbf_kernel_derivatives(p.row(i), p.row(j), bw).unwrap();
            let (si, sj) = (&scores[i * n..(i + 1) * n], &scores[j * n..(j + 1) * n]);
            let mut h = d.trace_hessian_xy;
            for k in 0..n {
                h += si[k] * sj[k] * d.value + si[k] * d.grad_y[k] + d.grad_x[k] * sj[k];
            }
            total += h;
        }
    }
    total / (count * (count - 1)) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ustat_matches_ordered_pair_sum(
        (n, coords, scores) in (1usize..=4, 2usize..=12).prop_flat_map(|(n, c)| (
            Just(n),
            prop::collection::vec(-2.0f64..2.0, n * c),
            prop::collection::vec(-2.0f64..2.0, n * c),
        )),
        sigma in 0.2f64..3.0,
    ) {
        let p = Points::new(n, coords).unwrap();
        let bw = RbfBandwidth::new(sigma).unwrap();
        let fast = ksd_ustat_with_scores(&p, &scores, bw).unwrap().ustat;
        let slow = brute_ordered_pairs(&p, &scores, bw);
        prop_assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()));
    }

    #[test]
    fn median_bandwidth_is_rigid_motion_invariant(seed in any::<u64>(), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
        let s = random_samples(3, 40, seed);
        let r = random_rotation(3, seed ^ 1);
        let moved = rotate_points(&r, &s.points).map_rows(|x, y| {
            for k in 0..3 {
                y[k] = x[k] + shift[k];
            }
        });
        let a = median_bandwidth(&s.points).unwrap();
        let b = median_bandwidth(&moved).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a);
    }
}
