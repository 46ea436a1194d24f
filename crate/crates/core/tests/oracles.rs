mod support;

use dgen::pool::kmeans;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

#[test]
fn snn_matches_set_intersection() {
    let tally = snn_suite(1, 100);
    assert!(tally.passed(), "{}", tally.summary());
}

#[test]
fn ncpool_matches_sorting_by_score() {
    let tally = ncpool_suite(2, 100);
    assert!(tally.passed(), "{}", tally.summary());
}

#[test]
fn topk_matches_sorting_by_projection() {
    let tally = topk_suite(3, 100);
    assert!(tally.passed(), "{}", tally.summary());
}

#[test]
fn assignment_matches_exhaustive_distances() {
    let tally = assignment_suite(4, 100);
    assert!(tally.passed(), "{}", tally.summary());
}

#[test]
fn metrics_match_exhaustive_definitions() {
    let tally = metrics_suite(5, 200);
    assert!(tally.passed(), "{}", tally.summary());
}

#[test]
fn worked_metric_examples() {
    assert_eq!(brute_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 2]), 0.75);
    assert_eq!(dgen::metrics::accuracy(&[0, 0, 1, 1], &[1, 1, 0, 2]).unwrap(), 0.75);
}

/// Plain Lloyd from random distinct points, best of many restarts.
fn restart_oracle(points: &Array2<f64>, c: usize, restarts: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.nrows();
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..c {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        let mut centers: Vec<[f64; 2]> = idx[..c].iter().map(|&i| [points[[i, 0]], points[[i, 1]]]).collect();
        let mut inertia = f64::INFINITY;
        for _ in 0..100 {
            let mut sums = vec![[0.0, 0.0]; c];
            let mut counts = vec![0usize; c];
            inertia = 0.0;
            for p in points.rows() {
                let d = |k: usize| (p[0] - centers[k][0]).powi(2) + (p[1] - centers[k][1]).powi(2);
                let k = (0..c).fold(0, |b, k| if d(k) < d(b) { k } else { b });
                inertia += d(k);
                sums[k][0] += p[0];
                sums[k][1] += p[1];
                counts[k] += 1;
            }
            for k in 0..c {
                if counts[k] > 0 {
                    centers[k] = [sums[k][0] / counts[k] as f64, sums[k][1] / counts[k] as f64];
                }
            }
        }
        best = best.min(inertia);
    }
    best
}

#[test]
fn kmeans_is_close_to_many_restarts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..5 {
        let points = Array2::from_shape_simple_fn((30, 2), || rng.random_range(-5.0..5.0));
        let model = kmeans(&points, 3, trial, 300, 1e-10).unwrap();
        let oracle = restart_oracle(&points, 3, 500, trial);
        assert!(model.inertia <= oracle * 1.05, "trial {trial}: {} vs {oracle}", model.inertia);
    }
}
