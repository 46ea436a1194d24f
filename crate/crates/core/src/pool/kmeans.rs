use ndarray::{Array2, ArrayView1};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Independent k-means++ initializations per call; the lowest-inertia
/// run wins.
pub const RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansModel {
    pub centers: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning run.
    pub history: Vec<f64>,
}

impl KmeansModel {
    pub fn num_clusters(&self) -> usize {
        self.centers.nrows()
    }

    /// Index of and squared distance to the closest center.
    pub fn nearest_center(&self, point: ArrayView1<f64>) -> (usize, f64) {
        nearest(point, &self.centers)
    }
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.rows().into_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Assigns every point to its nearest center (lowest index on ties) and
/// returns the assignments with the total squared distance.
pub fn assign(points: &Array2<f64>, centers: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .rows()
        .into_iter()
        .map(|p| {
            let (j, d) = nearest(p, centers);
            inertia += d;
            j
        })
        .collect();
    (labels, inertia)
}

fn plus_plus_init(points: &Array2<f64>, c: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((c, points.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut closest: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();
    for k in 1..c {
        let pick = match WeightedIndex::new(&closest) {
            Ok(dist) => dist.sample(rng),
            // Every point already coincides with a center.
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(k).assign(&points.row(pick));
        for (d, p) in closest.iter_mut().zip(points.rows()) {
            *d = d.min(squared_distance(p, points.row(pick)));
        }
    }
    centers
}

fn lloyd(points: &Array2<f64>, mut centers: Array2<f64>, max_iter: usize, tol: f64) -> KmeansModel {
    let (n, dim) = points.dim();
    let c = centers.nrows();
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let (labels, inertia) = assign(points, &centers);
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * f64::max(prev, 1.0),
                "inertia rose from {prev} to {inertia}"
            );
        }
        history.push(inertia);

        let mut sums = Array2::<f64>::zeros((c, dim));
        let mut counts = vec![0usize; c];
        for (p, &l) in points.rows().into_iter().zip(&labels) {
            let mut row = sums.row_mut(l);
            row += &p;
            counts[l] += 1;
        }
        let mut updated = centers.clone();
        for j in 0..c {
            if counts[j] > 0 {
                updated.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            }
        }
        // Empty clusters move to the point farthest from its own center.
        let mut taken = vec![false; n];
        for j in (0..c).filter(|&j| counts[j] == 0) {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, squared_distance(points.row(i), updated.row(labels[i]))))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                updated.row_mut(j).assign(&points.row(i));
            }
        }

        let shift = centers
            .rows()
            .into_iter()
            .zip(updated.rows())
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = updated;
        if shift < tol {
            break;
        }
    }
    let (assignments, inertia) = assign(points, &centers);
    if let Some(&prev) = history.last() {
        debug_assert!(inertia <= prev + 1e-9 * f64::max(prev, 1.0));
    }
    history.push(inertia);
    KmeansModel {
        centers,
        assignments,
        inertia,
        history,
    }
}

/// K-means with k-means++ seeding and Lloyd iterations, run until the
/// largest center move is below `tol` or `max_iter` steps. Deterministic
/// for a fixed seed.
pub fn kmeans(points: &Array2<f64>, c: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KmeansModel> {
    let n = points.nrows();
    if c == 0 || c > n {
        return Err(Error::contract(format!("cannot form {c} clusters from {n} points")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            op: "kmeans",
            message: "non-finite coordinate".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KmeansModel> = None;
    for _ in 0..RESTARTS {
        let init = plus_plus_init(points, c, &mut rng);
        let model = lloyd(points, init, max_iter.max(1), tol);
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    #[test]
    fn one_cluster_is_the_mean() {
        let points = array![[0.0, 0.0], [2.0, 0.0], [1.0, 3.0], [5.0, 1.0]];
        let model = kmeans(&points, 1, 0, 100, 1e-10).unwrap();
        let mean = points.mean_axis(Axis(0)).unwrap();
        assert!((&model.centers.row(0) - &mean).iter().all(|d| d.abs() < 1e-12));
        let variance: f64 = points.var_axis(Axis(0), 0.0).sum();
        assert!((model.inertia - variance * 4.0).abs() < 1e-9);
    }

    #[test]
    fn separated_pairs_are_found() {
        let points = array![[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]];
        let model = kmeans(&points, 2, 3, 100, 1e-10).unwrap();
        assert!((model.inertia - 1.0).abs() < 1e-12);
        assert_eq!(model.assignments[0], model.assignments[1]);
        assert_eq!(model.assignments[2], model.assignments[3]);
        assert_ne!(model.assignments[0], model.assignments[2]);
    }

    #[test]
    fn inertia_history_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let points = Array2::from_shape_simple_fn((200, 3), || rng.random_range(-5.0..5.0));
        let model = kmeans(&points, 6, 1, 300, 0.0).unwrap();
        for w in model.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0]);
        }
    }

    #[test]
    fn duplicate_points_keep_all_clusters_alive() {
        let points = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [4.0, 4.0]];
        let model = kmeans(&points, 3, 0, 50, 1e-12).unwrap();
        assert_eq!(model.centers.nrows(), 3);
        assert!(model.inertia.abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters_is_rejected() {
        assert!(kmeans(&Array2::zeros((2, 2)), 3, 0, 10, 1e-6).is_err());
        assert!(kmeans(&Array2::zeros((2, 2)), 0, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points = Array2::from_shape_simple_fn((50, 2), || rng.random_range(-1.0..1.0));
        assert_eq!(kmeans(&points, 4, 9, 100, 1e-8).unwrap(), kmeans(&points, 4, 9, 100, 1e-8).unwrap());
    }

    #[test]
    fn empty_cluster_is_reseeded_to_farthest_point() {
        // Centers 1 and 2 start on top of each other; one of them is
        // starved on the first assignment.
        let points = array![[0.0], [0.1], [5.0], [9.0]];
        let init = array![[0.0], [7.0], [7.0]];
        let model = lloyd(&points, init, 20, 0.0);
        let mut counts = [0; 3];
        for &a in &model.assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        assert!((model.inertia - 0.005).abs() < 1e-12);
    }
}
