//! k-means clustering with k-means++ seeding, used to build cluster-label features.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMeansMode {
    /// Full-batch Lloyd iterations until assignments stop changing.
    Lloyd,
    /// Sculley-style mini-batch updates with per-center learning rates.
    MiniBatch { batch_size: usize },
}

#[derive(Debug, Clone)]
pub struct KMeansResult<T> {
    pub centroids: Array2<T>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

/// Squared Euclidean distance of every row to every centroid, `n x k`.
fn squared_distances<T: Scalar>(x: ArrayView2<'_, T>, centroids: ArrayView2<'_, T>, row_norms: &Array1<T>) -> Array2<T> {
    let mut d = Array2::zeros((x.nrows(), centroids.nrows()));
    general_mat_mul(-T::of(2.0), &x, &centroids.t(), T::zero(), &mut d);
    let c_norms = centroids.map_axis(Axis(1), |c| c.dot(&c));
    for (mut row, &xn) in d.rows_mut().into_iter().zip(row_norms) {
        for (v, &cn) in row.iter_mut().zip(&c_norms) {
            *v = (*v + xn + cn).max(T::zero());
        }
    }
    d
}

fn nearest<T: Scalar>(row: ndarray::ArrayView1<'_, T>) -> (usize, T) {
    let mut best = (0, row[0]);
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (k, v);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, the rest drawn proportionally to D^2.
fn seed_centroids<T: Scalar, R: Rng>(x: ArrayView2<'_, T>, k: usize, row_norms: &Array1<T>, rng: &mut R) -> Array2<T> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut closest: Vec<f64> = squared_distances(x, centroids.slice(ndarray::s![0..1, ..]), row_norms)
        .column(0)
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (j, &d) in closest.iter().enumerate() {
                if target < d {
                    chosen = j;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // every point coincides with a chosen center
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        let d = squared_distances(x, centroids.slice(ndarray::s![c..c + 1, ..]), row_norms);
        for (cl, &v) in closest.iter_mut().zip(d.column(0)) {
            *cl = cl.min(v.to_f64_lossy());
        }
    }
    centroids
}

/// Cluster the rows of `x` into `k` groups. Deterministic in `seed`.
pub fn kmeans<T: Scalar>(x: ArrayView2<'_, T>, k: usize, seed: u64, max_iters: usize, mode: KMeansMode) -> Result<KMeansResult<T>> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row_norms = x.map_axis(Axis(1), |r| r.dot(&r));
    let mut centroids = seed_centroids(x, k, &row_norms, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;

    match mode {
        KMeansMode::Lloyd => {
            for _ in 0..max_iters {
                iterations += 1;
                let d = squared_distances(x, centroids.view(), &row_norms);
                let mut changed = false;
                let mut dist_to_own = vec![T::zero(); n];
                for (j, row) in d.rows().into_iter().enumerate() {
                    let (c, v) = nearest(row);
                    dist_to_own[j] = v;
                    if assignments[j] != c {
                        assignments[j] = c;
                        changed = true;
                    }
                }
                let mut sums = Array2::<T>::zeros(centroids.raw_dim());
                let mut counts = vec![0usize; k];
                for (j, &c) in assignments.iter().enumerate() {
                    sums.row_mut(c).scaled_add(T::one(), &x.row(j));
                    counts[c] += 1;
                }
                for (c, &count) in counts.iter().enumerate() {
                    if count > 0 {
                        let inv = T::one() / T::of(count as f64);
                        centroids.row_mut(c).assign(&(&sums.row(c) * inv));
                    } else {
                        // reseed the empty cluster at the point farthest from its center
                        let far = (0..n)
                            .max_by(|&a, &b| dist_to_own[a].partial_cmp(&dist_to_own[b]).unwrap().then(b.cmp(&a)))
                            .expect("n >= k >= 1");
                        centroids.row_mut(c).assign(&x.row(far));
                        dist_to_own[far] = T::zero();
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
        }
        KMeansMode::MiniBatch { batch_size } => {
            let batch_size = batch_size.clamp(1, n);
            let mut counts = vec![0usize; k];
            for _ in 0..max_iters {
                iterations += 1;
                let batch: Vec<usize> = rand::seq::index::sample(&mut rng, n, batch_size).into_vec();
                let xb = x.select(Axis(0), &batch);
                let nb = row_norms.select(Axis(0), &batch);
                let d = squared_distances(xb.view(), centroids.view(), &nb);
                for (b, row) in d.rows().into_iter().enumerate() {
                    let (c, _) = nearest(row);
                    counts[c] += 1;
                    let eta = T::one() / T::of(counts[c] as f64);
                    let mut centre = centroids.row_mut(c);
                    centre *= T::one() - eta;
                    centre.scaled_add(eta, &xb.row(b));
                }
            }
            let d = squared_distances(x, centroids.view(), &row_norms);
            for (j, row) in d.rows().into_iter().enumerate() {
                assignments[j] = nearest(row).0;
            }
        }
    }
    if assignments.contains(&usize::MAX) {
        // max_iters == 0: assign to the seeded centers
        let d = squared_distances(x, centroids.view(), &row_norms);
        for (j, row) in d.rows().into_iter().enumerate() {
            assignments[j] = nearest(row).0;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        iterations,
    })
}

/// Index of the nearest centroid for every row of `x`.
pub fn assign_clusters<T: Scalar>(x: ArrayView2<'_, T>, centroids: ArrayView2<'_, T>) -> Result<Vec<usize>> {
    crate::error::ensure_dim("assign: feature count", centroids.ncols(), x.ncols())?;
    if centroids.nrows() == 0 {
        return Err(Error::invalid("no centroids to assign to"));
    }
    let row_norms = x.map_axis(Axis(1), |r| r.dot(&r));
    let d = squared_distances(x, centroids, &row_norms);
    Ok(d.rows().into_iter().map(|row| nearest(row).0).collect())
}

/// One-hot cluster membership, `n x k`.
pub fn one_hot<T: Scalar>(assignments: &[usize], k: usize) -> Array2<T> {
    let mut out = Array2::zeros((assignments.len(), k));
    for (j, &c) in assignments.iter().enumerate() {
        out[[j, c]] = T::one();
    }
    out
}

/// Cluster-label representation of `x`: Lloyd's k-means, then one-hot rows.
pub fn kmeans_features<T: Scalar>(x: ArrayView2<'_, T>, k: usize, seed: u64, max_iters: usize) -> Result<Array2<T>> {
    let result = kmeans(x, k, seed, max_iters, KMeansMode::Lloyd)?;
    Ok(one_hot(&result.assignments, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn clouds(n_each: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut x = Array2::zeros((2 * n_each, 3));
        let mut truth = Vec::new();
        for j in 0..2 * n_each {
            let cloud = usize::from(j % 2 == 1);
            truth.push(cloud);
            for d in 0..3 {
                x[[j, d]] = 10.0 * cloud as f64 + noise.sample(&mut rng);
            }
        }
        (x, truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.iter().zip(b).all(|(&x, &y)| (a[0] == x) == (b[0] == y))
    }

    #[test]
    fn assignment_matches_training_clusters() {
        let x = ndarray::array![[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 4.9]];
        let r = kmeans(x.view(), 2, 3, 50, KMeansMode::Lloyd).unwrap();
        assert_eq!(assign_clusters(x.view(), r.centroids.view()).unwrap(), r.assignments);
        let fresh = ndarray::array![[4.8, 5.2], [-0.2, 0.1]];
        let a = assign_clusters(fresh.view(), r.centroids.view()).unwrap();
        assert_eq!(a, vec![r.assignments[2], r.assignments[0]]);
    }

    #[test]
    fn single_cluster() {
        let (x, _) = clouds(10, 1);
        let f = kmeans_features(x.view(), 1, 0, 20).unwrap();
        assert!(f.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn separates_clouds() {
        let (x, truth) = clouds(50, 2);
        for seed in 0..5 {
            let r = kmeans(x.view(), 2, seed, 100, KMeansMode::Lloyd).unwrap();
            assert!(same_partition(&r.assignments, &truth));
            let r = kmeans(x.view(), 2, seed, 50, KMeansMode::MiniBatch { batch_size: 16 }).unwrap();
            assert!(same_partition(&r.assignments, &truth));
        }
    }

    #[test]
    fn rows_are_one_hot_and_deterministic() {
        let (x, _) = clouds(30, 3);
        let a = kmeans_features(x.view(), 5, 9, 50).unwrap();
        let b = kmeans_features(x.view(), 5, 9, 50).unwrap();
        assert_eq!(a, b);
        assert!(a.rows().into_iter().all(|r| r.sum() == 1.0));
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters_unassigned() {
        let mut x = Array2::zeros((6, 2));
        x[[5, 0]] = 1.0;
        let r = kmeans(x.view(), 3, 0, 10, KMeansMode::Lloyd).unwrap();
        assert_eq!(r.assignments.len(), 6);
        assert!(r.assignments.iter().all(|&c| c < 3));
    }

    #[test]
    fn rejects_bad_k() {
        let x = Array2::<f64>::zeros((3, 2));
        assert!(kmeans_features(x.view(), 4, 0, 10).is_err());
        assert!(kmeans_features(x.view(), 0, 0, 10).is_err());
    }
}
