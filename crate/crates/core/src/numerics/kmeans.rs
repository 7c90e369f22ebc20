//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use super::NumericsError;

pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Fitted centroids. Row `c` of `centroids` is cluster `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Matrix,
    pub k: usize,
    pub seed: u64,
}

impl ClusterModel {
    /// Index of the nearest centroid (lowest index on ties).
    pub fn assign(&self, point: &[f64]) -> usize {
        nearest(&self.centroids, point).0
    }

    pub fn assign_all(&self, points: &Matrix) -> Vec<usize> {
        (0..points.rows()).map(|r| self.assign(points.row(r))).collect()
    }

    pub fn inertia(&self, points: &Matrix, assignments: &[usize]) -> f64 {
        (0..points.rows())
            .map(|r| sq_dist(points.row(r), self.centroids.row(assignments[r])))
            .sum()
    }
}

/// Outcome of a k-means run.
#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub model: ClusterModel,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("at least one assignment step")
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Matrix, p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(p, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|r| sq_dist(points.row(r), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against landing on a zero-weight tail through rounding
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // all remaining points coincide with a centre: take the first unused index
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(r), points.row(next)));
        }
    }
    let mut c = Matrix::zeros(k, points.cols());
    for (i, &idx) in chosen.iter().enumerate() {
        c.row_mut(i).copy_from_slice(points.row(idx));
    }
    c
}

/// Clusters the rows of `points` into `k` groups.
///
/// Seeding is k-means++ driven by `seed`; Lloyd iterations stop when no
/// assignment changes or after [`MAX_LLOYD_ITERATIONS`]. A cluster that
/// empties is re-seeded at the point farthest from its current centroid
/// (lowest index on ties), taken from clusters holding more than one point.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<KMeansFit, NumericsError> {
    let n = points.rows();
    if k == 0 || n < k {
        return Err(NumericsError::InvalidArgument(format!(
            "k-means needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    if !points.is_finite() {
        return Err(NumericsError::InvalidArgument(
            "k-means input contains non-finite values".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(points, k, &mut rng);
    let mut assignments: Vec<usize> = (0..n).map(|r| nearest(&centroids, points.row(r)).0).collect();
    let mut history = vec![inertia_of(points, &centroids, &assignments)];
    let mut iterations = 0;

    for _ in 0..MAX_LLOYD_ITERATIONS {
        iterations += 1;
        // update step
        let mut sums = Matrix::zeros(k, points.cols());
        let mut counts = vec![0usize; k];
        for (r, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &x) in sums.row_mut(a).iter_mut().zip(points.row(r)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                repair_empty(points, &mut centroids, &mut assignments, &mut counts, c);
            }
        }

        // assignment step; a point only moves for a strictly closer centroid
        let mut changed = false;
        for r in 0..n {
            let (best, d) = nearest(&centroids, points.row(r));
            let current = sq_dist(points.row(r), centroids.row(assignments[r]));
            if best != assignments[r] && d < current {
                assignments[r] = best;
                changed = true;
            }
        }
        history.push(inertia_of(points, &centroids, &assignments));
        if !changed {
            break;
        }
    }

    Ok(KMeansFit {
        assignments,
        model: ClusterModel { centroids, k, seed },
        inertia_history: history,
        iterations,
    })
}

fn repair_empty(
    points: &Matrix,
    centroids: &mut Matrix,
    assignments: &mut [usize],
    counts: &mut [usize],
    empty: usize,
) {
    let mut far: Option<(usize, f64)> = None;
    for (r, &a) in assignments.iter().enumerate() {
        if counts[a] <= 1 {
            continue;
        }
        let d = sq_dist(points.row(r), centroids.row(a));
        if far.is_none_or(|(_, best)| d > best) {
            far = Some((r, d));
        }
    }
    if let Some((r, _)) = far {
        let row = points.row(r).to_vec();
        centroids.row_mut(empty).copy_from_slice(&row);
        counts[assignments[r]] -= 1;
        assignments[r] = empty;
        counts[empty] = 1;
    }
}

fn inertia_of(points: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    (0..points.rows())
        .map(|r| sq_dist(points.row(r), centroids.row(assignments[r])))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_distinct_points_have_zero_inertia() {
        let base = [[0.0, 0.0], [5.0, 1.0], [-3.0, 7.0]];
        let rows: Vec<Vec<f64>> = (0..12).map(|i| base[i % 3].to_vec()).collect();
        let pts = Matrix::from_rows(&rows);
        let fit = kmeans(&pts, 3, 11).unwrap();
        assert_eq!(fit.inertia(), 0.0);
        for r in 0..pts.rows() {
            assert_eq!(fit.model.centroids.row(fit.assignments[r]), pts.row(r));
        }
    }

    #[test]
    fn all_identical_points_with_k_greater_than_distinct() {
        let pts = Matrix::filled(5, 2, 1.5);
        let fit = kmeans(&pts, 3, 0).unwrap();
        assert_eq!(fit.inertia(), 0.0);
        assert!(fit.assignments.iter().all(|&a| a < 3));
    }

    #[test]
    fn rejects_bad_k() {
        let pts = Matrix::zeros(2, 2);
        assert!(kmeans(&pts, 3, 0).is_err());
        assert!(kmeans(&pts, 0, 0).is_err());
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random::<f64>() * 10.0).collect())
            .collect();
        let fit = kmeans(&Matrix::from_rows(&rows), 6, 9).unwrap();
        for w in fit.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.inertia_history);
        }
    }
}
