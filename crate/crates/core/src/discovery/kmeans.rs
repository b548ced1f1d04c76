//! Lloyd's algorithm with k-means++ seeding and best-of-N restarts.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeded_rng;

/// Lloyd iterations per restart before giving up on an assignment fixed point.
pub const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances of points to their assigned centroid.
    pub inertia: f64,
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn check(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::TooFewPoints {
            k,
            points: points.len(),
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::dims("k-means point", dim, p.len()));
    }
    Ok(dim)
}

fn inertia_of(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// One assignment + update step.
///
/// Points go to their nearest centroid, centroids move to the mean of their
/// points, and a cluster left empty is re-seeded at the point farthest from
/// its own centroid. The returned inertia is measured against the returned
/// centroids.
pub fn lloyd_iteration(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Result<ClusterState> {
    let k = centroids.len();
    let dim = check(points, k)?;
    if let Some(c) = centroids.iter().find(|c| c.len() != dim) {
        return Err(Error::dims("centroid", dim, c.len()));
    }
    let assignments: Vec<usize> = points.iter().map(|p| nearest(p, centroids).0).collect();

    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(&assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut new_centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(c, (s, &n))| {
            if n == 0 {
                centroids[c].clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect();

    let mut used = vec![false; points.len()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, (p, &a)) in points.iter().zip(&assignments).enumerate() {
            if used[i] {
                continue;
            }
            let d = sq_dist(p, &new_centroids[a]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        if let Some(i) = far {
            used[i] = true;
            new_centroids[c] = points[i].clone();
        }
    }

    let inertia = inertia_of(points, &new_centroids, &assignments);
    Ok(ClusterState {
        centroids: new_centroids,
        assignments,
        inertia,
    })
}

/// k-means++ seeding: first centre uniform, the rest proportional to squared
/// distance from the nearest chosen centre.
pub fn seed_plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    check(points, k)?;
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

/// Lloyd from `centroids` until the assignment stops changing or
/// [`MAX_LLOYD_ITERS`] is reached. Also returns every step's inertia.
pub fn lloyd(points: &[Vec<f64>], centroids: Vec<Vec<f64>>) -> Result<(ClusterState, Vec<f64>)> {
    let mut state = lloyd_iteration(points, &centroids)?;
    let mut trace = vec![state.inertia];
    for _ in 1..MAX_LLOYD_ITERS {
        let next = lloyd_iteration(points, &state.centroids)?;
        let done = next.assignments == state.assignments;
        trace.push(next.inertia);
        state = next;
        if done {
            break;
        }
    }
    Ok((state, trace))
}

/// Every restart's converged state, in restart order.
///
/// Restart `r` is seeded with `base + r` where `base` is drawn once from `rng`,
/// so restarts run in parallel with the same result as a serial loop.
pub fn kmeans_restarts<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<Vec<ClusterState>> {
    check(points, k)?;
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    let base: u64 = rng.random();
    (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rr = seeded_rng(base.wrapping_add(r as u64));
            let init = seed_plus_plus(points, k, &mut rr)?;
            Ok(lloyd(points, init)?.0)
        })
        .collect()
}

/// Best of `restarts` k-means runs by inertia; ties keep the earliest restart.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, restarts: usize, rng: &mut R) -> Result<ClusterState> {
    let runs = kmeans_restarts(points, k, restarts, rng)?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.inertia < runs[best].inertia {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart"))
}
