use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 500;

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Total squared distance of points to their assigned centers.
    pub cost: f64,
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center, lowest index on ties.
pub fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means with k-means++ seeding and a fixed-seed RNG.
///
/// Runs until no assignment changes, so every point ends on its nearest
/// center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    if k < 1 {
        return Err(Error::Config("k-means needs at least one cluster".into()));
    }
    if points.len() < k {
        return Err(Error::Config(format!(
            "k-means: {} points for {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("kmeans", "points differ in dimension"));
    }
    if count_distinct(points, k) < k {
        return Err(Error::Config(format!(
            "k-means: fewer than {k} distinct points"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];

    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, _) = nearest_center(p, &centers);
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = farthest_point(points, &centers, &assignment);
                centers[j] = points[far].clone();
                assignment[far] = j;
            } else {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }

    let cost = points
        .iter()
        .zip(&assignment)
        .map(|(p, &j)| squared_distance(p, &centers[j]))
        .sum();
    Ok(Clustering {
        centers,
        assignment,
        cost,
    })
}

fn count_distinct(points: &[Vec<f64>], enough: usize) -> usize {
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
            if distinct.len() >= enough {
                break;
            }
        }
    }
    distinct.len()
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if target < w {
                pick = Some(i);
                break;
            }
            target -= w;
        }
        // Rounding can exhaust the walk; fall back to the last positive-weight point.
        let idx = pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("distinct points remain"));
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn farthest_point(points: &[Vec<f64>], centers: &[Vec<f64>], assignment: &[usize]) -> usize {
    let mut best = (0, -1.0);
    for (i, (p, &j)) in points.iter().zip(assignment).enumerate() {
        let d = squared_distance(p, &centers[j]);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}
