//! Seeded k-means used to derive the class ordering for the label tree.

use rand::Rng;

use crate::matrix::{dense_dot, squared_distance, Matrix};

pub const MAX_ITERATIONS: usize = 50;

/// Partitions `members` (row indices of `points`) into exactly `min(k, len)` non-empty
/// clusters. Clusters are returned sorted by ascending centroid norm, members ascending.
pub fn kmeans<R: Rng + ?Sized>(
    points: &Matrix,
    members: &[usize],
    k: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let n = members.len();
    let k = k.min(n);
    if k <= 1 {
        return vec![members.to_vec()];
    }
    let mut centers = seed_plus_plus(points, members, k, rng);
    let mut assign = vec![usize::MAX; n];

    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (slot, &m) in members.iter().enumerate() {
            let nearest = nearest_center(points.row(m), &centers);
            if assign[slot] != nearest {
                assign[slot] = nearest;
                changed = true;
            }
        }
        repair_empty(points, members, &mut assign, &mut centers);
        recompute_centers(points, members, &assign, &mut centers);
        if !changed {
            break;
        }
    }

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (slot, &c) in assign.iter().enumerate() {
        clusters[c].push(members[slot]);
    }
    let mut keyed: Vec<(f64, Vec<usize>)> = clusters
        .into_iter()
        .zip(&centers)
        .map(|(mut ms, c)| {
            ms.sort_unstable();
            (dense_dot(c, c).sqrt(), ms)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1[0].cmp(&b.1[0])));
    keyed.into_iter().map(|(_, ms)| ms).collect()
}

fn seed_plus_plus<R: Rng + ?Sized>(
    points: &Matrix,
    members: &[usize],
    k: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = members.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points.row(members[first]).to_vec()];
    let mut dist: Vec<f64> = members
        .iter()
        .map(|&m| squared_distance(points.row(m), &centers[0]))
        .collect();

    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive distance")
        } else {
            // All remaining points coincide with a center.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points.row(members[pick]).to_vec();
        for (i, &m) in members.iter().enumerate() {
            dist[i] = dist[i].min(squared_distance(points.row(m), &c));
        }
        centers.push(c);
    }
    centers
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(p, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Fills each empty cluster with the point farthest from its center in the largest cluster.
fn repair_empty(points: &Matrix, members: &[usize], assign: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assign.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (slot, &c) in assign.iter().enumerate() {
            if c == largest {
                let d = squared_distance(points.row(members[slot]), &centers[largest]);
                if d > far_d {
                    far_d = d;
                    far = Some(slot);
                }
            }
        }
        let slot = far.expect("largest cluster is non-empty");
        assign[slot] = empty;
        centers[empty] = points.row(members[slot]).to_vec();
    }
}

fn recompute_centers(points: &Matrix, members: &[usize], assign: &[usize], centers: &mut [Vec<f64>]) {
    let d = points.cols();
    let k = centers.len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (slot, &c) in assign.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(points.row(members[slot])) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            centers[c] = sums[c].iter().map(|s| s * inv).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_well_separated_groups() {
        let pts = Matrix::from_rows(&[
            vec![10.0, 10.0],
            vec![0.0, 0.0],
            vec![10.1, 10.0],
            vec![0.1, 0.0],
        ]);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cl = kmeans(&pts, &[0, 1, 2, 3], 2, &mut rng);
            assert_eq!(cl, vec![vec![1, 3], vec![0, 2]], "seed {seed}");
        }
    }

    #[test]
    fn identical_points_still_give_k_clusters() {
        let pts = Matrix::from_rows(&vec![vec![1.0, 1.0]; 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cl = kmeans(&pts, &(0..7).collect::<Vec<_>>(), 3, &mut rng);
        assert_eq!(cl.len(), 3);
        assert!(cl.iter().all(|c| !c.is_empty()));
        let mut all: Vec<usize> = cl.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }
}
