//! k-means++ seeding and Lloyd iterations over row-major `f32` vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid, ties to the smaller index.
pub(crate) fn nearest(v: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(v, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Sum of squared distances from each vector to its nearest centroid.
pub fn sse(vectors: &[f32], dim: usize, centroids: &[f32]) -> f64 {
    vectors.chunks_exact(dim).map(|v| nearest(v, centroids, dim).1).sum()
}

fn check(vectors: &[f32], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 || vectors.len() % dim != 0 {
        return Err(invalid!("{} values do not form rows of {dim}", vectors.len()));
    }
    let n = vectors.len() / dim;
    if k == 0 || n < k {
        return Err(invalid!("k-means needs at least k={k} vectors, got {n}"));
    }
    Ok(n)
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance. If every remaining point coincides with a centre, the first
/// index is reused.
pub fn kmeans_pp_seed(vectors: &[f32], dim: usize, k: usize, seed: u64) -> Result<Vec<f32>> {
    let n = check(vectors, dim, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = |i: usize| &vectors[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            // Guard against landing on a zero-weight point through rounding.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
            }
            chosen
        } else {
            0
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centroids[start..]));
        }
    }
    Ok(centroids)
}

/// Lloyd refinement from k-means++ seeds. Empty clusters are re-seeded
/// with the point farthest from its current centre.
pub fn kmeans(vectors: &[f32], dim: usize, k: usize, iters: usize, seed: u64) -> Result<Vec<f32>> {
    let n = check(vectors, dim, k)?;
    let mut centroids = kmeans_pp_seed(vectors, dim, k, seed)?;
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        let mut dists = vec![0.0f64; n];
        for (i, v) in vectors.chunks_exact(dim).enumerate() {
            let (c, d) = nearest(v, &centroids, dim);
            changed |= assign[i] != c;
            assign[i] = c;
            dists[i] = d;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, v) in vectors.chunks_exact(dim).enumerate() {
            counts[assign[i]] += 1;
            for (s, &x) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(v) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("nonempty");
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&vectors[far * dim..(far + 1) * dim]);
                dists[far] = 0.0;
            } else {
                for (dst, &s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = (s / counts[c] as f64) as f32;
                }
            }
        }
    }
    Ok(centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn distinct_points_become_centroids() {
        let pts = vec![0.0f32, 0.0, 5.0, 5.0, -3.0, 4.0, 10.0, -1.0];
        let c = kmeans(&pts, 2, 4, 10, 1).unwrap();
        let mut rows: Vec<Vec<f32>> = c.chunks(2).map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<Vec<f32>> = pts.chunks(2).map(|r| r.to_vec()).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, expected);
    }

    #[test]
    fn identical_points() {
        let pts = [1.5f32, -2.0].repeat(10);
        let c = kmeans(&pts, 2, 3, 5, 2).unwrap();
        assert!(c.chunks(2).all(|r| r == [1.5, -2.0]));
    }

    #[test]
    fn lloyd_does_not_increase_sse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        let mut pts = Vec::new();
        for i in 0..200 {
            let off = if i % 2 == 0 { 6.0 } else { -6.0 };
            pts.push(normal.sample(&mut rng) + off);
            pts.push(normal.sample(&mut rng));
        }
        let seeds = kmeans_pp_seed(&pts, 2, 2, 9).unwrap();
        let fitted = kmeans(&pts, 2, 2, 20, 9).unwrap();
        assert!(sse(&pts, 2, &fitted) <= sse(&pts, 2, &seeds));
    }

    #[test]
    fn too_few_vectors() {
        assert!(kmeans(&[0.0, 1.0], 1, 3, 5, 0).is_err());
    }
}
