//! Lloyd's k-means with k-means++ seeding, used to seed codebooks and as the
//! reference quantizer that EMA training is measured against.

use rand::Rng;

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++: each new center is the best of a few candidates drawn
/// with probability proportional to squared distance from the centers picked
/// so far, where best means the lowest resulting potential. Repeats rows when
/// `data` has fewer than `k` distinct points.
pub fn kmeans_pp_seed<R: Rng>(data: &[f64], dim: usize, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if dim == 0 || data.is_empty() || data.len() % dim != 0 {
        return Err(Error::Config("k-means++ needs a nonempty multiple of dim".into()));
    }
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..dim])).collect();
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                let mut t = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if t < d {
                        pick = i;
                        break;
                    }
                    t -= d;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let cand: Vec<f64> = d2.iter().enumerate().map(|(i, &d)| d.min(sq_dist(row(i), row(pick)))).collect();
            let potential: f64 = cand.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, cand));
            }
        }
        let (_, pick, cand) = best.expect("at least two trials");
        centers.extend_from_slice(row(pick));
        d2 = cand;
    }
    Ok(centers)
}

/// Index of the nearest center and its squared distance. Lowest index on ties.
pub fn assign(x: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Mean squared error per element of quantizing `data` to `centers`.
pub fn quantization_mse(data: &[f64], centers: &[f64], dim: usize) -> f64 {
    let total: f64 = data.chunks_exact(dim).map(|x| assign(x, centers, dim).1).sum();
    total / data.len() as f64
}

/// Lloyd iterations from `centers` until assignments stop changing or
/// `max_iter` is hit. Empty clusters keep their center.
pub fn lloyd(data: &[f64], dim: usize, mut centers: Vec<f64>, max_iter: usize) -> Vec<f64> {
    let k = centers.len() / dim;
    let mut labels = vec![usize::MAX; data.len() / dim];
    for _ in 0..max_iter {
        let mut changed = false;
        for (l, x) in labels.iter_mut().zip(data.chunks_exact(dim)) {
            let a = assign(x, &centers, dim).0;
            changed |= *l != a;
            *l = a;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (&l, x) in labels.iter().zip(data.chunks_exact(dim)) {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centers[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
    }
    centers
}

/// Best of `restarts` k-means++ seeded Lloyd runs, by MSE.
pub fn kmeans<R: Rng>(data: &[f64], dim: usize, k: usize, restarts: usize, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let seed = kmeans_pp_seed(data, dim, k, rng)?;
        let centers = lloyd(data, dim, seed, 300);
        let mse = quantization_mse(data, &centers, dim);
        if best.as_ref().is_none_or(|(_, m)| mse < *m) {
            best = Some((centers, mse));
        }
    }
    Ok(best.unwrap())
}
