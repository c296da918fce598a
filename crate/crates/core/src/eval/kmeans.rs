use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distance::sq_dist;
use crate::scalar::Scalar;

/// Lloyd's k-means with k-means++ seeding; deterministic for a given seed.
/// Returns the cluster id of every row.
pub fn kmeans<T: Scalar>(x: ArrayView2<'_, T>, k: usize, seed: u64, max_iter: usize) -> Vec<usize> {
    let n = x.nrows();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<T>> = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), ndarray::aview1(&centers[0])).to_f64_lossy()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(x.row(pick).to_vec());
        let c = ndarray::aview1(centers.last().unwrap());
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(x.row(i), c).to_f64_lossy());
        }
    }

    let dim = x.ncols();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, slot) in assign.iter_mut().enumerate() {
            let mut best = (0, T::infinity());
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(x.row(i), ndarray::aview1(center));
                if d < best.1 {
                    best = (c, d);
                }
            }
            if *slot != best.0 {
                *slot = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, &v) in sums[assign[i]].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = T::one() / T::of(counts[c] as f64);
                centers[c] = sums[c].iter().map(|&s| s * inv).collect();
            }
        }
    }
    assign
}
