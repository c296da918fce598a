use std::collections::BTreeMap;

use crate::error::{DmlError, Result};

fn counts(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2 I(A;B) / (H(A) + H(B))`, natural log.
///
/// Returns 1 when both entropies vanish (both partitions are a single
/// cluster). The result is clamped to `[0, 1]` against rounding.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(DmlError::shape(format!("partition lengths differ: {} vs {}", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(DmlError::domain("partitions must be non-empty"));
    }
    let n = pred.len() as f64;
    let ca = counts(pred);
    let cb = counts(truth);
    let h_a = entropy(ca.values().copied(), n);
    let h_b = entropy(cb.values().copied(), n);
    if h_a + h_b == 0.0 {
        return Ok(1.0);
    }
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&a, &b) in pred.iter().zip(truth) {
        *joint.entry((a, b)).or_insert(0) += 1;
    }
    let mut mi = 0.0;
    for ((a, b), c) in joint {
        let pab = c as f64 / n;
        let pa = ca[&a] as f64 / n;
        let pb = cb[&b] as f64 / n;
        mi += pab * (pab / (pa * pb)).ln();
    }
    Ok((2.0 * mi / (h_a + h_b)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabelled_identity_is_one() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_vs_two_is_zero() {
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn checkerboard_is_zero() {
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn both_single_cluster_is_one() {
        assert_eq!(nmi(&[3, 3], &[1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(nmi(&[0, 1], &[0]).is_err());
    }
}
