//! Sign-thresholded binary codes compared under Hamming distance.

use crate::batch::EmbeddingBatch;
use crate::scalar::Scalar;

/// Packed bit codes, one row per embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodes {
    n_bits: usize,
    words: usize,
    data: Vec<u64>,
    labels: Vec<usize>,
}

impl BinaryCodes {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    pub fn bit(&self, i: usize, d: usize) -> bool {
        self.row(i)[d / 64] >> (d % 64) & 1 == 1
    }

    /// Storage per code in bits.
    pub fn storage_bits(&self) -> usize {
        self.n_bits
    }

    pub fn hamming(&self, i: usize, other: &BinaryCodes, j: usize) -> u32 {
        self.row(i).iter().zip(other.row(j)).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

/// Bit `d` of row `i` is set iff `x[i][d] > 0`.
pub fn binarize<T: Scalar>(batch: &EmbeddingBatch<T>) -> BinaryCodes {
    let n_bits = batch.dim();
    let words = n_bits.div_ceil(64);
    let mut data = vec![0u64; batch.len() * words];
    for (i, row) in batch.vectors().rows().into_iter().enumerate() {
        for (d, &v) in row.iter().enumerate() {
            if v > T::zero() {
                data[i * words + d / 64] |= 1 << (d % 64);
            }
        }
    }
    BinaryCodes { n_bits, words, data, labels: batch.labels().to_vec() }
}
