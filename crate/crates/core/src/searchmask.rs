//! Per-position candidate masks built from detection/reasoning decisions,
//! and their application to a correction distribution.
//!
//! A detected phonological error (`y_d = 1, y_r = 1`) may only be corrected
//! to a member of the source character's phonological confusion set, a
//! detected morphological error (`y_d = 1, y_r = 0`) to its visual set;
//! undetected positions keep the full vocabulary.

use serde::{Deserialize, Serialize};

use crate::charkb::{ConfusionIndex, ConfusionKind};
use crate::error::{CscError, Result};
use crate::linalg::Mat;

/// Floor applied to row sums and gold probabilities.
pub const PROB_FLOOR: f64 = 1e-12;

/// Packed binary row of length `vocab`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVector {
    words: Vec<u64>,
    len: usize,
}

impl MaskVector {
    pub fn ones(len: usize) -> Self {
        let mut words = vec![u64::MAX; len.div_ceil(64)];
        if !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last = (1u64 << (len % 64)) - 1;
            }
        }
        MaskVector { words, len }
    }

    pub fn from_members(len: usize, members: &[usize]) -> Self {
        let mut words = vec![0u64; len.div_ceil(64)];
        for &j in members {
            words[j / 64] |= 1 << (j % 64);
        }
        MaskVector { words, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_all_ones(&self) -> bool {
        self.count_ones() == self.len
    }

    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.len)
            .map(|j| if self.get(j) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// The `c_i` row for one position.
pub fn mask_vector(x: usize, y_d: u8, y_r: u8, index: &ConfusionIndex) -> MaskVector {
    let vocab = index.vocab_size();
    match (y_d, y_r) {
        (1, 1) => MaskVector::from_members(vocab, index.set(ConfusionKind::Phonological, x)),
        (1, _) => MaskVector::from_members(vocab, index.set(ConfusionKind::Visual, x)),
        _ => MaskVector::ones(vocab),
    }
}

/// `T × vocab` binary matrix, one [`MaskVector`] per position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchMatrix {
    pub rows: Vec<MaskVector>,
}

impl SearchMatrix {
    pub fn all_ones(t: usize, vocab: usize) -> Self {
        SearchMatrix {
            rows: vec![MaskVector::ones(vocab); t],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_dense(&self) -> Mat {
        let vocab = self.rows.first().map_or(0, MaskVector::len);
        let data = self.rows.iter().flat_map(MaskVector::to_dense).collect();
        Mat {
            rows: self.rows.len(),
            cols: vocab,
            data,
        }
    }
}

pub fn build_search_matrix(
    x: &[usize],
    y_d: &[u8],
    y_r: &[u8],
    index: &ConfusionIndex,
) -> Result<SearchMatrix> {
    if x.len() != y_d.len() || x.len() != y_r.len() {
        return Err(CscError::shape(format!(
            "sentence length {}, y_d length {}, y_r length {}",
            x.len(),
            y_d.len(),
            y_r.len()
        )));
    }
    if let Some(&bad) = x.iter().find(|&&i| i >= index.vocab_size()) {
        return Err(CscError::Vocab(format!("index {bad} out of range")));
    }
    let rows = x
        .iter()
        .zip(y_d)
        .zip(y_r)
        .map(|((&xi, &d), &r)| mask_vector(xi, d, r, index))
        .collect();
    Ok(SearchMatrix { rows })
}

/// `T × vocab` matrix of probabilities, one distribution per position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix(pub Mat);

impl ProbMatrix {
    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

/// Elementwise product `P ⊙ C`, optionally renormalizing each row by
/// `max(row_sum, PROB_FLOOR)`.
pub fn apply_mask(p: &ProbMatrix, c: &SearchMatrix, renormalize: bool) -> Result<ProbMatrix> {
    let (t, vocab) = p.0.shape();
    if c.len() != t || c.rows.iter().any(|r| r.len() != vocab) {
        return Err(CscError::shape(format!(
            "probabilities are {t}x{vocab}, mask has {} rows of width {}",
            c.len(),
            c.rows.first().map_or(0, MaskVector::len)
        )));
    }
    let mut out = p.0.clone();
    for (i, mask) in c.rows.iter().enumerate() {
        let row = out.row_mut(i);
        if !mask.is_all_ones() {
            for (j, v) in row.iter_mut().enumerate() {
                if !mask.get(j) {
                    *v = 0.0;
                }
            }
        }
        if renormalize {
            let sum: f64 = row.iter().sum();
            let denom = sum.max(PROB_FLOOR);
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
    }
    Ok(ProbMatrix(out))
}
