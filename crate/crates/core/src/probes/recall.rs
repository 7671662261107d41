//! Paraphrase retrieval: for each sentence, where does its own paraphrase
//! rank among all paraphrases by cosine similarity?

use std::collections::BTreeMap;

use ndarray::parallel::prelude::*;
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::simindex::tie_key;
use crate::tensorstore::{unit_normalize, RepresentationMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub k: usize,
    pub per_layer: BTreeMap<usize, f64>,
}

/// Zero-based rank of `P_i` in row `i` of the cosine matrix, ordering by
/// descending cosine and breaking exact ties by the seeded key.
pub fn true_match_ranks(x: &RepresentationMatrix, p: &RepresentationMatrix, tie_seed: u64) -> Result<Vec<usize>> {
    if x.original_ids != p.original_ids {
        return Err(Error::Misaligned(format!(
            "recall needs row-aligned sets: {} vs {} rows with differing original ids",
            x.nrows(),
            p.nrows()
        )));
    }
    if x.ncols() != p.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: p.ncols(),
        });
    }
    let xn = unit_normalize(x)?;
    let pn = unit_normalize(p)?;
    let cos: Array2<f64> = xn.data.dot(&pn.data.t());
    Ok(cos
        .axis_iter(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, row)| {
            let own = row[i];
            let own_key = tie_key(tie_seed, i, i);
            row.iter()
                .enumerate()
                .filter(|&(j, &c)| j != i && (c > own || (c == own && tie_key(tie_seed, i, j) < own_key)))
                .count()
        })
        .collect())
}

/// Fraction of rows whose own paraphrase is among the `k` most similar.
pub fn recall_at_k(x: &RepresentationMatrix, p: &RepresentationMatrix, k: usize, tie_seed: u64) -> Result<f64> {
    Ok(recall_curve(x, p, &[k], tie_seed)?[0])
}

/// Recall at several `k` from a single pass.
pub fn recall_curve(x: &RepresentationMatrix, p: &RepresentationMatrix, ks: &[usize], tie_seed: u64) -> Result<Vec<f64>> {
    let n = x.nrows();
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::Parameter(format!("k must be in 1..={n}, got {bad}")));
    }
    let ranks = true_match_ranks(x, p, tie_seed)?;
    Ok(ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / n as f64)
        .collect())
}
