//! Distance ranks and the information imbalance.
//!
//! Ranks order the other points of a row by ascending distance. Exact ties
//! are broken by a per-(row, column) key drawn from a seeded hash, so the
//! order is a deterministic function of `(distances, tie_seed)` and does not
//! depend on thread count or iteration order.

use std::cmp::Ordering;

use ndarray::{Array2, Axis};
use ndarray::parallel::prelude::*;

use super::distance::DistanceMatrix;
use crate::error::{Error, Result};

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Tie-break key of column `j` in row `i`.
#[inline]
pub fn tie_key(seed: u64, i: usize, j: usize) -> u64 {
    splitmix64(splitmix64(seed ^ (i as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ j as u64)
}

/// Total order used for ranking within row `i`: distance, then tie key.
#[inline]
pub(crate) fn rank_order(row: &[f64], seed: u64, i: usize, a: usize, b: usize) -> Ordering {
    row[a]
        .total_cmp(&row[b])
        .then_with(|| tie_key(seed, i, a).cmp(&tie_key(seed, i, b)))
}

/// `ranks[[i, j]]` is the neighbor rank of `j` around `i`, in `1..n`. The
/// diagonal holds the sentinel 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMatrix {
    pub ranks: Array2<u32>,
    pub tie_seed: u64,
}

impl RankMatrix {
    pub fn len(&self) -> usize {
        self.ranks.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.nrows() == 0
    }
}

pub fn rank_matrix(d: &DistanceMatrix, tie_seed: u64) -> RankMatrix {
    let n = d.len();
    let mut ranks = Array2::<u32>::zeros((n, n));
    ranks
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut out)| {
            let row = d.row(i);
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_unstable_by(|&a, &b| rank_order(row, tie_seed, i, a, b));
            for (pos, j) in order.into_iter().enumerate() {
                out[j] = pos as u32 + 1;
            }
        });
    RankMatrix { ranks, tie_seed }
}

/// `Delta(A -> B) = 2 / N^2 * sum over (i, j) with r^A_ij = 1 of r^B_ij`.
pub fn information_imbalance(a: &RankMatrix, b: &RankMatrix) -> Result<f64> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    if n < 2 {
        return Err(Error::Parameter("information imbalance needs at least 2 points".into()));
    }
    let sum: u64 = a
        .ranks
        .indexed_iter()
        .filter(|&(_, &r)| r == 1)
        .map(|((i, j), _)| u64::from(b.ranks[[i, j]]))
        .sum();
    Ok((2 * sum) as f64 / (n * n) as f64)
}

/// The `k` nearest neighbors of every point, closest first, in the same
/// order as [`rank_matrix`]: row `i` lists the `j` with ranks `1..=k`.
pub fn top_k_neighbors(d: &DistanceMatrix, k: usize, tie_seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = d.len();
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!("k must be in 1..{n}, got {k}")));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let row = d.row(i);
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let cmp = |a: &usize, b: &usize| rank_order(row, tie_seed, i, *a, *b);
            if k < others.len() {
                others.select_nth_unstable_by(k - 1, cmp);
                others.truncate(k);
            }
            others.sort_unstable_by(cmp);
            others
        })
        .collect())
}

/// Nearest neighbor of `i` among `subset` (excluding `i`).
#[inline]
fn first_neighbor(d: &DistanceMatrix, seed: u64, i: usize, subset: &[usize]) -> usize {
    let row = d.row(i);
    subset
        .iter()
        .copied()
        .filter(|&j| j != i)
        .min_by(|&a, &b| rank_order(row, seed, i, a, b))
        .expect("subset has at least two points")
}

/// Rank of `j` around `i` among `subset`, counted in O(|subset|).
#[inline]
fn rank_of(d: &DistanceMatrix, seed: u64, i: usize, j: usize, subset: &[usize]) -> u64 {
    let row = d.row(i);
    1 + subset
        .iter()
        .filter(|&&k| k != i && k != j && rank_order(row, seed, i, k, j) == Ordering::Less)
        .count() as u64
}

/// `sum over i of r^B(i, nn^A(i))` restricted to `subset`.
fn neighbor_rank_sum(a: &DistanceMatrix, b: &DistanceMatrix, seed: u64, subset: &[usize]) -> u64 {
    subset
        .par_iter()
        .map(|&i| {
            let nn = first_neighbor(a, seed, i, subset);
            rank_of(b, seed, i, nn, subset)
        })
        .sum()
}

fn check_pair(a: &DistanceMatrix, b: &DistanceMatrix, subset: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if subset.len() < 3 {
        return Err(Error::Parameter(format!(
            "similarity needs at least 3 points, got {}",
            subset.len()
        )));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= a.len()) {
        return Err(Error::Parameter(format!("subset index {bad} out of range")));
    }
    Ok(())
}

/// Information imbalance computed without materializing rank matrices.
pub fn imbalance_on(
    a: &DistanceMatrix,
    b: &DistanceMatrix,
    tie_seed: u64,
    subset: &[usize],
) -> Result<f64> {
    check_pair(a, b, subset)?;
    let n = subset.len();
    Ok((2 * neighbor_rank_sum(a, b, tie_seed, subset)) as f64 / (n * n) as f64)
}

/// `1 - (Delta(A->B) + Delta(B->A)) / 2` over the points in `subset`.
pub fn similarity_on(
    a: &DistanceMatrix,
    b: &DistanceMatrix,
    tie_seed: u64,
    subset: &[usize],
) -> Result<f64> {
    check_pair(a, b, subset)?;
    let n = subset.len();
    let total = neighbor_rank_sum(a, b, tie_seed, subset) + neighbor_rank_sum(b, a, tie_seed, subset);
    Ok(1.0 - total as f64 / (n * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line(points: &[f64]) -> DistanceMatrix {
        let n = points.len();
        DistanceMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| (points[i] - points[j]).abs()))
            .unwrap()
    }

    #[test]
    fn points_on_a_line() {
        let r = rank_matrix(&line(&[0.0, 1.0, 3.0]), 0);
        assert_eq!(r.ranks.row(0).to_vec(), vec![0, 1, 2]);
        assert_eq!(r.ranks.row(2).to_vec(), vec![2, 1, 0]);
    }

    #[test]
    fn all_equal_distances_give_reproducible_permutations() {
        let n = 6;
        let d = DistanceMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| f64::from(u8::from(i != j))))
            .unwrap();
        let r1 = rank_matrix(&d, 42);
        let r2 = rank_matrix(&d, 42);
        assert_eq!(r1, r2);
        for i in 0..n {
            let mut row: Vec<u32> = (0..n).filter(|&j| j != i).map(|j| r1.ranks[[i, j]]).collect();
            row.sort_unstable();
            assert_eq!(row, (1..n as u32).collect::<Vec<_>>());
        }
        assert_ne!(rank_matrix(&d, 7), r1);
    }

    #[test]
    fn hand_built_imbalance() {
        // A's first neighbors: 0->1, 1->2, 2->3, 3->0. B ranks those pairs 3, 2, 1, 2.
        let mut a = Array2::<u32>::zeros((4, 4));
        let mut b = Array2::<u32>::zeros((4, 4));
        let a_rows = [[0, 1, 2, 3], [3, 0, 1, 2], [2, 3, 0, 1], [1, 2, 3, 0]];
        let b_rows = [[0, 3, 1, 2], [1, 0, 2, 3], [2, 3, 0, 1], [2, 1, 3, 0]];
        for i in 0..4 {
            for j in 0..4 {
                a[[i, j]] = a_rows[i][j];
                b[[i, j]] = b_rows[i][j];
            }
        }
        let ra = RankMatrix { ranks: a, tie_seed: 0 };
        let rb = RankMatrix { ranks: b, tie_seed: 0 };
        assert_eq!(information_imbalance(&ra, &rb).unwrap(), 1.0);
        assert_eq!(information_imbalance(&ra, &ra).unwrap(), 0.5);
    }

    #[test]
    fn imbalance_dimension_mismatch() {
        let ra = RankMatrix { ranks: Array2::zeros((3, 3)), tie_seed: 0 };
        let rb = RankMatrix { ranks: Array2::zeros((4, 4)), tie_seed: 0 };
        assert!(information_imbalance(&ra, &rb).is_err());
    }

    #[test]
    fn fewer_than_three_points_refused() {
        let d = line(&[0.0, 1.0]);
        assert!(matches!(similarity_on(&d, &d, 0, &[0, 1]), Err(Error::Parameter(_))));
    }

    #[test]
    fn top_k_follows_ranks() {
        let d = line(&[0.0, 1.0, 3.0, 3.5, 9.0]);
        let top = top_k_neighbors(&d, 2, 0).unwrap();
        assert_eq!(top[0], vec![1, 2]);
        assert_eq!(top[3], vec![2, 1]);
        assert_eq!(top[4], vec![3, 2]);
        assert!(top_k_neighbors(&d, 5, 0).is_err());
        assert!(top_k_neighbors(&d, 0, 0).is_err());
    }

    #[test]
    fn fast_path_agrees_with_rank_matrices_on_a_small_case() {
        let a = line(&[0.0, 1.0, 3.0, 3.5, 9.0]);
        let b = DistanceMatrix::new(array![
            [0.0, 2.0, 1.0, 4.0, 3.0],
            [2.0, 0.0, 5.0, 1.0, 1.0],
            [1.0, 5.0, 0.0, 2.0, 6.0],
            [4.0, 1.0, 2.0, 0.0, 7.0],
            [3.0, 1.0, 6.0, 7.0, 0.0]
        ])
        .unwrap();
        let all: Vec<usize> = (0..5).collect();
        let via_ranks = information_imbalance(&rank_matrix(&a, 3), &rank_matrix(&b, 3)).unwrap();
        assert_eq!(imbalance_on(&a, &b, 3, &all).unwrap(), via_ranks);
    }
}
