use ndarray::{Array2, ArrayView2, Axis};
use ndarray::parallel::prelude::*;

use crate::error::{Error, Result};
use crate::tensorstore::RepresentationMatrix;

/// Relative tolerance on row norms accepted as "unit-normalized".
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Symmetric all-pairs Euclidean distance matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Array2<f64>);

impl DistanceMatrix {
    /// Wraps a precomputed matrix after checking squareness, symmetry and a
    /// zero diagonal.
    pub fn new(d: Array2<f64>) -> Result<Self> {
        let n = d.nrows();
        if d.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: d.ncols(),
            });
        }
        for i in 0..n {
            if d[[i, i]] != 0.0 {
                return Err(Error::Contract(format!("distance diagonal entry {i} is nonzero")));
            }
            for j in 0..i {
                if d[[i, j]] != d[[j, i]] {
                    return Err(Error::Contract(format!("distance matrix asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix(d.as_standard_layout().into_owned()))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.0.as_slice().expect("standard layout")[i * n..(i + 1) * n]
    }
}

/// L2 distances between all rows, through the Gram matrix:
/// `d_ij^2 = |x_i|^2 + |x_j|^2 - 2 x_i.x_j`. Only the upper triangle is
/// evaluated and mirrored, so the result is exactly symmetric.
pub fn euclidean_distances(x: ArrayView2<'_, f64>) -> DistanceMatrix {
    let n = x.nrows();
    let gram = x.dot(&x.t());
    let sq: Vec<f64> = (0..n).map(|i| gram[[i, i]]).collect();
    let mut d = Array2::<f64>::zeros((n, n));
    d.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                let d2 = sq[a] + sq[b] - 2.0 * gram[[a, b]];
                row[j] = d2.max(0.0).sqrt();
            }
        });
    DistanceMatrix(d)
}

/// Distances between unit-normalized representations.
pub fn pairwise_distances(m: &RepresentationMatrix) -> Result<DistanceMatrix> {
    for (row, &id) in m.data.axis_iter(Axis(0)).zip(&m.ids) {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Contract(format!(
                "row for sentence {id} has norm {norm}; distances require unit-normalized input"
            )));
        }
    }
    Ok(euclidean_distances(m.data.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_and_orthogonal_rows() {
        let m = RepresentationMatrix::from_rows(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let d = pairwise_distances(&m).unwrap();
        assert_eq!(d.get(0, 1), 0.0);
        assert!((d.get(0, 2) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.get(2, 2), 0.0);
    }

    #[test]
    fn non_unit_input_is_a_contract_violation() {
        let m = RepresentationMatrix::from_rows(array![[1.0, 1.0], [0.0, 1.0]]);
        assert!(matches!(pairwise_distances(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn wrapping_checks_symmetry() {
        assert!(DistanceMatrix::new(array![[0.0, 1.0], [2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(array![[1.0, 1.0], [1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).is_ok());
    }
}
