//! Sentence vectors from token activations, and the preprocessing applied
//! before any distance is measured: quantile clipping, centering and unit
//! normalization.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Axis, Zip};
use ndarray::parallel::prelude::*;

use super::dump::ActivationSet;
use super::manifest::{CorpusManifest, DatasetRole};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    /// `[v_{t-n+1} | ... | v_t]`
    Concat,
    /// `(1/n) * sum of the last n token vectors`
    Average,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Concat => "concat",
            Aggregation::Average => "average",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Aggregation::Concat),
            "average" | "avg" => Ok(Aggregation::Average),
            other => Err(Error::Parameter(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// One row per sentence, labelled with the sentence id and the original it
/// belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix {
    pub data: Array2<f64>,
    pub aggregation: Aggregation,
    pub n_tokens: usize,
    pub layer: usize,
    pub role: DatasetRole,
    pub ids: Vec<u32>,
    pub original_ids: Vec<u32>,
}

impl RepresentationMatrix {
    pub fn new(
        data: Array2<f64>,
        role: DatasetRole,
        layer: usize,
        aggregation: Aggregation,
        n_tokens: usize,
        ids: Vec<u32>,
        original_ids: Vec<u32>,
    ) -> Result<Self> {
        let rows = data.nrows();
        for len in [ids.len(), original_ids.len()] {
            if len != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: len,
                });
            }
        }
        if n_tokens == 0 {
            return Err(Error::Parameter("n_tokens must be at least 1".into()));
        }
        if aggregation == Aggregation::Concat && data.ncols() % n_tokens != 0 {
            return Err(Error::Parameter(format!(
                "concat width {} is not a multiple of n_tokens {n_tokens}",
                data.ncols()
            )));
        }
        Ok(RepresentationMatrix {
            data,
            aggregation,
            n_tokens,
            layer,
            role,
            ids,
            original_ids,
        })
    }

    /// Matrix whose row `i` is sentence `i`, belonging to original `i`.
    pub fn from_rows(data: Array2<f64>) -> Self {
        let ids: Vec<u32> = (0..data.nrows() as u32).collect();
        RepresentationMatrix {
            data,
            aggregation: Aggregation::Average,
            n_tokens: 1,
            layer: 0,
            role: DatasetRole::Original,
            original_ids: ids.clone(),
            ids,
        }
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Same labels, new values.
    pub fn with_data(&self, data: Array2<f64>) -> Self {
        assert_eq!(data.dim(), self.data.dim(), "with_data must keep the shape");
        RepresentationMatrix {
            data,
            ..self.clone_labels()
        }
    }

    fn clone_labels(&self) -> Self {
        RepresentationMatrix {
            data: Array2::zeros((0, 0)),
            aggregation: self.aggregation,
            n_tokens: self.n_tokens,
            layer: self.layer,
            role: self.role,
            ids: self.ids.clone(),
            original_ids: self.original_ids.clone(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        RepresentationMatrix {
            data: self.data.select(Axis(0), rows),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            original_ids: rows.iter().map(|&r| self.original_ids[r]).collect(),
            ..self.clone_labels()
        }
    }

    /// Reorders rows so that row `i` is the partner of `originals[i]`. Twins
    /// are matched through `twin_index == 0`; other roles have at most one
    /// sentence per original.
    pub fn align_to(&self, manifest: &CorpusManifest, originals: &[u32]) -> Result<Self> {
        let mut row_of = std::collections::HashMap::with_capacity(self.nrows());
        for (row, (&id, &orig)) in self.ids.iter().zip(&self.original_ids).enumerate() {
            if self.role == DatasetRole::Twin {
                let primary = manifest
                    .record(id)
                    .is_some_and(|r| r.twin_index == Some(0));
                if !primary {
                    continue;
                }
            }
            row_of.insert(orig, row);
        }
        let rows = originals
            .iter()
            .map(|o| {
                row_of.get(o).copied().ok_or_else(|| {
                    Error::Misaligned(format!("{} has no sentence for original {o}", self.role))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_rows(&rows))
    }
}

pub fn aggregate(
    set: &ActivationSet,
    role: DatasetRole,
    layer: usize,
    mode: Aggregation,
    n_tokens: usize,
) -> Result<RepresentationMatrix> {
    let tensor = set
        .tensor(role, layer)
        .ok_or_else(|| match set.layers_for(role).is_empty() {
            true => Error::MissingRole(role.name()),
            false => Error::MissingLayers(vec![layer]),
        })?;
    let (rows, tokens, embed) = tensor.dim();
    if n_tokens == 0 || n_tokens > tokens {
        return Err(Error::Parameter(format!(
            "n_tokens = {n_tokens} outside 1..={tokens} stored tokens"
        )));
    }
    let last = tensor.slice(s![.., tokens - n_tokens.., ..]);
    let data = match mode {
        Aggregation::Concat => last
            .to_owned()
            .into_shape_with_order((rows, n_tokens * embed))
            .expect("contiguous slice")
            .mapv(f64::from),
        Aggregation::Average => {
            let mut acc = Array2::<f64>::zeros((rows, embed));
            for t in 0..n_tokens {
                Zip::from(&mut acc)
                    .and(&last.index_axis(Axis(1), t))
                    .for_each(|a, &v| *a += f64::from(v));
            }
            acc / n_tokens as f64
        }
    };
    let records: Vec<_> = set.manifest().role_records(role).collect();
    RepresentationMatrix::new(
        data,
        role,
        layer,
        mode,
        n_tokens,
        records.iter().map(|r| r.id).collect(),
        records.iter().map(|r| r.original_id).collect(),
    )
}

/// Clip bounds of sorted data: the order statistics at positions
/// `floor(lo (n-1))` and `ceil(hi (n-1))`. Bounds are observed values, so a
/// clipped column has the same bounds and clipping is idempotent.
pub fn clip_bounds_sorted(sorted: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let last = (sorted.len() - 1) as f64;
    // absorb rounding in products such as 0.95 * 20
    let a = (lo * last + 1e-9).floor() as usize;
    let b = ((hi * last - 1e-9).ceil().max(0.0) as usize).min(sorted.len() - 1);
    (sorted[a.min(b)], sorted[b])
}

/// Clamps every column to its `[q(lo), q(hi)]` range over the rows.
pub fn clip_quantiles(m: &RepresentationMatrix, lo: f64, hi: f64) -> Result<RepresentationMatrix> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::Parameter(format!(
            "quantiles must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})"
        )));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Parameter("cannot clip an empty matrix".into()));
    }
    let bounds: Vec<(f64, f64)> = m
        .data
        .axis_iter(Axis(1))
        .into_par_iter()
        .map(|col| {
            let mut sorted = col.to_vec();
            sorted.sort_unstable_by(f64::total_cmp);
            clip_bounds_sorted(&sorted, lo, hi)
        })
        .collect();
    let mut data = m.data.clone();
    data.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row| {
        for (v, &(a, b)) in row.iter_mut().zip(&bounds) {
            *v = v.clamp(a, b);
        }
    });
    Ok(m.with_data(data))
}

pub fn unit_normalize(m: &RepresentationMatrix) -> Result<RepresentationMatrix> {
    let mut data = m.data.clone();
    for (mut row, &id) in data.axis_iter_mut(Axis(0)).zip(&m.ids) {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateRow { id });
        }
        row /= norm;
    }
    Ok(m.with_data(data))
}

/// Default clipping quantiles.
pub const CLIP_LO: f64 = 0.05;
pub const CLIP_HI: f64 = 0.95;

/// The standard route to distance-ready rows: clip to the default
/// quantiles, then unit-normalize.
pub fn clip_and_normalize(m: &RepresentationMatrix) -> Result<RepresentationMatrix> {
    unit_normalize(&clip_quantiles(m, CLIP_LO, CLIP_HI)?)
}

/// Subtracts the mean row; returns the centered matrix and the mean.
pub fn center_global(m: &RepresentationMatrix) -> Result<(RepresentationMatrix, Array1<f64>)> {
    let mean = m
        .data
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Parameter("cannot center an empty matrix".into()))?;
    let data = &m.data - &mean;
    Ok((m.with_data(data), mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_column_is_not_clipped() {
        let m = RepresentationMatrix::from_rows(array![[2.0, 1.0], [2.0, 5.0], [2.0, 9.0]]);
        let c = clip_quantiles(&m, 0.05, 0.95).unwrap();
        assert!(c.data.column(0).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn full_range_clip_is_identity() {
        let m = RepresentationMatrix::from_rows(array![[0.3, -1.0], [7.0, 5.0], [2.0, 9.0]]);
        assert_eq!(clip_quantiles(&m, 0.0, 1.0).unwrap().data, m.data);
    }

    #[test]
    fn clip_rejects_bad_bounds_and_empty_input() {
        let m = RepresentationMatrix::from_rows(array![[1.0]]);
        assert!(clip_quantiles(&m, 0.6, 0.4).is_err());
        assert!(clip_quantiles(&m, -0.1, 0.4).is_err());
        let empty = RepresentationMatrix::from_rows(Array2::zeros((0, 3)));
        assert!(matches!(clip_quantiles(&empty, 0.05, 0.95), Err(Error::Parameter(_))));
    }

    #[test]
    fn unit_normalize_3_4() {
        let m = RepresentationMatrix::from_rows(array![[3.0, 4.0]]);
        let n = unit_normalize(&m).unwrap();
        assert!((n.data[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((n.data[[0, 1]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_row_names_its_sentence() {
        let mut m = RepresentationMatrix::from_rows(array![[1.0, 0.0], [0.0, 0.0]]);
        m.ids = vec![10, 11];
        assert!(matches!(unit_normalize(&m), Err(Error::DegenerateRow { id: 11 })));
    }

    #[test]
    fn centering_examples() {
        let m = RepresentationMatrix::from_rows(array![[1.0, 0.0], [-1.0, 0.0]]);
        let (c, mean) = center_global(&m).unwrap();
        assert_eq!(c.data, m.data);
        assert_eq!(mean, array![0.0, 0.0]);

        let m = RepresentationMatrix::from_rows(array![[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]]);
        let (c, mean) = center_global(&m).unwrap();
        assert!(c.data.iter().all(|&v| v == 0.0));
        assert_eq!(mean, array![1.5, -2.0]);

        let empty = RepresentationMatrix::from_rows(Array2::zeros((0, 2)));
        assert!(center_global(&empty).is_err());
    }

    #[test]
    fn bounds_are_outward_order_statistics() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(clip_bounds_sorted(&v, 0.05, 0.95), (5.0, 96.0));
        let w: Vec<f64> = (0..=20).map(f64::from).collect();
        assert_eq!(clip_bounds_sorted(&w, 0.05, 0.95), (1.0, 19.0));
        assert_eq!(clip_bounds_sorted(&v, 0.0, 1.0), (1.0, 100.0));
        assert_eq!(clip_bounds_sorted(&[4.0], 0.3, 0.6), (4.0, 4.0));
    }

    #[test]
    fn column_1_to_100_loses_only_its_extremes() {
        let m = RepresentationMatrix::from_rows(Array2::from_shape_fn((100, 1), |(i, _)| i as f64 + 1.0));
        let c = clip_quantiles(&m, 0.05, 0.95).unwrap();
        let changed: Vec<f64> = m
            .data
            .iter()
            .zip(c.data.iter())
            .filter(|(a, b)| a != b)
            .map(|(a, _)| *a)
            .collect();
        assert_eq!(changed, vec![1.0, 2.0, 3.0, 4.0, 97.0, 98.0, 99.0, 100.0]);
        assert_eq!(clip_quantiles(&c, 0.05, 0.95).unwrap(), c);
    }
}
