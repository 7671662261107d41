//! Squared-norm decomposition of sentence vectors along their syntactic and
//! semantic centroid directions.
//!
//! Per layer: subtract the global mean `G` of the sentence vectors from the
//! sentences and from both centroids, remove from each `S_i` its projection
//! on `T_i`, then average the squared cosines
//!
//! ```text
//! syntactic = mean_i (X_i . S_i)^2 / (|S_i|^2 |X_i|^2)
//! semantic  = mean_i (X_i . T_i)^2 / (|T_i|^2 |X_i|^2)
//! residual  = 1 - syntactic - semantic
//! ```
//!
//! With `S_i` orthogonal to `T_i` the two fractions are coefficients of an
//! orthogonal expansion, so the residual is never negative.

use ndarray::{Array1, ArrayView1, Axis};
use ndarray::parallel::prelude::*;

use crate::centroids::{degenerate_threshold, CentroidSet};
use crate::error::{Error, Result};
use crate::tensorstore::{Aggregation, RepresentationMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDecomposition {
    pub layer: usize,
    pub syntactic: f64,
    pub semantic: f64,
    pub residual: f64,
    /// Sentences left out because a centered vector vanished.
    pub excluded: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormDecomposition {
    pub aggregation: Aggregation,
    pub n_tokens: usize,
    pub layers: Vec<LayerDecomposition>,
}

pub const DECOMPOSITION_CSV_HEADER: &str = "layer,syntactic,semantic,residual";

impl NormDecomposition {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(DECOMPOSITION_CSV_HEADER);
        out.push('\n');
        for l in &self.layers {
            out.push_str(&format!("{},{},{},{}\n", l.layer, l.syntactic, l.semantic, l.residual));
        }
        out
    }
}

fn project_out(v: &Array1<f64>, dir: &Array1<f64>) -> Array1<f64> {
    v - &(dir * (v.dot(dir) / dir.dot(dir)))
}

fn squared_cosine(x: ArrayView1<'_, f64>, c: &Array1<f64>) -> f64 {
    let dot = x.dot(c);
    dot * dot / (c.dot(c) * x.dot(&x))
}

/// Fractions for one layer. Rows of `x` are matched to centroids by
/// original id.
pub fn norm_fractions(
    x: &RepresentationMatrix,
    syntactic: &CentroidSet,
    semantic: &CentroidSet,
) -> Result<LayerDecomposition> {
    let g = x
        .data
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Parameter("cannot decompose an empty matrix".into()))?;
    let threshold = degenerate_threshold(x.ncols());
    let per_row: Vec<Result<Option<(f64, f64)>>> = x
        .data
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(x.original_ids.par_iter())
        .map(|(row, &original)| {
            let s = syntactic.get(original).ok_or(Error::MissingCentroid(original))?;
            let t = semantic.get(original).ok_or(Error::MissingCentroid(original))?;
            if s.len() != row.len() || t.len() != row.len() {
                return Err(Error::DimensionMismatch {
                    expected: row.len(),
                    found: s.len().max(t.len()),
                });
            }
            let xc = &row - &g;
            let tc = t - &g;
            if xc.dot(&xc).sqrt() < threshold || tc.dot(&tc).sqrt() < threshold {
                return Ok(None);
            }
            let sc = project_out(&(s - &g), &tc);
            if sc.dot(&sc).sqrt() < threshold {
                return Ok(None);
            }
            Ok(Some((squared_cosine(xc.view(), &sc), squared_cosine(xc.view(), &tc))))
        })
        .collect();

    let mut syn = 0.0;
    let mut sem = 0.0;
    let mut kept = 0usize;
    let mut excluded = Vec::new();
    for (r, &id) in per_row.into_iter().zip(&x.ids) {
        match r? {
            Some((a, b)) => {
                syn += a;
                sem += b;
                kept += 1;
            }
            None => excluded.push(id),
        }
    }
    if kept == 0 {
        return Err(Error::DegenerateRow {
            id: excluded.first().copied().unwrap_or(0),
        });
    }
    let syntactic = syn / kept as f64;
    let semantic = sem / kept as f64;
    Ok(LayerDecomposition {
        layer: x.layer,
        syntactic,
        semantic,
        residual: 1.0 - syntactic - semantic,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub skipped: usize,
}

/// Mean and (population) standard deviation of `cos(S_i, T_i)`, after
/// subtracting `center` from both when given. Pairs with a vanishing vector
/// are skipped and counted.
pub fn centroid_alignment_report(
    syntactic: &CentroidSet,
    semantic: &CentroidSet,
    center: Option<&Array1<f64>>,
) -> Result<AlignmentReport> {
    let threshold = degenerate_threshold(syntactic.dim());
    let mut cosines = Vec::with_capacity(syntactic.len());
    let mut skipped = 0;
    for (&id, s) in &syntactic.vectors {
        let t = semantic.get(id).ok_or(Error::MissingCentroid(id))?;
        let (s, t) = match center {
            Some(g) => (s - g, t - g),
            None => (s.clone(), t.clone()),
        };
        let (ns, nt) = (s.dot(&s).sqrt(), t.dot(&t).sqrt());
        if ns < threshold || nt < threshold {
            skipped += 1;
            continue;
        }
        cosines.push(s.dot(&t) / (ns * nt));
    }
    if cosines.is_empty() {
        return Err(Error::Parameter("no non-degenerate centroid pairs".into()));
    }
    let n = cosines.len() as f64;
    let mean = cosines.iter().sum::<f64>() / n;
    let var = cosines.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok(AlignmentReport {
        mean,
        std: var.sqrt(),
        count: cosines.len(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centroids::CentroidKind;
    use ndarray::{array, Array2};
    use std::collections::BTreeMap;

    fn set(kind: CentroidKind, rows: &[Array1<f64>]) -> CentroidSet {
        let vectors: BTreeMap<u32, Array1<f64>> =
            rows.iter().enumerate().map(|(i, v)| (i as u32, v.clone())).collect();
        CentroidSet {
            kind,
            assignment: vectors.keys().map(|&k| (k, k)).collect(),
            provenance: vectors.keys().map(|&k| (k, vec![])).collect(),
            vectors,
            templates: BTreeMap::new(),
            language_subset: vec![],
        }
    }

    // Rows come in +/- pairs so the global mean is zero and centering is a no-op.
    fn mirrored(rows: &[[f64; 3]]) -> Array2<f64> {
        let mut data = Array2::zeros((rows.len() * 2, 3));
        for (i, r) in rows.iter().enumerate() {
            for d in 0..3 {
                data[[2 * i, d]] = r[d];
                data[[2 * i + 1, d]] = -r[d];
            }
        }
        data
    }

    #[test]
    fn sentence_along_semantic_centroid() {
        let x = RepresentationMatrix::from_rows(mirrored(&[[0.0, 2.0, 0.0]]));
        let s = set(CentroidKind::Syntactic, &[array![1.0, 0.0, 0.0], array![-1.0, 0.0, 0.0]]);
        let t = set(CentroidKind::Semantic, &[array![0.0, 1.0, 0.0], array![0.0, -1.0, 0.0]]);
        let d = norm_fractions(&x, &s, &t).unwrap();
        assert!((d.semantic - 1.0).abs() < 1e-12);
        assert!(d.syntactic.abs() < 1e-12);
        assert!(d.residual.abs() < 1e-12);
    }

    #[test]
    fn sentence_orthogonal_to_both() {
        let x = RepresentationMatrix::from_rows(mirrored(&[[0.0, 0.0, 3.0]]));
        let s = set(CentroidKind::Syntactic, &[array![1.0, 0.0, 0.0], array![-1.0, 0.0, 0.0]]);
        let t = set(CentroidKind::Semantic, &[array![0.0, 1.0, 0.0], array![0.0, -1.0, 0.0]]);
        let d = norm_fractions(&x, &s, &t).unwrap();
        assert!((d.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_direction_excludes_the_sentence() {
        // For rows 0 and 1, S is parallel to T and vanishes after orthogonalization.
        let x = RepresentationMatrix::from_rows(mirrored(&[[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]));
        let s = set(
            CentroidKind::Syntactic,
            &[array![1.0, 1.0, 0.0], array![-1.0, -1.0, 0.0], array![1.0, 0.0, 0.0], array![-1.0, 0.0, 0.0]],
        );
        let t = set(
            CentroidKind::Semantic,
            &[array![1.0, 1.0, 0.0], array![-1.0, -1.0, 0.0], array![0.0, 1.0, 0.0], array![0.0, -1.0, 0.0]],
        );
        let d = norm_fractions(&x, &s, &t).unwrap();
        assert_eq!(d.excluded, vec![0, 1]);
        assert!((d.residual - 1.0).abs() < 1e-12);
        assert!(matches!(
            norm_fractions(&RepresentationMatrix::from_rows(Array2::zeros((4, 3))), &s, &t),
            Err(Error::DegenerateRow { .. })
        ));
    }

    #[test]
    fn alignment_report_extremes() {
        let a = set(CentroidKind::Syntactic, &[array![1.0, 0.0], array![0.0, 2.0]]);
        let b = set(CentroidKind::Semantic, &[array![0.0, 3.0], array![5.0, 0.0]]);
        let r = centroid_alignment_report(&a, &b, None).unwrap();
        assert_eq!((r.mean, r.std, r.count), (0.0, 0.0, 2));
        let r = centroid_alignment_report(&a, &a, None).unwrap();
        assert!((r.mean - 1.0).abs() < 1e-15 && r.std < 1e-15);
        let zero = set(CentroidKind::Semantic, &[array![0.0, 0.0], array![1.0, 1.0]]);
        let r = centroid_alignment_report(&a, &zero, None).unwrap();
        assert_eq!(r.skipped, 1);
    }

    #[test]
    fn csv_has_stable_header() {
        let d = NormDecomposition {
            aggregation: Aggregation::Average,
            n_tokens: 3,
            layers: vec![LayerDecomposition {
                layer: 2,
                syntactic: 0.25,
                semantic: 0.5,
                residual: 0.25,
                excluded: vec![],
            }],
        };
        assert_eq!(d.to_csv(), "layer,syntactic,semantic,residual\n2,0.25,0.5,0.25\n");
    }
}
