//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use synsem::centroids::{CentroidKind, CentroidSet};
use synsem::simindex::tie_key;
use synsem::synthlab::{LayerCoefficients, SyntheticSpec};

pub fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

/// Small integer coordinates: squared distances are exact, so ties are
/// plentiful and identical under every summation order.
pub fn lattice(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.gen_range(-2i32..=2) as f64)
}

pub fn naive_distances(x: &Array2<f64>) -> Vec<Vec<f64>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut s = 0.0;
                    for k in 0..x.ncols() {
                        let t = x[[i, k]] - x[[j, k]];
                        s += t * t;
                    }
                    s.sqrt()
                })
                .collect()
        })
        .collect()
}

/// Row `i`: every other point, closest first, ties by the shared tie key.
pub fn naive_order(d: &[Vec<f64>], seed: u64) -> Vec<Vec<usize>> {
    let n = d.len();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                d[i][a]
                    .partial_cmp(&d[i][b])
                    .unwrap()
                    .then(tie_key(seed, i, a).cmp(&tie_key(seed, i, b)))
            });
            others
        })
        .collect()
}

/// `ranks[i][j]` in `1..n`, zero on the diagonal.
pub fn naive_ranks(d: &[Vec<f64>], seed: u64) -> Vec<Vec<u32>> {
    let n = d.len();
    naive_order(d, seed)
        .into_iter()
        .map(|order| {
            let mut r = vec![0u32; n];
            for (pos, j) in order.into_iter().enumerate() {
                r[j] = pos as u32 + 1;
            }
            r
        })
        .collect()
}

pub fn naive_imbalance(ra: &[Vec<u32>], rb: &[Vec<u32>]) -> f64 {
    let n = ra.len();
    let mut sum = 0u64;
    for i in 0..n {
        for j in 0..n {
            if ra[i][j] == 1 {
                sum += rb[i][j] as u64;
            }
        }
    }
    2.0 * sum as f64 / (n * n) as f64
}

pub fn naive_similarity(da: &[Vec<f64>], db: &[Vec<f64>], seed: u64) -> f64 {
    let ra = naive_ranks(da, seed);
    let rb = naive_ranks(db, seed);
    1.0 - (naive_imbalance(&ra, &rb) + naive_imbalance(&rb, &ra)) / 2.0
}

/// A centroid set from explicit vectors, keyed by original id.
pub fn centroid_set(kind: CentroidKind, vectors: BTreeMap<u32, ndarray::Array1<f64>>) -> CentroidSet {
    let assignment = vectors.keys().map(|&k| (k, k)).collect();
    CentroidSet {
        kind,
        vectors,
        provenance: BTreeMap::new(),
        templates: BTreeMap::new(),
        assignment,
        language_subset: Vec::new(),
    }
}

/// Semantic strength per layer of the planted corpus; syntax strength is 1.
pub const PLANTED_B: [f64; 4] = [0.8, 1.0, 1.5, 1.0];

/// 96 templates x 10 twins, 6 languages, four layers with the semantic
/// strength peaking at layer 2. sigma = 0.13 puts baseline twin similarity
/// near 0.85 for two averaged tokens.
pub fn planted_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_templates: 96,
        twins_per_template: 10,
        n_languages: 6,
        embedding_dim: 1600,
        n_tokens: 2,
        meaning_group: 2,
        sigma: 0.13,
        layer_profile: PLANTED_B.iter().map(|&b| LayerCoefficients { a: 1.0, b }).collect(),
        seed: 5,
    }
}

/// A corpus small enough for quick end-to-end runs of every experiment.
pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_templates: 8,
        twins_per_template: 6,
        n_languages: 3,
        embedding_dim: 160,
        n_tokens: 6,
        meaning_group: 2,
        sigma: 0.05,
        layer_profile: vec![
            LayerCoefficients { a: 1.0, b: 0.6 },
            LayerCoefficients { a: 1.0, b: 1.4 },
            LayerCoefficients { a: 0.8, b: 1.0 },
        ],
        seed,
    }
}

/// Rows of a `layer,score,std,condition` CSV as `(layer, score, std, condition)`.
pub fn parse_curves(csv: &str) -> Vec<(usize, f64, f64, String)> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.splitn(4, ',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].to_string())
        })
        .collect()
}

/// Scores of the curve whose condition contains `needle`, by layer.
pub fn curve(rows: &[(usize, f64, f64, String)], needle: &str) -> BTreeMap<usize, f64> {
    let out: BTreeMap<usize, f64> = rows
        .iter()
        .filter(|r| r.3.contains(needle))
        .map(|r| (r.0, r.1))
        .collect();
    assert!(!out.is_empty(), "no curve matches `{needle}`");
    out
}
