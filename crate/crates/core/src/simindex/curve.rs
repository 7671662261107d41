//! Score-level API: similarity of two representation matrices, per-layer
//! curves with subsample error bars, and the batch-shuffle control.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::distance::{euclidean_distances, DistanceMatrix};
use super::rank::similarity_on;
use crate::error::{Error, Result};
use crate::tensorstore::{
    aggregate, clip_and_normalize, ActivationSet, Aggregation, DatasetRole, RepresentationMatrix,
};

/// Number of half-size subsamples behind every error bar.
pub const SUBSAMPLE_COUNT: usize = 5;

/// What a curve measures. Its canonical string is what ends up in the
/// `condition` CSV column.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Condition {
    pub roles: (String, String),
    pub aggregation: Aggregation,
    pub n_tokens: usize,
    pub ablation: String,
    pub control: String,
}

impl Condition {
    pub fn new(a: DatasetRole, b: DatasetRole, aggregation: Aggregation, n_tokens: usize) -> Self {
        Condition {
            roles: (a.name(), b.name()),
            aggregation,
            n_tokens,
            ablation: "none".into(),
            control: "none".into(),
        }
    }

    pub fn ablation(mut self, ablation: impl Into<String>) -> Self {
        self.ablation = ablation.into();
        self
    }

    pub fn control(mut self, control: impl Into<String>) -> Self {
        self.control = control.into();
        self
    }

    pub fn canonical(&self) -> String {
        format!(
            "{}~{}|{}{}|ablation={}|control={}",
            self.roles.0, self.roles.1, self.aggregation, self.n_tokens, self.ablation, self.control
        )
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub layer: usize,
    pub score: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityCurve {
    pub condition: Condition,
    pub points: Vec<CurvePoint>,
}

impl SimilarityCurve {
    pub fn score_at(&self, layer: usize) -> Option<f64> {
        self.points.iter().find(|p| p.layer == layer).map(|p| p.score)
    }
}

pub const CURVE_CSV_HEADER: &str = "layer,score,std,condition";

pub fn curves_to_csv(curves: &[SimilarityCurve]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for curve in curves {
        let condition = curve.condition.canonical();
        for p in &curve.points {
            out.push_str(&format!("{},{},{},{}\n", p.layer, p.score, p.std, condition));
        }
    }
    out
}

/// Index sets for the half-size subsamples (sorted, without replacement).
pub fn half_subsamples(n: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..SUBSAMPLE_COUNT as u64)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s.wrapping_mul(0x9E37_79B9)));
            let mut idx = rand::seq::index::sample(&mut rng, n, n / 2).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn check_aligned(a: &RepresentationMatrix, b: &RepresentationMatrix) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::Misaligned(format!(
            "{} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.original_ids != b.original_ids {
        let row = a
            .original_ids
            .iter()
            .zip(&b.original_ids)
            .position(|(x, y)| x != y)
            .unwrap_or(0);
        return Err(Error::Misaligned(format!(
            "row {row} pairs original {} with original {}",
            a.original_ids[row], b.original_ids[row]
        )));
    }
    Ok(())
}

/// Similarity of two spaces whose rows are paired by original id. Distances
/// are plain L2 distances of the rows as given, so any preprocessing is
/// the caller's choice.
pub fn similarity(a: &RepresentationMatrix, b: &RepresentationMatrix, tie_seed: u64) -> Result<f64> {
    check_aligned(a, b)?;
    let all: Vec<usize> = (0..a.nrows()).collect();
    similarity_on(
        &euclidean_distances(a.data.view()),
        &euclidean_distances(b.data.view()),
        tie_seed,
        &all,
    )
}

/// Full-sample score and the standard deviation over the half subsamples.
pub fn score_distances(
    a: &DistanceMatrix,
    b: &DistanceMatrix,
    tie_seed: u64,
    subsample_seed: u64,
) -> Result<CurvePoint> {
    let all: Vec<usize> = (0..a.len()).collect();
    let score = similarity_on(a, b, tie_seed, &all)?;
    let subs = half_subsamples(a.len(), subsample_seed)
        .iter()
        .map(|idx| similarity_on(a, b, tie_seed, idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(CurvePoint {
        layer: 0,
        score,
        std: sample_std(&subs),
    })
}

/// [`similarity`] plus its subsample error.
pub fn score_with_error(
    a: &RepresentationMatrix,
    b: &RepresentationMatrix,
    tie_seed: u64,
    subsample_seed: u64,
) -> Result<CurvePoint> {
    check_aligned(a, b)?;
    let point = score_distances(
        &euclidean_distances(a.data.view()),
        &euclidean_distances(b.data.view()),
        tie_seed,
        subsample_seed,
    )?;
    Ok(CurvePoint {
        layer: a.layer,
        ..point
    })
}

/// Subsample seed used when a curve is given only a tie seed.
pub fn derived_subsample_seed(tie_seed: u64) -> u64 {
    tie_seed ^ 0x5EED_5AB5_A3B1_E000
}

/// Per-layer similarity between two roles of a dump: aggregate, pair rows
/// by original, clip, normalize, score.
pub fn similarity_curve(
    set: &ActivationSet,
    role_a: DatasetRole,
    role_b: DatasetRole,
    layers: &[usize],
    aggregation: Aggregation,
    n_tokens: usize,
    tie_seed: u64,
) -> Result<SimilarityCurve> {
    let present: BTreeSet<usize> = set
        .layers_for(role_a)
        .intersection(&set.layers_for(role_b))
        .copied()
        .collect();
    let missing: Vec<usize> = layers.iter().copied().filter(|l| !present.contains(l)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingLayers(missing));
    }
    let manifest = set.manifest();
    let mut points = Vec::with_capacity(layers.len());
    for &layer in layers {
        let a = aggregate(set, role_a, layer, aggregation, n_tokens)?;
        let b = aggregate(set, role_b, layer, aggregation, n_tokens)?;
        let order = a.original_ids.clone();
        let b = b.align_to(manifest, &order)?;
        let a = clip_and_normalize(&a)?;
        let b = clip_and_normalize(&b)?;
        points.push(score_with_error(&a, &b, tie_seed, derived_subsample_seed(tie_seed))?);
    }
    Ok(SimilarityCurve {
        condition: Condition::new(role_a, role_b, aggregation, n_tokens),
        points,
    })
}

/// A seeded permutation of `0..n` that is never the identity (for `n >= 2`).
pub fn non_identity_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    if n >= 2 && perm.iter().enumerate().all(|(i, &p)| i == p) {
        perm.rotate_left(1);
    }
    perm
}

/// Similarity after shuffling the rows of `b`, breaking the pairing.
pub fn shuffle_control(a: &RepresentationMatrix, b: &RepresentationMatrix, seed: u64) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Misaligned(format!("{} rows vs {} rows", a.nrows(), b.nrows())));
    }
    let perm = non_identity_permutation(b.nrows(), seed);
    let shuffled = b.data.select(ndarray::Axis(0), &perm);
    let all: Vec<usize> = (0..a.nrows()).collect();
    similarity_on(
        &euclidean_distances(a.data.view()),
        &euclidean_distances(shuffled.view()),
        seed,
        &all,
    )
}
