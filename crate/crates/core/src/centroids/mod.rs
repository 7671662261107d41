//! Syntactic and semantic centroids, and the ablations that remove them.
//!
//! A syntactic centroid `S_i` is the mean of the source-role sentences that
//! share the POS template of target `i`; source and target roles are always
//! different sets (twins ablate originals and vice versa), so `S_i` never
//! contains the target itself. A semantic centroid `T_i` is the mean of the
//! translations of original `i` over a language subset.
//!
//! Centroids are keyed by original id. For twin targets the key is the
//! original the twin is paired with.

mod io;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensorstore::{CorpusManifest, DatasetRole, Language, RepresentationMatrix};

pub use io::{read_centroids, write_centroids};

/// Minimum number of source sentences behind a syntactic centroid.
pub const MIN_TEMPLATE_SOURCES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CentroidKind {
    Syntactic,
    Semantic,
}

impl CentroidKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CentroidKind::Syntactic => "syntactic",
            CentroidKind::Semantic => "semantic",
        }
    }
}

impl fmt::Display for CentroidKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub kind: CentroidKind,
    pub vectors: BTreeMap<u32, Array1<f64>>,
    /// Sentence ids averaged into each centroid.
    pub provenance: BTreeMap<u32, Vec<u32>>,
    /// POS template of each target (syntactic sets only).
    pub templates: BTreeMap<u32, String>,
    /// Original whose centroid each key carries; the identity unless permuted.
    pub assignment: BTreeMap<u32, u32>,
    /// Languages averaged into semantic centroids.
    pub language_subset: Vec<Language>,
}

impl CentroidSet {
    pub fn dim(&self) -> usize {
        self.vectors.values().next().map_or(0, |v| v.len())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, original_id: u32) -> Option<&Array1<f64>> {
        self.vectors.get(&original_id)
    }

    pub fn is_permuted(&self) -> bool {
        self.assignment.iter().any(|(k, v)| k != v)
    }

    /// Copy with `shift` subtracted from every vector.
    pub fn shifted(&self, shift: &Array1<f64>) -> CentroidSet {
        CentroidSet {
            vectors: self
                .vectors
                .iter()
                .map(|(&k, v)| (k, v - shift))
                .collect(),
            ..self.clone()
        }
    }

    /// Centroid rows stacked in the given original-id order.
    pub fn matrix_for(&self, originals: &[u32]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((originals.len(), self.dim()));
        for (mut row, id) in out.axis_iter_mut(Axis(0)).zip(originals) {
            row.assign(self.get(*id).ok_or(Error::MissingCentroid(*id))?);
        }
        Ok(out)
    }
}

fn mean_of_rows(m: &RepresentationMatrix, rows: &[usize]) -> Array1<f64> {
    let mut acc = Array1::<f64>::zeros(m.ncols());
    for &r in rows {
        acc += &m.data.row(r);
    }
    acc / rows.len() as f64
}

/// Target sentences of a role: the rows that get paired with originals.
fn targets(manifest: &CorpusManifest, role: DatasetRole) -> Vec<(u32, u32)> {
    manifest
        .role_records(role)
        .filter(|r| role != DatasetRole::Twin || r.twin_index == Some(0))
        .map(|r| (r.id, r.original_id))
        .collect()
}

/// `S_i` for every target in `target_role`, averaged over the rows of
/// `source` (a different role) that share the target's POS template.
pub fn build_syntax_centroids(
    manifest: &CorpusManifest,
    source: &RepresentationMatrix,
    target_role: DatasetRole,
) -> Result<CentroidSet> {
    if source.role == target_role {
        return Err(Error::Parameter(format!(
            "syntactic centroids for {target_role} must come from a different role"
        )));
    }
    let mut by_template: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (row, &id) in source.ids.iter().enumerate() {
        if let Some(t) = manifest.template_of(id) {
            by_template.entry(t).or_default().push(row);
        }
    }

    let targets = targets(manifest, target_role);
    let mut needed: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for &(id, original) in &targets {
        let template = manifest.template_of(id).ok_or_else(|| {
            Error::Parameter(format!("target sentence {id} has no POS template"))
        })?;
        needed.entry(template).or_default().push(original);
    }
    let sparse: Vec<String> = needed
        .keys()
        .filter(|t| by_template.get(*t).map_or(0, Vec::len) < MIN_TEMPLATE_SOURCES)
        .map(|t| t.to_string())
        .collect();
    if !sparse.is_empty() {
        return Err(Error::SparseTemplates {
            min: MIN_TEMPLATE_SOURCES,
            templates: sparse,
        });
    }

    let mut set = CentroidSet {
        kind: CentroidKind::Syntactic,
        vectors: BTreeMap::new(),
        provenance: BTreeMap::new(),
        templates: BTreeMap::new(),
        assignment: BTreeMap::new(),
        language_subset: Vec::new(),
    };
    for (template, originals) in needed {
        let rows = &by_template[template];
        let centroid = mean_of_rows(source, rows);
        let contributors: Vec<u32> = rows.iter().map(|&r| source.ids[r]).collect();
        for original in originals {
            set.vectors.insert(original, centroid.clone());
            set.provenance.insert(original, contributors.clone());
            set.templates.insert(original, template.to_string());
            set.assignment.insert(original, original);
        }
    }
    Ok(set)
}

/// `T_i`: mean over `subset` of the translations of original `i`.
/// `reps` maps each language to its aggregated translation matrix.
pub fn build_semantic_centroids(
    manifest: &CorpusManifest,
    reps: &BTreeMap<Language, RepresentationMatrix>,
    subset: &[Language],
) -> Result<CentroidSet> {
    if subset.is_empty() || subset.len() > 6 {
        return Err(Error::Parameter(format!(
            "language subset size must be in 1..=6, got {}",
            subset.len()
        )));
    }
    for (i, lang) in subset.iter().enumerate() {
        if subset[..i].contains(lang) {
            return Err(Error::Parameter(format!("language `{lang}` listed twice")));
        }
    }
    let mut row_maps = Vec::with_capacity(subset.len());
    for lang in subset {
        let m = reps
            .get(lang)
            .ok_or_else(|| Error::MissingRole(DatasetRole::Translation(*lang).name()))?;
        let rows: HashMap<u32, usize> = m
            .original_ids
            .iter()
            .enumerate()
            .map(|(row, &o)| (o, row))
            .collect();
        row_maps.push((lang, m, rows));
    }
    let mut set = CentroidSet {
        kind: CentroidKind::Semantic,
        vectors: BTreeMap::new(),
        provenance: BTreeMap::new(),
        templates: BTreeMap::new(),
        assignment: BTreeMap::new(),
        language_subset: subset.to_vec(),
    };
    for original in manifest.original_ids() {
        let mut acc: Option<Array1<f64>> = None;
        let mut contributors = Vec::with_capacity(subset.len());
        for (lang, m, rows) in &row_maps {
            let &row = rows.get(&original).ok_or_else(|| Error::MissingTranslation {
                id: original,
                language: lang.to_string(),
            })?;
            contributors.push(m.ids[row]);
            match acc.as_mut() {
                Some(a) => *a += &m.data.row(row),
                None => acc = Some(m.data.row(row).to_owned()),
            }
        }
        let centroid = acc.expect("non-empty subset") / subset.len() as f64;
        set.vectors.insert(original, centroid);
        set.provenance.insert(original, contributors);
        set.assignment.insert(original, original);
    }
    Ok(set)
}

/// Subsets of `size` languages taken as windows over the cyclic rotations
/// of `languages`: one subset per starting offset, or the single full list.
pub fn cyclic_language_subsets(languages: &[Language], size: usize) -> Result<Vec<Vec<Language>>> {
    let n = languages.len();
    if size == 0 || size > n {
        return Err(Error::Parameter(format!(
            "subset size {size} outside 1..={n}"
        )));
    }
    if size == n {
        return Ok(vec![languages.to_vec()]);
    }
    Ok((0..n)
        .map(|start| (0..size).map(|k| languages[(start + k) % n]).collect())
        .collect())
}

/// Norm below which a centroid cannot define a direction: `1e-8 * sqrt(D)`.
pub fn degenerate_threshold(dim: usize) -> f64 {
    1e-8 * (dim as f64).sqrt()
}

fn check_dims(x: &ArrayView1<'_, f64>, c: &ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: c.len(),
        });
    }
    Ok(())
}

/// `x - (x.c / |c|^2) c`
pub fn ablate_projection(x: ArrayView1<'_, f64>, c: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    check_dims(&x, &c)?;
    let norm_sq = c.dot(&c);
    let threshold = degenerate_threshold(c.len());
    if !(norm_sq.sqrt() >= threshold) {
        return Err(Error::DegenerateCentroid {
            id: None,
            norm: norm_sq.sqrt(),
            threshold,
        });
    }
    let coef = x.dot(&c) / norm_sq;
    Ok(&x - &(&c * coef))
}

/// `x - c`
pub fn ablate_subtract(x: ArrayView1<'_, f64>, c: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    check_dims(&x, &c)?;
    Ok(&x - &c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    Projection,
    Subtraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Permutation {
    Aligned,
    RandomPermuted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSpec {
    pub mode: AblationMode,
    pub kind: CentroidKind,
    pub permutation: Permutation,
    pub permutation_seed: u64,
}

impl AblationSpec {
    pub fn aligned(kind: CentroidKind) -> Self {
        AblationSpec {
            mode: AblationMode::Projection,
            kind,
            permutation: Permutation::Aligned,
            permutation_seed: 0,
        }
    }

    pub fn permuted(kind: CentroidKind, seed: u64) -> Self {
        AblationSpec {
            permutation: Permutation::RandomPermuted,
            permutation_seed: seed,
            ..AblationSpec::aligned(kind)
        }
    }

    pub fn subtraction(kind: CentroidKind) -> Self {
        AblationSpec {
            mode: AblationMode::Subtraction,
            ..AblationSpec::aligned(kind)
        }
    }

    /// e.g. `syntactic-projection-aligned`
    pub fn label(&self) -> String {
        format!(
            "{}-{}-{}",
            self.kind,
            match self.mode {
                AblationMode::Projection => "projection",
                AblationMode::Subtraction => "subtraction",
            },
            match self.permutation {
                Permutation::Aligned => "aligned",
                Permutation::RandomPermuted => "permuted",
            }
        )
    }
}

fn random_derangement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Reassigns centroids so that no target keeps its own.
///
/// Syntactic targets receive the centroid of a uniformly drawn template
/// different from their own. Semantic centroids are permuted by a random
/// derangement.
pub fn permute_centroids(cs: &CentroidSet, seed: u64) -> Result<CentroidSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<u32> = cs.vectors.keys().copied().collect();
    let mut out = cs.clone();
    match cs.kind {
        CentroidKind::Syntactic => {
            // one representative target per template
            let mut representative: BTreeMap<&str, u32> = BTreeMap::new();
            for (&k, t) in &cs.templates {
                representative.entry(t.as_str()).or_insert(k);
            }
            if representative.len() < 2 {
                return Err(Error::Parameter(
                    "permuting syntactic centroids needs at least 2 distinct templates".into(),
                ));
            }
            let templates: Vec<&str> = representative.keys().copied().collect();
            for &k in &keys {
                let own = cs.templates[&k].as_str();
                let own_pos = templates.binary_search(&own).expect("template present");
                // uniform over the other templates
                let mut pick = rng.gen_range(0..templates.len() - 1);
                if pick >= own_pos {
                    pick += 1;
                }
                let source = representative[templates[pick]];
                out.vectors.insert(k, cs.vectors[&source].clone());
                out.provenance.insert(k, cs.provenance[&source].clone());
                out.assignment.insert(k, cs.assignment[&source]);
            }
        }
        CentroidKind::Semantic => {
            if keys.len() < 2 {
                return Err(Error::Parameter(
                    "permuting semantic centroids needs at least 2 originals".into(),
                ));
            }
            let perm = random_derangement(keys.len(), &mut rng);
            for (i, &k) in keys.iter().enumerate() {
                let source = keys[perm[i]];
                out.vectors.insert(k, cs.vectors[&source].clone());
                out.provenance.insert(k, cs.provenance[&source].clone());
                out.assignment.insert(k, cs.assignment[&source]);
            }
        }
    }
    Ok(out)
}

/// Applies the ablation row by row, matching rows to centroids by original
/// id. The output is not renormalized; zero rows are left for the
/// normalization step to reject.
pub fn ablate_matrix(
    m: &RepresentationMatrix,
    cs: &CentroidSet,
    spec: &AblationSpec,
) -> Result<RepresentationMatrix> {
    if cs.kind != spec.kind {
        return Err(Error::Parameter(format!(
            "ablation expects {} centroids, got {}",
            spec.kind, cs.kind
        )));
    }
    if cs.dim() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.ncols(),
            found: cs.dim(),
        });
    }
    let permuted;
    let cs = match spec.permutation {
        Permutation::RandomPermuted if !cs.is_permuted() => {
            permuted = permute_centroids(cs, spec.permutation_seed)?;
            &permuted
        }
        _ => cs,
    };
    let rows: Vec<Array1<f64>> = m
        .data
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(m.original_ids.par_iter().zip(m.ids.par_iter()))
        .map(|(x, (&original, &id))| {
            let c = cs.get(original).ok_or(Error::MissingCentroid(original))?;
            match spec.mode {
                AblationMode::Projection => {
                    ablate_projection(x, c.view()).map_err(|e| match e {
                        Error::DegenerateCentroid { norm, threshold, .. } => {
                            Error::DegenerateCentroid {
                                id: Some(id),
                                norm,
                                threshold,
                            }
                        }
                        other => other,
                    })
                }
                AblationMode::Subtraction => ablate_subtract(x, c.view()),
            }
        })
        .collect::<Result<_>>()?;
    let mut data = Array2::zeros(m.data.dim());
    for (mut out, row) in data.axis_iter_mut(Axis(0)).zip(rows) {
        out.assign(&row);
    }
    Ok(m.with_data(data))
}
