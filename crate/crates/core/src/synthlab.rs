//! Synthetic corpora with planted linear structure.
//!
//! Every template `k` gets a direction `u_k`, every meaning a direction; all
//! of them mutually orthonormal. At layer `l` a sentence token is
//!
//! ```text
//! original i   a_l u_k + b_l v_m + noise
//! twin of i    a_l u_k + b_l w_i + noise      (same template, new meaning)
//! paraphrase   a_l u_r + b_l v_m + noise      (r a random other template)
//! translation            b_l v_m + noise
//! ```
//!
//! where `m` is the meaning of original `i`. Consecutive originals of a
//! template share a meaning in groups of `meaning_group`, so that meaning,
//! like syntax, induces neighborhoods; every twin has a meaning of its own.
//!
//! with isotropic Gaussian noise of standard deviation `sigma` drawn
//! independently per token and coordinate. Directions are dense (random
//! orthonormal bases), so no single coordinate carries a signal.

use std::collections::BTreeMap;

use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensorstore::{ActivationSet, CorpusManifest, DType, DatasetRole, Language, SentenceRecord, SentenceRole};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCoefficients {
    /// Syntax strength.
    pub a: f64,
    /// Semantic strength.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_templates: usize,
    /// Originals per template; each original has one twin.
    pub twins_per_template: usize,
    /// Number of translation languages, taken in order from es, it, tr, de, ar, zh.
    pub n_languages: usize,
    pub embedding_dim: usize,
    pub n_tokens: usize,
    /// Originals of one template per shared meaning.
    pub meaning_group: usize,
    pub sigma: f64,
    pub layer_profile: Vec<LayerCoefficients>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn n_originals(&self) -> usize {
        self.n_templates * self.twins_per_template
    }

    fn groups_per_template(&self) -> usize {
        self.twins_per_template.div_ceil(self.meaning_group.max(1))
    }

    /// Meanings of the originals (and their paraphrases and translations).
    pub fn n_original_meanings(&self) -> usize {
        self.n_templates * self.groups_per_template()
    }

    /// Templates, original meanings and one meaning per twin.
    pub fn n_directions(&self) -> usize {
        self.n_templates + self.n_original_meanings() + self.n_originals()
    }

    /// Meaning index of original `i`.
    pub fn meaning_of(&self, i: usize) -> usize {
        let t = i / self.twins_per_template;
        t * self.groups_per_template() + (i % self.twins_per_template) / self.meaning_group.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_templates < 2 {
            return Err(Error::Parameter("at least 2 templates are needed".into()));
        }
        if self.twins_per_template < 5 {
            return Err(Error::Parameter(format!(
                "twins_per_template must be at least 5, got {}",
                self.twins_per_template
            )));
        }
        if self.n_languages > 6 {
            return Err(Error::Parameter(format!("at most 6 translation languages, got {}", self.n_languages)));
        }
        if self.meaning_group == 0 {
            return Err(Error::Parameter("meaning_group must be at least 1".into()));
        }
        if self.n_tokens == 0 || self.layer_profile.is_empty() {
            return Err(Error::Parameter("need at least one token and one layer".into()));
        }
        let bad = |v: f64| !(v >= 0.0 && v.is_finite());
        if bad(self.sigma) || self.layer_profile.iter().any(|c| bad(c.a) || bad(c.b)) {
            return Err(Error::Parameter("a, b and sigma must be finite and non-negative".into()));
        }
        if self.embedding_dim < self.n_directions() {
            return Err(Error::Parameter(format!(
                "embedding dim {} cannot host {} orthonormal directions",
                self.embedding_dim,
                self.n_directions()
            )));
        }
        Ok(())
    }
}

/// Ground truth for a generated corpus. Rows of `templates` are the `u_k`,
/// rows of `meanings` the meaning directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDirections {
    pub templates: Array2<f64>,
    pub meanings: Array2<f64>,
    /// Planted template of each sentence id, if any.
    pub sentence_template: BTreeMap<u32, usize>,
    pub sentence_meaning: BTreeMap<u32, usize>,
}

impl PlantedDirections {
    pub fn template_direction(&self, id: u32) -> Option<ArrayView1<'_, f64>> {
        self.sentence_template.get(&id).map(|&k| self.templates.row(k))
    }

    pub fn meaning_direction(&self, id: u32) -> Option<ArrayView1<'_, f64>> {
        self.sentence_meaning.get(&id).map(|&m| self.meanings.row(m))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub activations: ActivationSet,
    pub directions: PlantedDirections,
}

impl SyntheticCorpus {
    pub fn manifest(&self) -> &CorpusManifest {
        self.activations.manifest()
    }
}

pub fn template_name(k: usize) -> String {
    format!("T{k:03}")
}

/// `count` random orthonormal rows in `dim` dimensions: Gaussian rows
/// orthogonalized block by block, each block projected twice against the
/// accepted rows.
pub fn orthonormal_directions(count: usize, dim: usize, seed: u64) -> Result<Array2<f64>> {
    if count > dim {
        return Err(Error::Parameter(format!("{count} orthonormal directions do not fit in {dim} dimensions")));
    }
    const BLOCK: usize = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Array2::<f64>::from_shape_simple_fn((count, dim), || rng.sample(StandardNormal));
    let mut start = 0;
    while start < count {
        let end = (start + BLOCK).min(count);
        let (done, mut rest) = q.view_mut().split_at(Axis(0), start);
        let mut block = rest.slice_mut(s![..end - start, ..]);
        for _ in 0..2 {
            if start > 0 {
                let coef = block.dot(&done.t());
                block -= &coef.dot(&done);
            }
            for i in 0..block.nrows() {
                for j in 0..i {
                    let (head, mut tail) = block.view_mut().split_at(Axis(0), i);
                    let prev = head.row(j);
                    let mut row = tail.row_mut(0);
                    let c = row.dot(&prev);
                    row.scaled_add(-c, &prev);
                }
                let mut row = block.row_mut(i);
                let n = row.dot(&row).sqrt();
                if n < 1e-10 {
                    return Err(Error::Contract("random directions were linearly dependent".into()));
                }
                row /= n;
            }
        }
        start = end;
    }
    Ok(q)
}

/// Squared cosine of `x` with the unit vector `direction`.
pub fn oracle_component(x: ArrayView1<'_, f64>, direction: ArrayView1<'_, f64>) -> Result<f64> {
    if x.len() != direction.len() {
        return Err(Error::DimensionMismatch {
            expected: direction.len(),
            found: x.len(),
        });
    }
    if (direction.dot(&direction) - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter("oracle direction must be unit-norm".into()));
    }
    let xx = x.dot(&x);
    if xx == 0.0 {
        return Err(Error::Parameter("oracle component of a zero vector".into()));
    }
    let d = x.dot(&direction);
    Ok(d * d / xx)
}

struct Row {
    template: Option<usize>,
    meaning: usize,
}

fn row_seed(seed: u64, role: usize, layer: usize, row: usize) -> u64 {
    crate::simindex::tie_key(seed ^ 0x5EED_0F_A11CE, role * 1_000_003 + layer, row)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let n = spec.n_originals();
    let k = spec.n_templates;
    let all = orthonormal_directions(spec.n_directions(), spec.embedding_dim, spec.seed)?;
    let templates = all.slice(s![..k, ..]).to_owned();
    let meanings = all.slice(s![k.., ..]).to_owned();
    drop(all);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let languages: Vec<Language> = Language::ALL[1..=spec.n_languages].to_vec();
    let mut records = Vec::new();
    let mut rows: BTreeMap<DatasetRole, Vec<Row>> = BTreeMap::new();
    let mut sentence_template = BTreeMap::new();
    let mut sentence_meaning = BTreeMap::new();
    let mut push = |record: SentenceRecord, role: DatasetRole, template: Option<usize>, meaning: usize, rows: &mut BTreeMap<DatasetRole, Vec<Row>>| {
        if let Some(t) = template {
            sentence_template.insert(record.id, t);
        }
        sentence_meaning.insert(record.id, meaning);
        rows.entry(role).or_default().push(Row {
            template,
            meaning,
        });
        records.push(record);
    };

    let template_of = |i: usize| i / spec.twins_per_template;
    let twin_base = spec.n_original_meanings();
    for i in 0..n {
        let t = template_of(i);
        let record = SentenceRecord {
            id: i as u32,
            text: format!("synthetic sentence {i}"),
            role: SentenceRole::Original,
            pos_template: Some(template_name(t)),
            language: Language::En,
            original_id: i as u32,
            twin_index: None,
        };
        push(record, DatasetRole::Original, Some(t), spec.meaning_of(i), &mut rows);
    }
    for i in 0..n {
        let t = template_of(i);
        let record = SentenceRecord {
            id: (n + i) as u32,
            text: format!("synthetic twin of {i}"),
            role: SentenceRole::SyntaxTwin,
            pos_template: Some(template_name(t)),
            language: Language::En,
            original_id: i as u32,
            twin_index: Some(0),
        };
        push(record, DatasetRole::Twin, Some(t), twin_base + i, &mut rows);
    }
    for i in 0..n {
        let own = template_of(i);
        let mut r = rng.gen_range(0..k - 1);
        if r >= own {
            r += 1;
        }
        let record = SentenceRecord {
            id: (2 * n + i) as u32,
            text: format!("synthetic paraphrase of {i}"),
            role: SentenceRole::Paraphrase,
            pos_template: None,
            language: Language::En,
            original_id: i as u32,
            twin_index: None,
        };
        push(record, DatasetRole::Paraphrase, Some(r), spec.meaning_of(i), &mut rows);
    }
    for (li, &lang) in languages.iter().enumerate() {
        for i in 0..n {
            let record = SentenceRecord {
                id: ((3 + li) * n + i) as u32,
                text: format!("synthetic {lang} translation of {i}"),
                role: SentenceRole::Translation,
                pos_template: None,
                language: lang,
                original_id: i as u32,
                twin_index: None,
            };
            push(record, DatasetRole::Translation(lang), None, spec.meaning_of(i), &mut rows);
        }
    }
    let manifest = CorpusManifest::new(records)?;

    let mut tensors = BTreeMap::new();
    for (role_index, (&role, role_rows)) in rows.iter().enumerate() {
        for (layer, coef) in spec.layer_profile.iter().enumerate() {
            let mut t = Array3::<f32>::zeros((role_rows.len(), spec.n_tokens, spec.embedding_dim));
            t.axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(role_rows.par_iter())
                .enumerate()
                .for_each(|(r, (mut out, row))| {
                    let mut signal: Array1<f64> = meanings.row(row.meaning).to_owned() * coef.b;
                    if let Some(tk) = row.template {
                        signal.scaled_add(coef.a, &templates.row(tk));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(row_seed(spec.seed, role_index, layer, r));
                    for mut token in out.axis_iter_mut(Axis(0)) {
                        for (o, &sv) in token.iter_mut().zip(signal.iter()) {
                            let noise: f64 = rng.sample(StandardNormal);
                            *o = (sv + spec.sigma * noise) as f32;
                        }
                    }
                });
            tensors.insert((role, layer), t);
        }
    }
    let activations = ActivationSet::new(manifest, tensors, DType::F32, spec.layer_profile.len(), "synthlab")?;
    Ok(SyntheticCorpus {
        activations,
        directions: PlantedDirections {
            templates,
            meanings,
            sentence_template,
            sentence_meaning,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(sigma: f64, a: f64, b: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_templates: 4,
            twins_per_template: 5,
            n_languages: 2,
            embedding_dim: 48,
            n_tokens: 2,
            meaning_group: 1,
            sigma,
            layer_profile: vec![LayerCoefficients { a, b }; 2],
            seed: 11,
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let q = orthonormal_directions(150, 160, 4).unwrap();
        let gram = q.dot(&q.t());
        for ((i, j), v) in gram.indexed_iter() {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "{i},{j}: {v}");
        }
        assert!(orthonormal_directions(5, 4, 0).is_err());
    }

    #[test]
    fn dimension_too_small_is_refused() {
        let mut spec = small(0.0, 1.0, 1.0);
        spec.embedding_dim = 40;
        assert!(matches!(generate(&spec), Err(Error::Parameter(_))));
        spec.embedding_dim = 48;
        spec.twins_per_template = 4;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn noise_free_vectors_follow_the_plan() {
        let c = generate(&small(0.0, 2.0, 0.5)).unwrap();
        let m = c.manifest();
        assert_eq!(m.n_sentences(), 20);
        assert_eq!(m.languages(), &[Language::Es, Language::It]);
        let x = c.activations.tensor(DatasetRole::Original, 1).unwrap();
        let u = c.directions.template_direction(3).unwrap();
        let v = c.directions.meaning_direction(3).unwrap();
        let row: Array1<f64> = x.slice(s![3, 0, ..]).mapv(f64::from);
        assert!((row.dot(&u) - 2.0).abs() < 1e-5);
        assert!((row.dot(&v) - 0.5).abs() < 1e-5);
        assert!((oracle_component(row.view(), u).unwrap() - 4.0 / 4.25).abs() < 1e-5);
        let es = c.activations.tensor(DatasetRole::Translation(Language::Es), 0).unwrap();
        let tr: Array1<f64> = es.slice(s![3, 1, ..]).mapv(f64::from);
        assert!((tr.dot(&v) - 0.5).abs() < 1e-5 && tr.dot(&u).abs() < 1e-5);
    }

    #[test]
    fn paraphrases_switch_template() {
        let c = generate(&small(0.1, 1.0, 1.0)).unwrap();
        let n = 20;
        for i in 0..n as u32 {
            let own = c.directions.sentence_template[&i];
            let para = c.directions.sentence_template[&(2 * n + i)];
            assert_ne!(own, para);
            assert_eq!(c.directions.sentence_meaning[&(2 * n + i)], i as usize);
        }
    }

    #[test]
    fn meaning_groups() {
        let mut spec = small(0.0, 1.0, 1.0);
        spec.meaning_group = 2;
        assert_eq!(spec.n_directions(), 4 + 12 + 20);
        let c = generate(&spec).unwrap();
        let m = &c.directions.sentence_meaning;
        assert_eq!(m[&0], m[&1]);
        assert_ne!(m[&1], m[&2]);
        // the fifth original of a template is alone, the next template starts fresh
        assert_ne!(m[&4], m[&5]);
        assert_eq!(m[&5], m[&6]);
        assert_eq!(m[&(2 * 20)], m[&0]);
        assert!(m[&20] >= 12);
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&small(0.3, 1.0, 1.0)).unwrap();
        let b = generate(&small(0.3, 1.0, 1.0)).unwrap();
        assert_eq!(a.activations.tensors(), b.activations.tensors());
    }

    #[test]
    fn oracle_component_edges() {
        let u = ndarray::array![0.0, 1.0];
        assert_eq!(oracle_component(u.view(), u.view()).unwrap(), 1.0);
        assert_eq!(oracle_component(ndarray::array![3.0, 0.0].view(), u.view()).unwrap(), 0.0);
        assert!(oracle_component(ndarray::array![0.0, 0.0].view(), u.view()).is_err());
        assert!(oracle_component(u.view(), ndarray::array![0.0, 2.0].view()).is_err());
    }
}
