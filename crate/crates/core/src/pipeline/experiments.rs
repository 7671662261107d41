//! One function per experiment kind. Each returns the CSV text; notes for
//! the run log are appended to `Runner::log`.

use std::collections::BTreeMap;

use ndarray::Axis;

use super::config::{ExperimentConfig, ExperimentKind};
use crate::centroids::{
    ablate_matrix, build_semantic_centroids, build_syntax_centroids, cyclic_language_subsets, AblationMode,
    AblationSpec, CentroidKind, CentroidSet,
};
use crate::decompose::{centroid_alignment_report, norm_fractions, NormDecomposition};
use crate::error::{Error, Result};
use crate::probes::{
    encode_labels, eval_accuracy, probe_inputs, recall_at_k, sweep_c, train_pos_probe, train_validation_split,
    LbfgsOptions,
};
use crate::simindex::{
    curves_to_csv, derived_subsample_seed, euclidean_distances, non_identity_permutation, score_distances,
    score_with_error, Condition, CurvePoint, SimilarityCurve,
};
use crate::tensorstore::{
    aggregate, center_global, clip_and_normalize, unit_normalize, ActivationSet, Aggregation, DatasetRole,
    Language, RepresentationMatrix,
};

pub const PROBE_CSV_HEADER: &str = "layer,condition,metric,value";

pub(crate) struct Runner<'a> {
    set: &'a ActivationSet,
    cfg: &'a ExperimentConfig,
    originals: Vec<u32>,
    languages: Vec<Language>,
    layers: Vec<usize>,
    pub log: Vec<String>,
}

/// Accumulates curve points condition by condition, keeping first-seen order.
#[derive(Default)]
struct Curves(Vec<SimilarityCurve>);

impl Curves {
    fn push(&mut self, condition: Condition, point: CurvePoint) {
        match self.0.iter_mut().find(|c| c.condition == condition) {
            Some(c) => c.points.push(point),
            None => self.0.push(SimilarityCurve {
                condition,
                points: vec![point],
            }),
        }
    }

    fn csv(&self) -> String {
        curves_to_csv(&self.0)
    }
}

impl<'a> Runner<'a> {
    pub fn new(set: &'a ActivationSet, cfg: &'a ExperimentConfig) -> Result<Self> {
        let manifest = set.manifest();
        let languages = match &cfg.languages {
            Some(l) => l.clone(),
            None => manifest.languages().to_vec(),
        };
        if cfg.kind.uses_translations() && languages.is_empty() {
            return Err(Error::MissingRole(format!(
                "{} needs translations, but the dump has none",
                cfg.kind
            )));
        }
        let roles = cfg.kind.required_roles(&languages);
        for &role in &roles {
            if manifest.role_len(role) == 0 || set.layers_for(role).is_empty() {
                return Err(Error::MissingRole(format!(
                    "{} needs role `{}`, which the dump lacks",
                    cfg.kind,
                    role.name()
                )));
            }
        }
        let available = roles
            .iter()
            .map(|&r| set.layers_for(r))
            .reduce(|a, b| a.intersection(&b).copied().collect())
            .unwrap_or_default();
        let layers = match &cfg.layers {
            Some(l) => {
                let missing: Vec<usize> = l.iter().copied().filter(|x| !available.contains(x)).collect();
                if !missing.is_empty() {
                    return Err(Error::MissingLayers(missing));
                }
                l.clone()
            }
            None => available.into_iter().collect(),
        };
        if layers.is_empty() {
            return Err(Error::MissingLayers(vec![]));
        }
        Ok(Runner {
            set,
            cfg,
            originals: manifest.original_ids(),
            languages,
            layers,
            log: Vec::new(),
        })
    }

    pub fn run(&mut self) -> Result<String> {
        match self.cfg.kind {
            ExperimentKind::SyntaxSimilarity => self.syntax_similarity(),
            ExperimentKind::SemanticSimilarity => self.semantic_similarity(),
            ExperimentKind::CrossAblationSemOnSyn => self.cross_sem_on_syn(),
            ExperimentKind::CrossAblationSynOnSem => self.cross_syn_on_sem(),
            ExperimentKind::Translations => self.translations(),
            ExperimentKind::LanguageSweep => self.language_sweep(),
            ExperimentKind::SubtractionControl => self.subtraction_control(),
            ExperimentKind::ShuffleControl => self.shuffle_control(),
            ExperimentKind::Decomposition => self.decomposition(),
            ExperimentKind::Probes => self.probes(),
        }
    }

    /// Aggregated rows of `role`, ordered like the originals.
    fn rep_with(&self, role: DatasetRole, layer: usize, aggregation: Aggregation) -> Result<RepresentationMatrix> {
        aggregate(self.set, role, layer, aggregation, self.cfg.n_tokens)?.align_to(self.set.manifest(), &self.originals)
    }

    fn rep(&self, role: DatasetRole, layer: usize) -> Result<RepresentationMatrix> {
        self.rep_with(role, layer, self.cfg.aggregation)
    }

    fn semantic(&self, layer: usize, aggregation: Aggregation, subset: &[Language]) -> Result<CentroidSet> {
        let mut reps = BTreeMap::new();
        for &lang in subset {
            reps.insert(lang, self.rep_with(DatasetRole::Translation(lang), layer, aggregation)?);
        }
        build_semantic_centroids(self.set.manifest(), &reps, subset)
    }

    fn syntax(&self, source: &RepresentationMatrix, target: DatasetRole) -> Result<CentroidSet> {
        build_syntax_centroids(self.set.manifest(), source, target)
    }

    fn spec(&self, kind: CentroidKind, permuted: bool) -> AblationSpec {
        let base = if permuted {
            AblationSpec::permuted(kind, self.cfg.seeds.permutation)
        } else {
            AblationSpec::aligned(kind)
        };
        AblationSpec {
            mode: self.cfg.ablation,
            ..base
        }
    }

    fn condition(&self, a: DatasetRole, b: DatasetRole) -> Condition {
        Condition::new(a, b, self.cfg.aggregation, self.cfg.n_tokens)
    }

    fn score(&self, a: &RepresentationMatrix, b: &RepresentationMatrix) -> Result<CurvePoint> {
        let tie = self.cfg.seeds.tie;
        score_with_error(&clip_and_normalize(a)?, &clip_and_normalize(b)?, tie, derived_subsample_seed(tie))
    }

    /// Baseline, aligned and permuted-control curves for one role pair.
    /// `ablate_b` says whether the ablation also applies to the second role.
    fn three_conditions(
        &self,
        curves: &mut Curves,
        layer: usize,
        (ra, a, ca): (DatasetRole, &RepresentationMatrix, &CentroidSet),
        (rb, b, cb): (DatasetRole, &RepresentationMatrix, Option<&CentroidSet>),
    ) -> Result<()> {
        curves.push(self.condition(ra, rb), CurvePoint { layer, ..self.score(a, b)? });
        for permuted in [false, true] {
            let spec = self.spec(ca.kind, permuted);
            let a2 = ablate_matrix(a, ca, &spec)?;
            let b2 = match cb {
                Some(cb) => ablate_matrix(b, cb, &spec)?,
                None => b.clone(),
            };
            let point = self.score(&a2, &b2)?;
            curves.push(self.condition(ra, rb).ablation(spec.label()), CurvePoint { layer, ..point });
        }
        Ok(())
    }

    fn syntax_similarity(&mut self) -> Result<String> {
        let mut curves = Curves::default();
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let y = self.rep(DatasetRole::Twin, layer)?;
            let sx = self.syntax(&y, DatasetRole::Original)?;
            let sy = self.syntax(&x, DatasetRole::Twin)?;
            self.three_conditions(
                &mut curves,
                layer,
                (DatasetRole::Original, &x, &sx),
                (DatasetRole::Twin, &y, Some(&sy)),
            )?;
        }
        Ok(curves.csv())
    }

    fn semantic_similarity(&mut self) -> Result<String> {
        let mut curves = Curves::default();
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let p = self.rep(DatasetRole::Paraphrase, layer)?;
            let t = self.semantic(layer, self.cfg.aggregation, &self.languages)?;
            self.three_conditions(
                &mut curves,
                layer,
                (DatasetRole::Original, &x, &t),
                (DatasetRole::Paraphrase, &p, Some(&t)),
            )?;
        }
        Ok(curves.csv())
    }

    fn cross_sem_on_syn(&mut self) -> Result<String> {
        let mut curves = Curves::default();
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let y = self.rep(DatasetRole::Twin, layer)?;
            let t = self.semantic(layer, self.cfg.aggregation, &self.languages)?;
            self.three_conditions(
                &mut curves,
                layer,
                (DatasetRole::Original, &x, &t),
                (DatasetRole::Twin, &y, Some(&t)),
            )?;
        }
        Ok(curves.csv())
    }

    fn cross_syn_on_sem(&mut self) -> Result<String> {
        let mut curves = Curves::default();
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let p = self.rep(DatasetRole::Paraphrase, layer)?;
            let y = self.rep(DatasetRole::Twin, layer)?;
            let sx = self.syntax(&y, DatasetRole::Original)?;
            // paraphrases carry no template, so only the originals are ablated
            self.three_conditions(
                &mut curves,
                layer,
                (DatasetRole::Original, &x, &sx),
                (DatasetRole::Paraphrase, &p, None),
            )?;
        }
        Ok(curves.csv())
    }

    fn translations(&mut self) -> Result<String> {
        let mut curves = Curves::default();
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let p = self.rep(DatasetRole::Paraphrase, layer)?;
            curves.push(
                self.condition(DatasetRole::Original, DatasetRole::Paraphrase),
                CurvePoint { layer, ..self.score(&x, &p)? },
            );
            for &lang in &self.languages {
                let role = DatasetRole::Translation(lang);
                let t = self.rep(role, layer)?;
                curves.push(self.condition(DatasetRole::Original, role), CurvePoint { layer, ..self.score(&x, &t)? });
            }
        }
        Ok(curves.csv())
    }

    fn language_sweep(&mut self) -> Result<String> {
        let sizes = self
            .cfg
            .subset_sizes
            .clone()
            .unwrap_or_else(|| (1..=self.languages.len()).collect());
        let mut curves = Curves::default();
        let spec = self.spec(CentroidKind::Semantic, false);
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let p = self.rep(DatasetRole::Paraphrase, layer)?;
            let base = self.condition(DatasetRole::Original, DatasetRole::Paraphrase);
            curves.push(base.clone(), CurvePoint { layer, ..self.score(&x, &p)? });
            for &size in &sizes {
                let subsets = cyclic_language_subsets(&self.languages, size)?;
                let mut points = Vec::with_capacity(subsets.len());
                for subset in &subsets {
                    let t = self.semantic(layer, self.cfg.aggregation, subset)?;
                    points.push(self.score(&ablate_matrix(&x, &t, &spec)?, &ablate_matrix(&p, &t, &spec)?)?);
                }
                let n = points.len() as f64;
                let point = CurvePoint {
                    layer,
                    score: points.iter().map(|p| p.score).sum::<f64>() / n,
                    std: points.iter().map(|p| p.std).sum::<f64>() / n,
                };
                curves.push(base.clone().ablation(format!("{}[languages={size}]", spec.label())), point);
            }
        }
        Ok(curves.csv())
    }

    fn subtraction_control(&mut self) -> Result<String> {
        let subset: Vec<Language> = match &self.cfg.languages {
            Some(l) => l.clone(),
            None => self.languages[..1].to_vec(),
        };
        self.log.push(format!(
            "subtraction control centroid languages: {}",
            subset.iter().map(|l| l.code()).collect::<Vec<_>>().join(",")
        ));
        let mut curves = Curves::default();
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let p = self.rep(DatasetRole::Paraphrase, layer)?;
            let t = self.semantic(layer, self.cfg.aggregation, &subset)?;
            let base = self.condition(DatasetRole::Original, DatasetRole::Paraphrase);
            curves.push(base.clone(), CurvePoint { layer, ..self.score(&x, &p)? });
            for mode in [AblationMode::Projection, AblationMode::Subtraction] {
                let spec = AblationSpec {
                    mode,
                    ..AblationSpec::aligned(CentroidKind::Semantic)
                };
                let point = self.score(&ablate_matrix(&x, &t, &spec)?, &ablate_matrix(&p, &t, &spec)?)?;
                curves.push(base.clone().ablation(spec.label()), CurvePoint { layer, ..point });
            }
        }
        Ok(curves.csv())
    }

    fn shuffled_score(&self, a: &RepresentationMatrix, b: &RepresentationMatrix) -> Result<CurvePoint> {
        let tie = self.cfg.seeds.tie;
        let a = clip_and_normalize(a)?;
        let b = clip_and_normalize(b)?;
        let perm = non_identity_permutation(b.nrows(), self.cfg.seeds.shuffle);
        let shuffled = b.data.select(Axis(0), &perm);
        score_distances(
            &euclidean_distances(a.data.view()),
            &euclidean_distances(shuffled.view()),
            tie,
            derived_subsample_seed(tie),
        )
    }

    fn shuffle_control(&mut self) -> Result<String> {
        let mut curves = Curves::default();
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let y = self.rep(DatasetRole::Twin, layer)?;
            let p = self.rep(DatasetRole::Paraphrase, layer)?;
            let sx = self.syntax(&y, DatasetRole::Original)?;
            let sy = self.syntax(&x, DatasetRole::Twin)?;
            let t = self.semantic(layer, self.cfg.aggregation, &self.languages)?;
            let syn = self.spec(CentroidKind::Syntactic, false);
            let sem = self.spec(CentroidKind::Semantic, false);

            let twin = self.condition(DatasetRole::Original, DatasetRole::Twin).control("shuffled");
            let para = self.condition(DatasetRole::Original, DatasetRole::Paraphrase).control("shuffled");
            let cases = [
                (twin.clone(), x.clone(), y.clone()),
                (twin.ablation(syn.label()), ablate_matrix(&x, &sx, &syn)?, ablate_matrix(&y, &sy, &syn)?),
                (para.clone(), x.clone(), p.clone()),
                (para.ablation(sem.label()), ablate_matrix(&x, &t, &sem)?, ablate_matrix(&p, &t, &sem)?),
            ];
            for (condition, a, b) in cases {
                let point = self.shuffled_score(&a, &b)?;
                curves.push(condition, CurvePoint { layer, ..point });
            }
        }
        Ok(curves.csv())
    }

    fn decomposition(&mut self) -> Result<String> {
        let mut out = NormDecomposition {
            aggregation: self.cfg.aggregation,
            n_tokens: self.cfg.n_tokens,
            layers: Vec::new(),
        };
        for &layer in &self.layers {
            let x = self.rep(DatasetRole::Original, layer)?;
            let y = self.rep(DatasetRole::Twin, layer)?;
            let s = self.syntax(&y, DatasetRole::Original)?;
            let t = self.semantic(layer, self.cfg.aggregation, &self.languages)?;
            let d = norm_fractions(&x, &s, &t)?;
            let (_, g) = center_global(&x)?;
            let align = centroid_alignment_report(&s, &t, Some(&g))?;
            self.log.push(format!(
                "layer {layer}: cos(S, T) after centering = {:.4} +/- {:.4} over {} pairs; {} sentences excluded",
                align.mean,
                align.std,
                align.count,
                d.excluded.len()
            ));
            if !d.excluded.is_empty() {
                self.log.push(format!("layer {layer}: excluded ids {:?}", d.excluded));
            }
            out.layers.push(d);
        }
        Ok(out.to_csv())
    }

    fn probes(&mut self) -> Result<String> {
        let manifest = self.set.manifest();
        let twin_ids: Vec<u32> = self.rep(DatasetRole::Twin, self.layers[0])?.ids;
        let template = |id: &u32| manifest.template_of(*id).unwrap_or("");
        let train_names: Vec<&str> = twin_ids.iter().map(template).collect();
        let test_names: Vec<&str> = self.originals.iter().map(template).collect();
        let (classes, train_labels, test_labels) = encode_labels(&train_names, &test_names);
        self.log.push(format!("probe classes: {}", classes.len()));
        let opts = LbfgsOptions {
            max_iter: self.cfg.max_iter,
            ..Default::default()
        };
        let (train_idx, val_idx) = train_validation_split(twin_ids.len(), self.cfg.seeds.split);
        let pick = |idx: &[usize]| idx.iter().map(|&i| train_labels[i]).collect::<Vec<_>>();
        let (fit_labels, val_labels) = (pick(&train_idx), pick(&val_idx));

        let conditions = [
            None,
            Some(self.spec(CentroidKind::Syntactic, false)),
            Some(self.spec(CentroidKind::Syntactic, true)),
            Some(self.spec(CentroidKind::Semantic, false)),
            Some(self.spec(CentroidKind::Semantic, true)),
        ];
        let label = |c: &Option<AblationSpec>| c.map_or("none".to_string(), |s| s.label());
        let mut rows = vec![PROBE_CSV_HEADER.to_string()];
        for &layer in &self.layers {
            // POS-template classification: train on twins, test on originals
            let twins = self.rep(DatasetRole::Twin, layer)?;
            let train = probe_inputs(&twins)?;
            let c = if self.cfg.c_grid.len() == 1 {
                self.cfg.c_grid[0]
            } else {
                let sweep = sweep_c(
                    &train.select_rows(&train_idx),
                    &fit_labels,
                    &train.select_rows(&val_idx),
                    &val_labels,
                    &self.cfg.c_grid,
                    &opts,
                )?;
                sweep.best_c
            };
            let model = train_pos_probe(&train, &train_labels, c, &opts)?;
            self.log.push(format!(
                "layer {layer}: C={c} iterations={} grad_norm={:.3e}",
                model.stats.iterations, model.stats.grad_norm
            ));
            rows.push(format!("{layer},none,best_c,{c}"));
            let x = self.rep(DatasetRole::Original, layer)?;
            let (xc, g) = center_global(&x)?;
            let s = self.syntax(&twins, DatasetRole::Original)?.shifted(&g);
            let t = self.semantic(layer, self.cfg.aggregation, &self.languages)?.shifted(&g);
            for cond in &conditions {
                let test = match cond {
                    None => xc.clone(),
                    Some(spec) => ablate_matrix(&xc, if spec.kind == CentroidKind::Syntactic { &s } else { &t }, spec)?,
                };
                let acc = eval_accuracy(&model, &unit_normalize(&test)?, &test_labels)?;
                rows.push(format!("{layer},{},pos_accuracy,{acc}", label(cond)));
            }

            // paraphrase recall: originals against paraphrases, each centered by its own mean
            let agg = self.cfg.recall_aggregation;
            let x = self.rep_with(DatasetRole::Original, layer, agg)?;
            let (xc, g) = center_global(&x)?;
            let (pc, _) = center_global(&self.rep_with(DatasetRole::Paraphrase, layer, agg)?)?;
            let s = self.syntax(&self.rep_with(DatasetRole::Twin, layer, agg)?, DatasetRole::Original)?.shifted(&g);
            let t = self.semantic(layer, agg, &self.languages)?.shifted(&g);
            for cond in &conditions {
                let query = match cond {
                    None => xc.clone(),
                    Some(spec) => ablate_matrix(&xc, if spec.kind == CentroidKind::Syntactic { &s } else { &t }, spec)?,
                };
                let r = recall_at_k(&query, &pc, self.cfg.recall_k, self.cfg.seeds.tie)?;
                rows.push(format!("{layer},{},recall@{},{r}", label(cond), self.cfg.recall_k));
            }
        }
        let mut csv = rows.join("\n");
        csv.push('\n');
        Ok(csv)
    }
}
