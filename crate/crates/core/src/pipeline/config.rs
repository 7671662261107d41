//! Experiment configuration, read from a small TOML file.
//!
//! ```toml
//! kind = "syntax_similarity"
//! dump = "dumps/synth"
//! output = "out"
//! aggregation = "concat"      # or "average"
//! n_tokens = 6
//! layers = [0, 1, 2]          # default: every layer in the dump
//! ablation = "projection"     # or "subtraction"
//! languages = ["es", "it"]    # default: every translation language
//!
//! [seeds]
//! tie = 24301
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::centroids::AblationMode;
use crate::error::{Error, Result};
use crate::probes::default_c_grid;
use crate::tensorstore::{Aggregation, DatasetRole, Language};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentKind {
    SyntaxSimilarity,
    SemanticSimilarity,
    CrossAblationSemOnSyn,
    CrossAblationSynOnSem,
    Translations,
    LanguageSweep,
    SubtractionControl,
    ShuffleControl,
    Decomposition,
    Probes,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::SyntaxSimilarity,
        ExperimentKind::SemanticSimilarity,
        ExperimentKind::CrossAblationSemOnSyn,
        ExperimentKind::CrossAblationSynOnSem,
        ExperimentKind::Translations,
        ExperimentKind::LanguageSweep,
        ExperimentKind::SubtractionControl,
        ExperimentKind::ShuffleControl,
        ExperimentKind::Decomposition,
        ExperimentKind::Probes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::SyntaxSimilarity => "syntax_similarity",
            ExperimentKind::SemanticSimilarity => "semantic_similarity",
            ExperimentKind::CrossAblationSemOnSyn => "cross_ablation_sem_on_syn",
            ExperimentKind::CrossAblationSynOnSem => "cross_ablation_syn_on_sem",
            ExperimentKind::Translations => "translations",
            ExperimentKind::LanguageSweep => "language_sweep",
            ExperimentKind::SubtractionControl => "subtraction_control",
            ExperimentKind::ShuffleControl => "shuffle_control",
            ExperimentKind::Decomposition => "decomposition",
            ExperimentKind::Probes => "probes",
        }
    }

    /// Aggregation and token count used when the config does not say.
    pub fn default_aggregation(self) -> (Aggregation, usize) {
        match self {
            ExperimentKind::SyntaxSimilarity => (Aggregation::Concat, 6),
            ExperimentKind::CrossAblationSemOnSyn | ExperimentKind::Probes => (Aggregation::Concat, 3),
            _ => (Aggregation::Average, 3),
        }
    }

    /// Whether the experiment needs the twins, the paraphrases and the
    /// translations (beyond the originals, which every kind needs).
    fn needs(self) -> (bool, bool, bool) {
        match self {
            ExperimentKind::SyntaxSimilarity => (true, false, false),
            ExperimentKind::SemanticSimilarity => (false, true, true),
            ExperimentKind::CrossAblationSemOnSyn => (true, false, true),
            ExperimentKind::CrossAblationSynOnSem => (true, true, false),
            ExperimentKind::Translations => (false, true, true),
            ExperimentKind::LanguageSweep => (false, true, true),
            ExperimentKind::SubtractionControl => (false, true, true),
            ExperimentKind::ShuffleControl => (true, true, true),
            ExperimentKind::Decomposition => (true, false, true),
            ExperimentKind::Probes => (true, true, true),
        }
    }

    pub fn required_roles(self, languages: &[Language]) -> Vec<DatasetRole> {
        let (twin, paraphrase, translations) = self.needs();
        let mut roles = vec![DatasetRole::Original];
        if twin {
            roles.push(DatasetRole::Twin);
        }
        if paraphrase {
            roles.push(DatasetRole::Paraphrase);
        }
        if translations {
            roles.extend(languages.iter().map(|&l| DatasetRole::Translation(l)));
        }
        roles
    }

    pub fn uses_translations(self) -> bool {
        self.needs().2
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Parameter(format!("unknown experiment kind `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Rank tie-breaking; the subsample seed is derived from it.
    pub tie: u64,
    /// Permuted-centroid controls.
    pub permutation: u64,
    /// Batch-shuffle control.
    pub shuffle: u64,
    /// Probe train/validation split.
    pub split: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            tie: 24301,
            permutation: 7,
            shuffle: 11,
            split: 13,
        }
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tie={} permutation={} shuffle={} split={}",
            self.tie, self.permutation, self.shuffle, self.split
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dump: PathBuf,
    pub output: PathBuf,
    pub aggregation: Aggregation,
    pub n_tokens: usize,
    /// `None` means every layer present for the required roles.
    pub layers: Option<Vec<usize>>,
    pub ablation: AblationMode,
    /// Translation languages for semantic centroids; `None` means all.
    pub languages: Option<Vec<Language>>,
    /// Language-sweep subset sizes; `None` means `1..=languages`.
    pub subset_sizes: Option<Vec<usize>>,
    pub recall_k: usize,
    pub recall_aggregation: Aggregation,
    pub c_grid: Vec<f64>,
    pub max_iter: usize,
    pub seeds: Seeds,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, dump: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        let (aggregation, n_tokens) = kind.default_aggregation();
        ExperimentConfig {
            kind,
            dump: dump.into(),
            output: output.into(),
            aggregation,
            n_tokens,
            layers: None,
            ablation: AblationMode::Projection,
            languages: None,
            subset_sizes: None,
            recall_k: 3,
            recall_aggregation: Aggregation::Average,
            c_grid: default_c_grid(),
            max_iter: 1000,
            seeds: Seeds::default(),
        }
    }

    /// Field checks that do not need the dump.
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.n_tokens == 0 {
            issues.push("n_tokens must be at least 1".to_string());
        }
        if self.recall_k == 0 {
            issues.push("recall_k must be at least 1".to_string());
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0)) {
            issues.push("c_grid must be a nonempty list of positive values".to_string());
        }
        if let Some(langs) = &self.languages {
            if langs.is_empty() {
                issues.push("languages must not be empty".to_string());
            }
            if langs.contains(&Language::En) {
                issues.push("`en` is the source language, not a translation".to_string());
            }
        }
        if self.kind == ExperimentKind::LanguageSweep {
            match &self.languages {
                None => issues.push("language_sweep requires an explicit `languages` list".to_string()),
                Some(langs) => {
                    if let Some(bad) = self
                        .subset_sizes
                        .iter()
                        .flatten()
                        .find(|&&s| s == 0 || s > langs.len())
                    {
                        issues.push(format!("subset size {bad} is outside 1..={}", langs.len()));
                    }
                }
            }
        }
        issues
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        let kind: ExperimentKind = raw.kind.parse()?;
        let mut cfg = ExperimentConfig::new(kind, raw.dump, raw.output);
        if let Some(a) = raw.aggregation {
            cfg.aggregation = a.parse()?;
        }
        if let Some(n) = raw.n_tokens {
            cfg.n_tokens = n;
        }
        cfg.layers = raw.layers;
        if let Some(mode) = raw.ablation {
            cfg.ablation = match mode.as_str() {
                "projection" => AblationMode::Projection,
                "subtraction" => AblationMode::Subtraction,
                other => return Err(Error::Parameter(format!("unknown ablation mode `{other}`"))),
            };
        }
        if let Some(langs) = raw.languages {
            cfg.languages = Some(langs.iter().map(|l| l.parse()).collect::<Result<_>>()?);
        }
        cfg.subset_sizes = raw.subset_sizes;
        if let Some(k) = raw.recall_k {
            cfg.recall_k = k;
        }
        if let Some(a) = raw.recall_aggregation {
            cfg.recall_aggregation = a.parse()?;
        }
        if let Some(grid) = raw.c_grid {
            cfg.c_grid = grid;
        }
        if let Some(m) = raw.max_iter {
            cfg.max_iter = m;
        }
        cfg.seeds = raw.seeds;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml_str(&text)
    }

    /// The effective configuration, with every default spelled out.
    pub fn to_toml(&self) -> String {
        fn list<T: fmt::Display>(v: &[T], quote: bool) -> String {
            let items: Vec<String> = v
                .iter()
                .map(|x| if quote { format!("\"{x}\"") } else { x.to_string() })
                .collect();
            format!("[{}]", items.join(", "))
        }
        let grid: Vec<String> = self
            .c_grid
            .iter()
            .map(|c| if c.is_infinite() { "inf".to_string() } else { format!("{c:?}") })
            .collect();
        let mut out = format!(
            "kind = \"{}\"\ndump = {:?}\noutput = {:?}\naggregation = \"{}\"\nn_tokens = {}\n",
            self.kind,
            self.dump.display().to_string(),
            self.output.display().to_string(),
            self.aggregation,
            self.n_tokens
        );
        if let Some(layers) = &self.layers {
            out.push_str(&format!("layers = {}\n", list(layers, false)));
        }
        out.push_str(&format!(
            "ablation = \"{}\"\n",
            match self.ablation {
                AblationMode::Projection => "projection",
                AblationMode::Subtraction => "subtraction",
            }
        ));
        if let Some(langs) = &self.languages {
            out.push_str(&format!("languages = {}\n", list(langs, true)));
        }
        if let Some(sizes) = &self.subset_sizes {
            out.push_str(&format!("subset_sizes = {}\n", list(sizes, false)));
        }
        out.push_str(&format!(
            "recall_k = {}\nrecall_aggregation = \"{}\"\nc_grid = [{}]\nmax_iter = {}\n\n[seeds]\ntie = {}\npermutation = {}\nshuffle = {}\nsplit = {}\n",
            self.recall_k,
            self.recall_aggregation,
            grid.join(", "),
            self.max_iter,
            self.seeds.tie,
            self.seeds.permutation,
            self.seeds.shuffle,
            self.seeds.split
        ));
        out
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: String,
    dump: PathBuf,
    output: PathBuf,
    aggregation: Option<String>,
    n_tokens: Option<usize>,
    layers: Option<Vec<usize>>,
    ablation: Option<String>,
    languages: Option<Vec<String>>,
    subset_sizes: Option<Vec<usize>>,
    recall_k: Option<usize>,
    recall_aggregation: Option<String>,
    c_grid: Option<Vec<f64>>,
    max_iter: Option<usize>,
    #[serde(default)]
    seeds: Seeds,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_kind_defaults() {
        let cfg = ExperimentConfig::from_toml_str("kind = \"syntax_similarity\"\ndump = \"d\"\noutput = \"o\"\n").unwrap();
        assert_eq!(cfg.aggregation, Aggregation::Concat);
        assert_eq!(cfg.n_tokens, 6);
        assert_eq!(cfg.seeds, Seeds::default());
        assert!(cfg.check().is_empty());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::LanguageSweep, "dump", "out");
        cfg.languages = Some(vec![Language::Es, Language::Zh]);
        cfg.subset_sizes = Some(vec![1, 2]);
        cfg.layers = Some(vec![0, 3]);
        cfg.seeds.tie = 99;
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn language_sweep_needs_languages() {
        let cfg = ExperimentConfig::new(ExperimentKind::LanguageSweep, "d", "o");
        assert_eq!(cfg.check().len(), 1);
    }

    #[test]
    fn bad_values_are_reported() {
        assert!(ExperimentConfig::from_toml_str("kind = \"nope\"\ndump = \"d\"\noutput = \"o\"").is_err());
        assert!(ExperimentConfig::from_toml_str("kind = \"probes\"\ndump = \"d\"\noutput = \"o\"\nbogus = 1").is_err());
        let mut cfg = ExperimentConfig::new(ExperimentKind::Probes, "d", "o");
        cfg.c_grid = vec![];
        cfg.n_tokens = 0;
        assert_eq!(cfg.check().len(), 2);
    }

    #[test]
    fn every_kind_parses() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
        }
    }
}
