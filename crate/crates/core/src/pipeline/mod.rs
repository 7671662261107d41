//! Experiment runner: reads a dump, runs one experiment kind and writes
//! `<kind>.csv`, `<kind>.svg` and `<kind>.log` into the output directory.
//!
//! CSV schemas:
//!
//! - similarity kinds: `layer,score,std,condition`, where `condition` is
//!   `roleA~roleB|<aggregation><n>|ablation=<label>|control=<label>`
//! - `decomposition`: `layer,syntactic,semantic,residual`
//! - `probes`: `layer,condition,metric,value` with metrics `best_c`,
//!   `pos_accuracy` and `recall@<k>`

mod config;
mod experiments;
mod svg;

use std::fmt;
use std::fs;
use std::path::PathBuf;

pub use config::{ExperimentConfig, ExperimentKind, Seeds};
pub use experiments::PROBE_CSV_HEADER;
pub use svg::render_svg;

use crate::error::{Error, Result};
use crate::simindex::derived_subsample_seed;
use crate::tensorstore::{inspect_dump, read_dump, ActivationSet, Aggregation, DatasetRole, Language};

/// In-memory result of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub csv: String,
    pub log: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub log: PathBuf,
}

/// Runs `cfg` against an already loaded activation set. `cfg.dump` and
/// `cfg.output` are not touched.
pub fn run_on(set: &ActivationSet, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let issues = cfg.check();
    if !issues.is_empty() {
        return Err(Error::Parameter(issues.join("; ")));
    }
    let mut log = vec![
        format!("experiment {}", cfg.kind),
        format!(
            "seeds: {} (subsample seed {})",
            cfg.seeds,
            derived_subsample_seed(cfg.seeds.tie)
        ),
        "effective configuration:".to_string(),
        cfg.to_toml(),
    ];
    log::info!("running {} with seeds {}", cfg.kind, cfg.seeds);
    let mut runner = experiments::Runner::new(set, cfg)?;
    let csv = runner.run()?;
    log.append(&mut runner.log);
    for line in &log[4..] {
        log::info!("{line}");
    }
    let mut log = log.join("\n");
    log.push('\n');
    Ok(ExperimentOutput { csv, log })
}

fn write_all(out: &ExperimentOutput, cfg: &ExperimentConfig, paths: &Artifacts) -> Result<()> {
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let svg = render_svg(&out.csv, cfg.kind.as_str())?;
    for (path, text) in [(&paths.csv, &out.csv), (&paths.svg, &svg), (&paths.log, &out.log)] {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn artifact_paths(cfg: &ExperimentConfig) -> Artifacts {
    let stem = cfg.output.join(cfg.kind.as_str());
    Artifacts {
        csv: stem.with_extension("csv"),
        svg: stem.with_extension("svg"),
        log: stem.with_extension("log"),
    }
}

/// Loads the dump, runs the experiment and writes its artifacts. On failure
/// no artifact of this run is left behind.
pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let set = read_dump(&cfg.dump)?;
    let out = run_on(&set, cfg)?;
    let paths = artifact_paths(cfg);
    if let Err(e) = write_all(&out, cfg, &paths) {
        for p in [&paths.csv, &paths.svg, &paths.log] {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }
    Ok(paths)
}

/// Bytes for one `n x n` f64 distance matrix and one `n x dim` f64
/// representation matrix.
pub fn memory_estimate(n_sentences: usize, dim: usize) -> (u64, u64) {
    let n = n_sentences as u64;
    (n * n * 8, n * dim as u64 * 8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub kind: ExperimentKind,
    pub required_roles: Vec<String>,
    pub required_layers: Vec<usize>,
    pub n_sentences: usize,
    /// Width of an aggregated representation.
    pub dim: usize,
    pub distance_matrix_bytes: u64,
    pub representation_bytes: u64,
    /// Peak estimate: two distance matrices and two representations alive
    /// at once.
    pub peak_bytes: u64,
    pub seeds: Seeds,
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "experiment: {}", self.kind)?;
        writeln!(f, "required roles: {}", self.required_roles.join(", "))?;
        writeln!(f, "required layers: {:?}", self.required_layers)?;
        writeln!(f, "sentences: {}  representation width: {}", self.n_sentences, self.dim)?;
        writeln!(
            f,
            "memory: {} bytes per distance matrix, {} bytes per representation, ~{} bytes peak",
            self.distance_matrix_bytes, self.representation_bytes, self.peak_bytes
        )?;
        writeln!(f, "seeds: {}", self.seeds)?;
        if self.issues.is_empty() {
            writeln!(f, "issues: none")
        } else {
            writeln!(f, "issues:")?;
            self.issues.iter().try_for_each(|i| writeln!(f, "  - {i}"))
        }
    }
}

/// Dry run: reads only the dump's manifest and tensor headers and lists
/// what the experiment would need. Never fails; problems become issues.
pub fn validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut issues = cfg.check();
    let mut report = ValidationReport {
        kind: cfg.kind,
        required_roles: Vec::new(),
        required_layers: cfg.layers.clone().unwrap_or_default(),
        n_sentences: 0,
        dim: 0,
        distance_matrix_bytes: 0,
        representation_bytes: 0,
        peak_bytes: 0,
        seeds: cfg.seeds,
        issues: Vec::new(),
    };
    let summary = match inspect_dump(&cfg.dump) {
        Ok(s) => s,
        Err(e) => {
            let langs = cfg.languages.clone().unwrap_or_default();
            report.required_roles = cfg.kind.required_roles(&langs).iter().map(|r| r.name()).collect();
            issues.push(format!("cannot read dump: {e}"));
            report.issues = issues;
            return report;
        }
    };
    let languages: Vec<Language> = cfg
        .languages
        .clone()
        .unwrap_or_else(|| summary.manifest.languages().to_vec());
    if cfg.kind.uses_translations() && languages.is_empty() {
        issues.push("the dump has no translations".to_string());
    }
    let roles = cfg.kind.required_roles(&languages);
    report.required_roles = roles.iter().map(|r| r.name()).collect();
    let layers_of = |role: DatasetRole| -> Vec<usize> {
        summary
            .tensors
            .keys()
            .filter(|(r, _)| *r == role)
            .map(|&(_, l)| l)
            .collect()
    };
    for &role in &roles {
        if summary.manifest.role_len(role) == 0 {
            issues.push(format!("manifest has no sentences for role `{}`", role.name()));
        }
        if layers_of(role).is_empty() {
            issues.push(format!("dump has no tensors for role `{}`", role.name()));
        }
    }
    let layers = match &cfg.layers {
        Some(l) => l.clone(),
        None => (0..summary.meta.layer_count).collect(),
    };
    for &layer in &layers {
        let missing: Vec<String> = roles
            .iter()
            .filter(|&&r| !layers_of(r).contains(&layer))
            .map(|r| r.name())
            .collect();
        if !missing.is_empty() {
            issues.push(format!("layer {layer} is missing for {}", missing.join(", ")));
        }
    }
    if cfg.n_tokens > summary.meta.n_tokens {
        issues.push(format!(
            "n_tokens {} exceeds the {} tokens stored in the dump",
            cfg.n_tokens, summary.meta.n_tokens
        ));
    }
    let n = summary.manifest.n_sentences();
    let e = summary.meta.embedding_dim;
    let dim = match cfg.aggregation {
        Aggregation::Concat => cfg.n_tokens * e,
        Aggregation::Average => e,
    };
    let (dist, rep) = memory_estimate(n, dim);
    report.required_layers = layers;
    report.n_sentences = n;
    report.dim = dim;
    report.distance_matrix_bytes = dist;
    report.representation_bytes = rep;
    report.peak_bytes = 2 * dist + 2 * rep;
    report.issues = issues;
    report
}
