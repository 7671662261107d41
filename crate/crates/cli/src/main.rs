use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use synsem::centroids::AblationMode;
use synsem::pipeline::{self, render_svg, ExperimentConfig, ExperimentKind};
use synsem::synthlab::{generate, LayerCoefficients, SyntheticSpec};
use synsem::tensorstore::{read_dump, write_dump, ActivationSet, Aggregation, DType, Language};

#[derive(Parser)]
#[command(name = "synsem", version, about = "Syntax and semantics in sentence representations")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dump and optionally rewrite it.
    Ingest(IngestArgs),
    /// Generate a synthetic dump with planted syntactic and semantic directions.
    Synth(SynthArgs),
    /// Similarity curves: syntax_similarity, semantic_similarity, translations,
    /// language_sweep, shuffle_control.
    Similarity(ExperimentArgs),
    /// Ablation studies: cross_ablation_sem_on_syn, cross_ablation_syn_on_sem,
    /// subtraction_control.
    Ablate(ExperimentArgs),
    /// Norm decomposition into syntactic, semantic and residual parts.
    Decompose(ExperimentArgs),
    /// POS-template probe and paraphrase recall.
    Probe(ExperimentArgs),
    /// Render an experiment CSV as an SVG chart.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    dump: PathBuf,
    /// Write a copy of the dump here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Storage type of the copy (`f32` or `b16`).
    #[arg(long, default_value = "f32", requires = "output")]
    dtype: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 96)]
    templates: usize,
    #[arg(long, default_value_t = 10)]
    twins: usize,
    #[arg(long, default_value_t = 6)]
    languages: usize,
    #[arg(long, default_value_t = 1600)]
    dim: usize,
    #[arg(long, default_value_t = 6)]
    tokens: usize,
    #[arg(long, default_value_t = 2)]
    meaning_group: usize,
    #[arg(long, default_value_t = 0.13)]
    sigma: f64,
    /// Syntax strength per layer; a single value applies to every layer.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    a: Vec<f64>,
    /// Semantic strength per layer; a single value applies to every layer.
    #[arg(long, value_delimiter = ',', default_value = "0.8,1.0,1.5,1.0")]
    b: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    seed: u64,
    /// Store tensors as `b16` instead of `f32`.
    #[arg(long, default_value = "f32")]
    dtype: String,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    kind: Option<String>,
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// `concat` or `average`.
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    n_tokens: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// `projection` or `subtraction`.
    #[arg(long)]
    ablation: Option<String>,
    /// Translation language codes, e.g. `es,it,zh`.
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    subset_sizes: Option<Vec<usize>>,
    #[arg(long)]
    recall_k: Option<usize>,
    #[arg(long)]
    recall_aggregation: Option<String>,
    /// Inverse regularization strengths; `inf` disables the penalty.
    #[arg(long, value_delimiter = ',')]
    c_grid: Option<Vec<f64>>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed_tie: Option<u64>,
    #[arg(long)]
    seed_permutation: Option<u64>,
    #[arg(long)]
    seed_shuffle: Option<u64>,
    #[arg(long)]
    seed_split: Option<u64>,
    /// Only report what the run would need.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ReportArgs {
    csv: PathBuf,
    /// Defaults to the CSV path with an `.svg` extension.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Defaults to the CSV file stem.
    #[arg(long)]
    title: Option<String>,
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "b16" | "bf16" => Ok(DType::B16),
        other => bail!("unknown dtype `{other}` (expected f32 or b16)"),
    }
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let set = read_dump(&args.dump).with_context(|| format!("validating {}", args.dump.display()))?;
    let m = set.manifest();
    println!("dump: {}", args.dump.display());
    println!("model: {}", set.model());
    println!(
        "records: {}  originals: {}  layers: {}  tokens: {}  embedding: {}  dtype: {:?}",
        m.records().len(),
        m.n_sentences(),
        set.layer_count(),
        set.n_tokens(),
        set.embedding_dim(),
        set.dtype()
    );
    for role in m.dataset_roles() {
        let layers = set.layers_for(role);
        println!("  {:<16} {:>6} rows  {} layers", role.name(), m.role_len(role), layers.len());
        if layers.len() != set.layer_count() {
            log::warn!(
                "{} has {} of {} layers",
                role.name(),
                layers.len(),
                set.layer_count()
            );
        }
    }
    if let Some(out) = &args.output {
        let dtype = parse_dtype(&args.dtype)?;
        let copy = ActivationSet::new(
            m.clone(),
            set.tensors().clone(),
            dtype,
            set.layer_count(),
            set.model(),
        )?;
        write_dump(&copy, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn per_layer(values: &[f64], layers: usize, name: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; layers]),
        n if n == layers => Ok(values.to_vec()),
        n => bail!("--{name} has {n} values but there are {layers} layers"),
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let layers = args.a.len().max(args.b.len());
    let a = per_layer(&args.a, layers, "a")?;
    let b = per_layer(&args.b, layers, "b")?;
    if a.iter().chain(&b).chain([&args.sigma]).any(|v| !(*v >= 0.0)) {
        bail!("coefficients and sigma must be nonnegative");
    }
    let spec = SyntheticSpec {
        n_templates: args.templates,
        twins_per_template: args.twins,
        n_languages: args.languages,
        embedding_dim: args.dim,
        n_tokens: args.tokens,
        meaning_group: args.meaning_group,
        sigma: args.sigma,
        layer_profile: a.iter().zip(&b).map(|(&a, &b)| LayerCoefficients { a, b }).collect(),
        seed: args.seed,
    };
    let dtype = parse_dtype(&args.dtype)?;
    let corpus = generate(&spec)?;
    let set = corpus.activations;
    let set = if dtype == set.dtype() {
        set
    } else {
        ActivationSet::new(set.manifest().clone(), set.tensors().clone(), dtype, set.layer_count(), set.model())?
    };
    write_dump(&set, &args.output)?;
    println!(
        "wrote {} sentences, {} layers to {}",
        set.manifest().n_sentences(),
        set.layer_count(),
        args.output.display()
    );
    Ok(())
}

fn build_config(args: &ExperimentArgs, allowed: &[ExperimentKind]) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(d) = &args.dump {
                cfg.dump = d.clone();
            }
            if let Some(o) = &args.output {
                cfg.output = o.clone();
            }
            cfg
        }
        None => {
            let kind = match &args.kind {
                Some(k) => k.parse()?,
                None => allowed[0],
            };
            let dump = args.dump.clone().context("--dump is required without --config")?;
            let output = args.output.clone().context("--output is required without --config")?;
            ExperimentConfig::new(kind, dump, output)
        }
    };
    if !allowed.contains(&cfg.kind) {
        let names: Vec<&str> = allowed.iter().map(|k| k.as_str()).collect();
        bail!(
            "experiment `{}` does not belong to this subcommand (expected one of {})",
            cfg.kind,
            names.join(", ")
        );
    }
    if let Some(a) = &args.aggregation {
        cfg.aggregation = a.parse::<Aggregation>()?;
    }
    if let Some(n) = args.n_tokens {
        cfg.n_tokens = n;
    }
    if let Some(l) = &args.layers {
        cfg.layers = Some(l.clone());
    }
    if let Some(mode) = &args.ablation {
        cfg.ablation = match mode.as_str() {
            "projection" => AblationMode::Projection,
            "subtraction" => AblationMode::Subtraction,
            other => bail!("unknown ablation mode `{other}`"),
        };
    }
    if let Some(langs) = &args.languages {
        cfg.languages = Some(langs.iter().map(|l| l.parse::<Language>()).collect::<Result<_, _>>()?);
    }
    if let Some(s) = &args.subset_sizes {
        cfg.subset_sizes = Some(s.clone());
    }
    if let Some(k) = args.recall_k {
        cfg.recall_k = k;
    }
    if let Some(a) = &args.recall_aggregation {
        cfg.recall_aggregation = a.parse::<Aggregation>()?;
    }
    if let Some(g) = &args.c_grid {
        cfg.c_grid = g.clone();
    }
    if let Some(m) = args.max_iter {
        cfg.max_iter = m;
    }
    let seeds = &mut cfg.seeds;
    for (flag, slot) in [
        (args.seed_tie, &mut seeds.tie),
        (args.seed_permutation, &mut seeds.permutation),
        (args.seed_shuffle, &mut seeds.shuffle),
        (args.seed_split, &mut seeds.split),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    Ok(cfg)
}

fn experiment(args: &ExperimentArgs, allowed: &[ExperimentKind]) -> Result<()> {
    let cfg = build_config(args, allowed)?;
    if args.dry_run {
        let report = pipeline::validate(&cfg);
        print!("{report}");
        if !report.is_ok() {
            bail!("{} issue(s) found", report.issues.len());
        }
        return Ok(());
    }
    let artifacts = pipeline::run(&cfg)?;
    for p in [&artifacts.csv, &artifacts.svg, &artifacts.log] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let csv = fs::read_to_string(&args.csv).with_context(|| format!("reading {}", args.csv.display()))?;
    let title = match &args.title {
        Some(t) => t.clone(),
        None => stem(&args.csv),
    };
    let svg = render_svg(&csv, &title)?;
    let out = args.output.clone().unwrap_or_else(|| args.csv.with_extension("svg"));
    fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    use ExperimentKind::*;
    let groups: BTreeMap<&str, Vec<ExperimentKind>> = BTreeMap::from([
        (
            "similarity",
            vec![SyntaxSimilarity, SemanticSimilarity, Translations, LanguageSweep, ShuffleControl],
        ),
        ("ablate", vec![CrossAblationSemOnSyn, CrossAblationSynOnSem, SubtractionControl]),
        ("decompose", vec![Decomposition]),
        ("probe", vec![Probes]),
    ]);
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Similarity(a) => experiment(a, &groups["similarity"]),
        Command::Ablate(a) => experiment(a, &groups["ablate"]),
        Command::Decompose(a) => experiment(a, &groups["decompose"]),
        Command::Probe(a) => experiment(a, &groups["probe"]),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
