use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use kqgcot::chain::{ingest_scaffold, ingest_scaffold_lenient, scaffold, ScaffoldDoc};
use kqgcot::embed::{EmbeddingProvider, HashEmbedder, HttpEmbedder, HttpEmbedderConfig, DEFAULT_DIM};
use kqgcot::harness::{
    diag_similarity, format_diag_table, ingest, persist, read_manifest, run_experiment, to_jsonl, DatasetRecord,
    DiagStrategy, RunConfig, RunInputs, RunReport,
};
use kqgcot::llm::{mock_provider, CompletionProvider, HttpCompletionConfig, HttpCompletionProvider, MockScript};
use kqgcot::logic_form::{load_entity_names, EntityNames};
use kqgcot::metrics::evaluate;
use kqgcot::prompting::{Ordering, PromptMode};
use kqgcot::select::{build_pool, select, PoolEntry, SelectionStrategy};

#[derive(Parser)]
#[command(name = "kqgcot", version, about = "Few-shot question generation from knowledge-base logical forms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select diverse demonstrations from a pool; prints JSONL {id, skeleton, logical_form}.
    Select(Common),
    /// Write a rationale scaffold for the selected demonstrations, or check a filled one.
    Scaffold {
        #[command(flatten)]
        common: Common,
        /// Validate a filled scaffold instead of writing one.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Build prompts, query the provider, score and persist a run.
    Run(Common),
    /// Score a finished run manifest or a JSONL file of {id, hypothesis, reference}.
    Eval {
        #[arg(long, conflicts_with = "pairs")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Directory for report.json and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average pairwise similarity of selected forms per strategy.
    DiagSimilarity {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: random, kqg, kqg_no_skeleton.
        #[arg(long, value_delimiter = ',', default_value = "random,kqg")]
        strategies: Vec<DiagStrategy>,
        /// Number of seeds, counted up from --seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProviderKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Unlabeled pool (JSONL).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Test records (JSONL).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Filled scaffold (JSON).
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Entity surface names (JSON object or TSV).
    #[arg(long)]
    names: Option<PathBuf>,
    /// Mock completions: JSON map prompt-hash → completion, or a list.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mode: Option<PromptMode>,
    #[arg(long)]
    ordering: Option<Ordering>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    selection: Option<SelectionStrategy>,
    #[arg(long, value_enum)]
    skeleton: Option<OnOff>,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long, value_enum)]
    embedder: Option<EmbedderKind>,
    /// Output directory for `run`, output file for `select` and `scaffold`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    pool: Option<PathBuf>,
    test: Option<PathBuf>,
    demos: Option<PathBuf>,
    names: Option<PathBuf>,
    script: Option<PathBuf>,
    out: Option<PathBuf>,
    provider: Option<ProviderKind>,
    embedder: Option<EmbedderKind>,
    embed_dim: Option<usize>,
    embed_seed: Option<u64>,
    http: Option<HttpCompletionConfig>,
    http_embedder: Option<HttpEmbedderConfig>,
    #[serde(flatten)]
    run: RunConfig,
}

/// Flags merged over the config file over defaults.
struct Settings {
    pool: Option<PathBuf>,
    test: Option<PathBuf>,
    demos: Option<PathBuf>,
    names: Option<PathBuf>,
    script: Option<PathBuf>,
    out: Option<PathBuf>,
    provider: ProviderKind,
    embedder: EmbedderKind,
    embed_dim: usize,
    embed_seed: u64,
    http: HttpCompletionConfig,
    http_embedder: HttpEmbedderConfig,
    run: RunConfig,
}

impl Settings {
    fn resolve(flags: &Common) -> Result<Self> {
        let file: FileConfig = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let mut run = file.run;
        if let Some(k) = flags.k {
            run.k = k;
        }
        if let Some(mode) = flags.mode {
            run.mode = mode;
        }
        if let Some(ordering) = flags.ordering {
            run.ordering = ordering;
        }
        if let Some(seed) = flags.seed {
            run.seed = seed;
        }
        if let Some(selection) = flags.selection {
            run.selection = selection;
        }
        if let Some(skeleton) = flags.skeleton {
            run.skeleton = skeleton == OnOff::On;
        }
        Ok(Self {
            pool: flags.pool.clone().or(file.pool),
            test: flags.test.clone().or(file.test),
            demos: flags.demos.clone().or(file.demos),
            names: flags.names.clone().or(file.names),
            script: flags.script.clone().or(file.script),
            out: flags.out.clone().or(file.out),
            provider: flags.provider.or(file.provider).unwrap_or(ProviderKind::Mock),
            embedder: flags.embedder.or(file.embedder).unwrap_or(EmbedderKind::Hash),
            embed_dim: file.embed_dim.unwrap_or(DEFAULT_DIM),
            embed_seed: file.embed_seed.unwrap_or(0),
            http: file.http.unwrap_or_default(),
            http_embedder: file.http_embedder.unwrap_or_default(),
            run,
        })
    }

    fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.embedder {
            EmbedderKind::Hash => Box::new(HashEmbedder::new(self.embed_dim, self.embed_seed)?),
            EmbedderKind::Http => Box::new(HttpEmbedder::new(self.http_embedder.clone())),
        })
    }

    fn provider(&self) -> Result<Box<dyn CompletionProvider>> {
        Ok(match self.provider {
            ProviderKind::Mock => {
                let path = self.script.as_ref().context("--provider mock needs --script")?;
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let script: MockScript =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                Box::new(mock_provider(script)?)
            }
            ProviderKind::Http => {
                if std::env::var(&self.http.api_key_env).is_err() {
                    tracing::warn!(var = %self.http.api_key_env, "API key variable is not set");
                }
                Box::new(HttpCompletionProvider::new(self.http.clone()))
            }
        })
    }

    fn names(&self) -> Result<EntityNames> {
        match &self.names {
            Some(path) => load_entity_names(path).with_context(|| format!("reading {}", path.display())),
            None => Ok(EntityNames::new()),
        }
    }

    fn pool_records(&self) -> Result<Vec<DatasetRecord>> {
        let path = self.pool.as_ref().context("--pool is required")?;
        ingest(path).with_context(|| format!("ingesting {}", path.display()))
    }

    fn pool_entries(&self, records: &[DatasetRecord]) -> Result<Vec<PoolEntry>> {
        let forms: Vec<_> = records.iter().map(|r| (r.id.clone(), r.form())).collect();
        Ok(build_pool(&forms, self.embedder()?.as_ref())?)
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn merged_names(records: &[DatasetRecord], extra: EntityNames) -> EntityNames {
    let mut names: EntityNames = records.iter().filter_map(|r| r.entity_names.clone()).flatten().collect();
    names.extend(extra);
    names
}

fn cmd_select(flags: &Common) -> Result<()> {
    let settings = Settings::resolve(flags)?;
    let records = settings.pool_records()?;
    let pool = settings.pool_entries(&records)?;
    #[derive(Serialize)]
    struct Selected<'a> {
        id: &'a str,
        skeleton: &'a str,
        logical_form: String,
    }
    let chosen = select(&pool, &settings.run.selection_config())?;
    let rows: Vec<Selected> = chosen
        .iter()
        .map(|e| Selected { id: &e.id, skeleton: &e.skeleton, logical_form: kqgcot::serialize(&e.logical_form) })
        .collect();
    write_or_print(settings.out.as_deref(), &to_jsonl(&rows))
}

fn cmd_scaffold(flags: &Common, check: Option<&Path>) -> Result<()> {
    if let Some(path) = check {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc: ScaffoldDoc = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let demos = ingest_scaffold(&doc)?;
        println!("{}: {} complete demonstrations", path.display(), demos.len());
        return Ok(());
    }
    let settings = Settings::resolve(flags)?;
    let records = settings.pool_records()?;
    let pool = settings.pool_entries(&records)?;
    let chosen = select(&pool, &settings.run.selection_config())?;
    let names = merged_names(&records, settings.names()?);
    let result = scaffold(&chosen, &names);
    for (id, missing) in &result.missing_names {
        tracing::warn!(%id, ?missing, "no surface name; machine id kept");
    }
    write_or_print(settings.out.as_deref(), &(serde_json::to_string_pretty(&result.doc)? + "\n"))
}

fn cmd_run(flags: &Common) -> Result<()> {
    let settings = Settings::resolve(flags)?;
    let test_path = settings.test.as_ref().context("--test is required")?;
    let test = ingest(test_path).with_context(|| format!("ingesting {}", test_path.display()))?;
    let pool = match &settings.pool {
        Some(_) => Some(settings.pool_records()?),
        None => None,
    };
    let demos = match &settings.demos {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let doc: ScaffoldDoc = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            match settings.run.mode {
                PromptMode::Cot => ingest_scaffold(&doc)?,
                PromptMode::Standard => ingest_scaffold_lenient(&doc)?,
            }
        }
        None if pool.is_some() && settings.run.mode == PromptMode::Standard => Vec::new(),
        None => bail!("--demos is required (a filled scaffold)"),
    };
    let out = settings.out.clone().context("--out is required")?;
    let names = settings.names()?;
    let inputs = RunInputs { pool: pool.as_deref(), demos: &demos, test: &test, names: &names };
    let embedder = settings.embedder()?;
    let provider = settings.provider()?;
    let outcome = run_experiment(&inputs, &settings.run, provider.as_ref(), embedder.as_ref())?;
    persist(&out, &outcome.manifest, &outcome.report)?;
    print_summary(&outcome.report);
    println!("wrote {}", out.display());
    Ok(())
}

fn print_summary(report: &RunReport) {
    println!("records {}  failed {}  scored {}", report.total, report.failures, report.scored);
    if let Some(m) = &report.metrics {
        println!("BLEU-4 {:.2}  METEOR {:.2}  ROUGE-L {:.2}", m.bleu4, m.meteor, m.rouge_l);
    }
}

fn cmd_eval(manifest: Option<&Path>, pairs: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let triples: Vec<(String, String, String)> = match (manifest, pairs) {
        (Some(path), _) => {
            let m = read_manifest(path)?;
            if m.status() != kqgcot::harness::RunStatus::Complete {
                bail!("{} is incomplete", path.display());
            }
            m.records
                .into_iter()
                .filter_map(|r| Some((r.id, r.prediction?, r.gold?)))
                .collect()
        }
        (None, Some(path)) => {
            #[derive(Deserialize)]
            struct Pair {
                id: String,
                hypothesis: String,
                reference: String,
            }
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    let p: Pair = serde_json::from_str(l).with_context(|| format!("line {}", i + 1))?;
                    Ok((p.id, p.hypothesis, p.reference))
                })
                .collect::<Result<_>>()?
        }
        (None, None) => bail!("pass --manifest or --pairs"),
    };
    let metrics = evaluate(&triples)?;
    let report = RunReport { total: triples.len(), failures: 0, scored: triples.len(), metrics: Some(metrics) };
    print_summary(&report);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        let file = fs::File::create(dir.join("report.csv"))?;
        report.metrics.as_ref().expect("set above").write_csv(file)?;
    }
    Ok(())
}

fn cmd_diag(flags: &Common, strategies: &[DiagStrategy], seeds: u64) -> Result<()> {
    let settings = Settings::resolve(flags)?;
    let records = settings.pool_records()?;
    let pool = settings.pool_entries(&records)?;
    let seeds: Vec<u64> = (settings.run.seed..settings.run.seed + seeds).collect();
    let rows = diag_similarity(strategies, &pool, settings.run.k, &seeds)?;
    write_or_print(settings.out.as_deref(), &format_diag_table(&rows))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Select(flags) => cmd_select(flags),
        Command::Scaffold { common, check } => cmd_scaffold(common, check.as_deref()),
        Command::Run(flags) => cmd_run(flags),
        Command::Eval { manifest, pairs, out } => cmd_eval(manifest.as_deref(), pairs.as_deref(), out.as_deref()),
        Command::DiagSimilarity { common, strategies, seeds } => cmd_diag(common, strategies, *seeds),
    }
}
