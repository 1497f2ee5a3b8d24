use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use atlas_core::artifacts::{embed_field, index_field, layout_field, ArtifactDir, SearchField};
use atlas_core::pipeline::{build_backend, run_pipeline};

use crate::bench::{self, RecallBench};
use crate::config::{CliConfig, Overrides};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "prompt-atlas", version, about = "Build and serve a semantic map of image prompts")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps worker threads for data-parallel work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print the report to stdout as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DirArg {
    /// Artifact directory; defaults to `artifact_dir` from the config.
    #[arg(long, value_name = "DIR")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    #[command(flatten)]
    pub dir: DirArg,
    /// Field to process (repeatable): prompt, location, lighting, mood,
    /// tone, genre or subject.
    #[arg(long = "field", value_parser = parse_field)]
    pub fields: Vec<SearchField>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the prompt corpus.
    Generate(DirArg),
    /// Embed one or more corpus fields.
    Embed(FieldArgs),
    /// Train and fill IVFPQ indexes over embedded fields.
    Index(FieldArgs),
    /// Compute map positions, density grid, labels and LOD.
    Layout(DirArg),
    /// Serve the map API.
    Serve {
        #[command(flatten)]
        dir: DirArg,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Recall, diversity and length reports.
    Bench {
        #[command(subcommand)]
        mode: BenchMode,
    },
}

#[derive(Debug, Args)]
pub struct BenchOut {
    /// Also write `<mode>.csv` and `<mode>.json` here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TextSource {
    /// One text per line; otherwise the corpus in the artifact directory.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub dir: DirArg,
}

#[derive(Debug, Subcommand)]
pub enum BenchMode {
    Recall {
        #[arg(long)]
        vectors: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        /// Comma-separated nprobe values.
        #[arg(long, value_delimiter = ',')]
        nprobe: Vec<usize>,
        /// Exact re-rank shortlist length.
        #[arg(long)]
        rerank: Option<usize>,
        #[command(flatten)]
        out: BenchOut,
    },
    Diversity {
        #[command(flatten)]
        source: TextSource,
        #[arg(long)]
        points: Option<usize>,
        /// Brute-force neighbour candidates.
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        out: BenchOut,
    },
    Length {
        #[command(flatten)]
        source: TextSource,
        #[command(flatten)]
        out: BenchOut,
    },
}

fn parse_field(s: &str) -> Result<SearchField, String> {
    SearchField::parse(s).map_err(|e| e.to_string())
}

/// What a subcommand prints: JSON with `--json`, text otherwise.
#[derive(Debug, Clone)]
pub struct Report {
    pub value: Value,
    pub text: String,
}

impl Report {
    fn new(value: impl Serialize, text: impl Into<String>) -> Self {
        Self {
            value: serde_json::to_value(value).expect("report serializes"),
            text: text.into(),
        }
    }
}

impl Cli {
    fn dir_override(&self) -> Option<PathBuf> {
        let dir = match &self.command {
            Command::Generate(d) | Command::Layout(d) | Command::Serve { dir: d, .. } => d,
            Command::Embed(f) | Command::Index(f) => &f.dir,
            Command::Bench {
                mode: BenchMode::Diversity { source, .. } | BenchMode::Length { source, .. },
            } => &source.dir,
            Command::Bench { .. } => return None,
        };
        dir.dir.clone()
    }

    fn name(&self) -> &'static str {
        match &self.command {
            Command::Generate(_) => "generate",
            Command::Embed(_) => "embed",
            Command::Index(_) => "index",
            Command::Layout(_) => "layout",
            Command::Serve { .. } => "serve",
            Command::Bench { mode } => match mode {
                BenchMode::Recall { .. } => "bench-recall",
                BenchMode::Diversity { .. } => "bench-diversity",
                BenchMode::Length { .. } => "bench-length",
            },
        }
    }

    /// Loads the file, applies flags and environment.
    pub fn resolve_config(&self) -> CliResult<CliConfig> {
        let flags = Overrides {
            seed: self.seed,
            threads: self.threads,
            artifact_dir: self.dir_override(),
        };
        CliConfig::load(self.config.as_deref())?.resolve(&flags, |k| std::env::var(k).ok())
    }
}

fn write_effective(dir: &Path, command: &str, config: &CliConfig) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(format!("config-{command}.json"));
    std::fs::write(&path, config.effective_json() + "\n")
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn write_outputs(out: &BenchOut, mode: &str, csv: &str, value: &Value) -> CliResult<()> {
    let Some(dir) = &out.out else {
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let csv_path = dir.join(format!("{mode}.csv"));
    std::fs::write(&csv_path, csv).map_err(|e| CliError::io(format!("writing {}", csv_path.display()), e))?;
    let json_path = dir.join(format!("{mode}.json"));
    let body = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(&json_path, body).map_err(|e| CliError::io(format!("writing {}", json_path.display()), e))
}

fn texts_from(source: &TextSource, dir: &ArtifactDir, subjects: bool) -> CliResult<Vec<String>> {
    match &source.input {
        Some(path) => bench::read_lines(path),
        None if subjects => bench::corpus_subjects(dir),
        None => bench::corpus_prompts(dir),
    }
}

/// Runs the parsed command against a resolved configuration.
pub fn run(cli: &Cli, config: CliConfig) -> CliResult<Report> {
    if let Some(threads) = config.threads {
        atlas_core::parallel::init_threads(threads);
    }
    let command = cli.name();
    tracing::info!(
        command,
        seed = ?config.seed,
        threads = ?config.threads,
        config = %serde_json::to_string(&config).expect("config serializes"),
        "resolved configuration"
    );
    let dir = ArtifactDir::new(&config.artifact_dir);

    match &cli.command {
        Command::Generate(_) => {
            write_effective(dir.root(), command, &config)?;
            let out = run_pipeline(&config.generate, dir.root())?;
            let m = &out.manifest;
            let text = format!(
                "generated {} records ({} flagged NSFW, {} previews) into {}",
                m.records,
                m.nsfw_flagged,
                m.images,
                dir.root().display()
            );
            Ok(Report::new(m, text))
        }
        Command::Embed(args) => {
            write_effective(dir.root(), command, &config)?;
            let fields = if args.fields.is_empty() { &config.embed.fields } else { &args.fields };
            let mut summaries = Vec::new();
            for &field in fields {
                summaries.push(embed_field(&dir, field, &config.embed.embedder)?);
            }
            let text = summaries
                .iter()
                .map(|s| format!("{}: {} rows x {} dims", s.field, s.rows, s.dim))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Report::new(json!({ "fields": summaries }), text))
        }
        Command::Index(args) => {
            write_effective(dir.root(), command, &config)?;
            let fields = if args.fields.is_empty() { &config.index.fields } else { &args.fields };
            let mut summaries = Vec::new();
            for &field in fields {
                summaries.push(index_field(&dir, field, config.index.params)?);
            }
            let text = summaries
                .iter()
                .map(|s| match &s.path {
                    Some(p) => format!("{}: {} vectors -> {}", s.field, s.vectors, p.display()),
                    None => format!("{}: {} vectors, exact scan only", s.field, s.vectors),
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Report::new(json!({ "fields": summaries }), text))
        }
        Command::Layout(_) => {
            write_effective(dir.root(), command, &config)?;
            let labeler = build_backend(&config.generate)?;
            let art = layout_field(&dir, &config.layout, labeler.as_ref())?;
            let previews = art.lod.preview.iter().filter(|p| **p).count();
            let value = json!({
                "points": art.positions.len(),
                "grid_resolution": art.grid.resolution,
                "grid_total": art.grid.total(),
                "anchors": art.anchors.len(),
                "previews": previews,
                "path": dir.layout(),
            });
            let text = format!(
                "laid out {} points, {} labels, {} previews into {}",
                art.positions.len(),
                art.anchors.len(),
                previews,
                dir.layout().display()
            );
            Ok(Report::new(value, text))
        }
        Command::Serve { bind, port, .. } => {
            let mut serve = config.serve.clone();
            if let Some(bind) = bind {
                serve.bind = bind.clone();
            }
            if let Some(port) = port {
                let host = serve.bind.rsplit_once(':').map_or(serve.bind.as_str(), |(h, _)| h);
                serve.bind = format!("{host}:{port}");
            }
            let state = prompt_atlas_service::AppState::from_config(serve)?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(config.threads.unwrap_or(2).max(1))
                .enable_all()
                .build()
                .map_err(|e| CliError::io("starting runtime", e))?;
            runtime
                .block_on(prompt_atlas_service::serve(state))
                .map_err(|e| CliError::io("serving", e))?;
            Ok(Report::new(json!({ "stopped": true }), "server stopped"))
        }
        Command::Bench { mode } => run_bench(mode, &config, &dir),
    }
}

fn run_bench(mode: &BenchMode, config: &CliConfig, dir: &ArtifactDir) -> CliResult<Report> {
    match mode {
        BenchMode::Recall {
            vectors,
            dim,
            queries,
            k,
            nlist,
            m,
            nprobe,
            rerank,
            out,
        } => {
            let base = &config.bench.recall;
            let b = RecallBench {
                vectors: vectors.unwrap_or(base.vectors),
                dim: dim.unwrap_or(base.dim),
                queries: queries.unwrap_or(base.queries),
                k: k.unwrap_or(base.k),
                nlist: nlist.unwrap_or(base.nlist),
                m: m.unwrap_or(base.m),
                nprobes: if nprobe.is_empty() { base.nprobes.clone() } else { nprobe.clone() },
                rerank: rerank.unwrap_or(base.rerank),
                ..base.clone()
            };
            let report = bench::run_recall(&b)?;
            let csv = report.to_csv();
            let value = serde_json::to_value(&report).expect("report serializes");
            write_outputs(out, "recall", &csv, &value)?;
            Ok(Report { value, text: csv })
        }
        BenchMode::Diversity {
            source,
            points,
            exact,
            out,
        } => {
            let texts = texts_from(source, dir, true)?;
            let mut b = config.bench.diversity.clone();
            if let Some(p) = points {
                b.points = *p;
            }
            let mut dedup = config.bench_dedup();
            if *exact {
                dedup.exact = true;
            }
            let report = bench::run_diversity(&texts, &b, &config.generate.embedder, &dedup)?;
            let csv = report.curve.to_csv();
            let value = serde_json::to_value(&report).expect("report serializes");
            write_outputs(out, "diversity", &csv, &value)?;
            Ok(Report { value, text: csv })
        }
        BenchMode::Length { source, out } => {
            let prompts = texts_from(source, dir, false)?;
            let stats = bench::run_length(&prompts)?;
            let csv = stats.histogram_csv();
            let value = serde_json::to_value(&stats).expect("report serializes");
            write_outputs(out, "length", &csv, &value)?;
            let text = format!(
                "prompts {}\nmean {:.3}\nstd_dev {:.3}\n{csv}",
                stats.count, stats.mean, stats.std_dev
            );
            Ok(Report { value, text })
        }
    }
}
