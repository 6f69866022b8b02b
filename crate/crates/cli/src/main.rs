use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Duration, Utc};
use clap::{Args, Parser, Subcommand};
use multidimer_core::clock::SystemClock;
use multidimer_core::component_map::{attribute_bugs, changes_by_bug};
use multidimer_core::config::{AnalysisConfig, SCM_FILE};
use multidimer_core::forge::{generate, GenSpec};
use multidimer_core::idextract::{AnnotatedText, Extractor, ExtractorConfig, RefKey};
use multidimer_core::ingest::{load_corpus, load_corpus_checked, CorpusFormat};
use multidimer_core::jobs::{JobManager, JobRunner};
use multidimer_core::runner::FileRunner;
use multidimer_core::schedule::{QueryTemplate, RecurringSchedule, DEFAULT_INTERVAL_HOURS};
use multidimer_core::scm::{BackendConfig, ScmGateway};
use multidimer_core::{ChangeInfo, CommitRef, ComponentMap, CorpusQuery, SnapshotStore};
use serde::de::DeserializeOwned;
use serde::Serialize;

const DATA_DIR_ENV: &str = "MULTIDIMER_DATA_DIR";

#[derive(Parser)]
#[command(
    name = "multidimer",
    version,
    about = "Multi-dimensional bug report analytics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write an ingest report; fails if any record is rejected.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: CorpusFormat,
        #[arg(long)]
        report: PathBuf,
        /// Config directory whose vocabulary restricts severities.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Extract commit references from answer texts.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Input is an annotated corpus (`bug_id`, `text`, `gold`); print precision and recall.
        #[arg(long)]
        annotated: bool,
        /// Extractor settings (`extraction.json`).
        #[arg(long)]
        extraction: Option<PathBuf>,
    },
    /// Resolve extracted references against the review system.
    Resolve {
        /// JSONL of commit references, as written by `extract`.
        #[arg(long)]
        refs: PathBuf,
        /// Backend config (`scm.json`); relative fixture paths resolve against its directory.
        #[arg(long)]
        scm: PathBuf,
        /// JSONL of resolved changes.
        #[arg(long)]
        out: PathBuf,
        /// JSONL of resolution anomalies.
        #[arg(long)]
        anomalies: Option<PathBuf>,
    },
    /// Attribute bugs to components from resolved changes.
    Map {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        changes: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one analysis and publish the snapshot.
    Analyze(AnalyzeArgs),
    /// Write the consolidated CSV of a stored snapshot.
    Export {
        #[arg(long)]
        snapshot: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: PathBuf,
    },
    /// Serve the REST API.
    Serve(ServeArgs),
    /// Generate a synthetic corpus with planted ground truth.
    Gen {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec's bug count.
        #[arg(long)]
        bugs: Option<usize>,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: CorpusFormat,
    /// Comma separated product ids.
    #[arg(long, value_delimiter = ',', required = true)]
    products: Vec<String>,
    #[arg(long)]
    from: DateTime<Utc>,
    #[arg(long)]
    to: DateTime<Utc>,
    /// Config directory (`component-map.json`, `scm.json`, ...).
    #[arg(long)]
    config: PathBuf,
    /// Snapshot store root.
    #[arg(long, env = DATA_DIR_ENV)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Snapshot store root; also the default home of `config/` and `corpus.jsonl`.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    format: CorpusFormat,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Products for the recurring analysis; no schedule runs without them.
    #[arg(long, value_delimiter = ',')]
    schedule_products: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_INTERVAL_HOURS)]
    schedule_hours: i64,
    /// Window of each scheduled run, ending at the tick; all history when absent.
    #[arg(long)]
    lookback_days: Option<i64>,
    #[arg(long, default_value_t = 2)]
    workers: usize,
    /// Static frontend served under `/ui/`.
    #[arg(long)]
    ui: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Ingest {
            input,
            format,
            report,
            config,
        } => ingest(&input, format, &report, config.as_deref()),
        Command::Extract {
            input,
            out,
            annotated,
            extraction,
        } => extract(&input, &out, annotated, extraction.as_deref()),
        Command::Resolve {
            refs,
            scm,
            out,
            anomalies,
        } => resolve(&refs, &scm, &out, anomalies.as_deref()),
        Command::Map {
            corpus,
            changes,
            map,
            out,
        } => map_bugs(&corpus, &changes, &map, &out),
        Command::Analyze(args) => analyze(args),
        Command::Export {
            snapshot,
            out,
            data_dir,
        } => {
            let store = SnapshotStore::open(&data_dir)?;
            let bytes = store.export_csv(&snapshot)?;
            write_file(&out, &bytes)?;
            println!("{} bytes -> {}", bytes.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve(args) => serve(args),
        Command::Gen {
            spec,
            out,
            seed,
            bugs,
        } => {
            let mut spec: GenSpec = match spec {
                Some(path) => read_json(&path)?,
                None => GenSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(n) = bugs {
                spec.n_bugs = n;
            }
            let generated = generate(&spec)?;
            generated
                .write_to(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} bugs, {} planted refs ({} broken) -> {}",
                generated.manifest.n_bugs,
                generated.manifest.total_refs,
                generated.manifest.broken_refs,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut out =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

fn ingest(
    input: &Path,
    format: CorpusFormat,
    report_path: &Path,
    config: Option<&Path>,
) -> Result<ExitCode> {
    let vocabulary = config
        .map(AnalysisConfig::load_dir)
        .transpose()?
        .map(|c| c.vocabulary);
    let (_, report) = load_corpus_checked(input, format, vocabulary.as_ref())?;
    write_file(report_path, &serde_json::to_vec_pretty(&report)?)?;
    println!("accepted {}, rejected {}", report.accepted, report.rejected);
    Ok(if report.rejected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn extract(
    input: &Path,
    out: &Path,
    annotated: bool,
    extraction: Option<&Path>,
) -> Result<ExitCode> {
    let config: ExtractorConfig = match extraction {
        Some(path) => read_json(path)?,
        None => ExtractorConfig::default(),
    };
    let extractor = Extractor::new(config);
    let refs: Vec<CommitRef> = if annotated {
        let items: Vec<AnnotatedText> = read_jsonl(input)?;
        let (mut predicted, mut gold, mut hits) = (0usize, 0usize, 0usize);
        let mut refs = Vec::new();
        for item in &items {
            let found = extractor.extract(&item.text, &item.bug_id);
            let p: HashSet<RefKey> = found.iter().map(CommitRef::key).collect();
            let g: HashSet<RefKey> = item
                .gold
                .iter()
                .map(|g| RefKey::new(g.kind, &g.value))
                .collect();
            predicted += p.len();
            gold += g.len();
            hits += p.intersection(&g).count();
            refs.extend(found);
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                1.0
            } else {
                num as f64 / den as f64
            }
        };
        println!(
            "{} items: precision {:.4}, recall {:.4} ({hits} of {predicted} predicted, {gold} gold)",
            items.len(),
            ratio(hits, predicted),
            ratio(hits, gold)
        );
        refs
    } else {
        let (reports, report) = load_corpus(input, CorpusFormat::Jsonl)?;
        if report.rejected > 0 {
            log::warn!("{} records rejected", report.rejected);
        }
        let refs: Vec<CommitRef> = reports
            .iter()
            .flat_map(|r| extractor.extract(&r.answer_text, &r.bug_id))
            .collect();
        println!("{} refs from {} reports", refs.len(), reports.len());
        refs
    };
    write_jsonl(out, &refs)?;
    Ok(ExitCode::SUCCESS)
}

fn resolve(
    refs_path: &Path,
    scm: &Path,
    out: &Path,
    anomalies_out: Option<&Path>,
) -> Result<ExitCode> {
    let refs: Vec<CommitRef> = read_jsonl(refs_path)?;
    let config = BackendConfig::load(scm)?;
    let base = scm.parent().unwrap_or(Path::new("."));
    let gateway =
        ScmGateway::new(config.build(base)?, Utc::now()).with_parallelism(config.parallelism);
    let resolution = gateway.resolve(&refs);
    write_jsonl(out, &resolution.changes)?;
    if let Some(path) = anomalies_out {
        write_jsonl(path, &resolution.anomalies)?;
    }
    println!(
        "{} refs: {} changes, {} anomalies",
        refs.len(),
        resolution.changes.len(),
        resolution.anomalies.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn map_bugs(corpus: &Path, changes: &Path, map_path: &Path, out: &Path) -> Result<ExitCode> {
    let (reports, _) = load_corpus(corpus, CorpusFormat::Jsonl)?;
    let changes: Vec<ChangeInfo> = read_jsonl(changes)?;
    let map = ComponentMap::load(map_path)?;
    let attributions = attribute_bugs(&reports, &changes_by_bug(&changes), &map);
    write_jsonl(out, &attributions)?;
    println!(
        "{} of {} bugs attributed",
        attributions.len(),
        reports.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let query = CorpusQuery::new(args.products, args.from, args.to)?;
    if !args.config.join(SCM_FILE).exists() {
        bail!("{} has no {SCM_FILE}", args.config.display());
    }
    let runner = FileRunner {
        corpus: args.corpus,
        format: args.format,
        config_dir: args.config,
        store: SnapshotStore::open(&args.out)?,
        clock: Arc::new(SystemClock),
        cache_lookups: true,
    };
    let snapshot = runner.analyze(&query)?;
    let fresh = runner.store.publish(&snapshot)?;
    println!(
        "snapshot {} ({} bugs, {} attributed, {} anomalies){}",
        snapshot.snapshot_id,
        snapshot.reports.len(),
        snapshot.attributions.len(),
        snapshot.anomalies.len(),
        if fresh { "" } else { ", already stored" }
    );
    Ok(ExitCode::SUCCESS)
}

fn serve(args: ServeArgs) -> Result<ExitCode> {
    let config_dir = args.config.unwrap_or_else(|| args.data_dir.join("config"));
    let corpus = args
        .corpus
        .unwrap_or_else(|| args.data_dir.join("corpus.jsonl"));
    AnalysisConfig::load_dir(&config_dir)
        .with_context(|| format!("loading config from {}", config_dir.display()))?;
    let store = SnapshotStore::open(&args.data_dir)?;
    let runner: Arc<dyn JobRunner> = Arc::new(FileRunner {
        corpus,
        format: args.format,
        config_dir: config_dir.clone(),
        store: store.clone(),
        clock: Arc::new(SystemClock),
        cache_lookups: true,
    });
    let jobs = Arc::new(JobManager::new(runner, Arc::new(SystemClock), args.workers));

    let _schedule = if args.schedule_products.is_empty() {
        None
    } else {
        let template = QueryTemplate {
            product_ids: args.schedule_products.into_iter().collect(),
            lookback_secs: args.lookback_days.map(|d| d * 86_400),
        };
        let schedule = RecurringSchedule::new(
            Duration::hours(args.schedule_hours),
            template,
            Arc::new(SystemClock),
        )?
        .persist_to(args.data_dir.join("schedule.json"));
        log::info!("recurring analysis every {} h", args.schedule_hours);
        Some(schedule.spawn(jobs.clone(), std::time::Duration::from_secs(30)))
    };

    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .context("invalid host or port")?;
    let state = multidimer_server::AppState {
        store,
        jobs,
        config_dir,
    };
    let app = multidimer_server::router(state, args.ui);
    tokio::runtime::Runtime::new()?.block_on(multidimer_server::serve(addr, app))?;
    Ok(ExitCode::SUCCESS)
}
