mod backends;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use curette::analysis::{self, DEFAULT_MIN_ANNOTATORS};
use curette::backend::client::{ClientConfig, RpcClient};
use curette::backend::server::{serve, BackendSet};
use curette::backend::synthetic::{
    ConstantCaptioner, FailingGenerator, HashedBagOfWords, HashedPairScorer, ReferenceEchoCaptioner, StubGenerator,
    SyntheticLossConfig, SyntheticLossOracle,
};
use curette::backend::transcript::Transcript;
use curette::backend::{Embedder, ImageGenerator};
use curette::curation::{apply_static_replace, few_shot_augment, select_shots, Generation, StaticMode};
use curette::dataset::{caption_length_stats, load_dataset, save_snapshot, Dataset, DatasetSnapshot, Split};
use curette::metrics::{score_corpus, MetricName};
use curette::orchestrator::{self, Role, RunBackends, RunConfig, DISTRIBUTION_FILE};
use curette::promptgen::{build_prompt, PromptSpec, PromptStrategy, StylerConfig};
use curette::roundtrip::{compare_configs, RoundTripBackends, RoundTripConfig};
use curette::{ledger, LossLedger, MetricReport};
use serde::{Deserialize, Serialize};

use backends::{resolve_spec, Backends, BuiltinContext};

#[derive(Parser)]
#[command(name = "curette", version, about = "Loss-driven curation of image-caption datasets")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct BackendFlags {
    /// Loss oracle command or builtin spec.
    #[arg(long)]
    loss_backend: Option<String>,
    #[arg(long)]
    generator_backend: Option<String>,
    #[arg(long)]
    captioner_backend: Option<String>,
    #[arg(long)]
    embedder_backend: Option<String>,
    /// Requests written to a backend before waiting for answers.
    #[arg(long, default_value_t = 8)]
    max_in_flight: usize,
    /// Timeout in seconds for generate_image requests.
    #[arg(long, default_value_t = 120)]
    generate_timeout: u64,
    /// Timeout in seconds for all other requests.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

impl BackendFlags {
    fn flag(&self, role: Role) -> Option<&str> {
        match role {
            Role::Loss => self.loss_backend.as_deref(),
            Role::Generator => self.generator_backend.as_deref(),
            Role::Captioner => self.captioner_backend.as_deref(),
            Role::Embedder => self.embedder_backend.as_deref(),
            Role::Scorer => None,
        }
    }

    fn client(&self, batch_size: usize) -> ClientConfig {
        ClientConfig {
            batch_size,
            max_in_flight: self.max_in_flight,
            generate_timeout: Duration::from_secs(self.generate_timeout),
            default_timeout: Duration::from_secs(self.timeout),
        }
    }

    fn spec(&self, role: Role, config: &BTreeMap<Role, String>) -> Option<String> {
        resolve_spec(role, self.flag(role), config)
    }
}

#[derive(Args)]
struct PromptFlags {
    /// concat, representative, or single:<index>.
    #[arg(long, default_value = "concat")]
    strategy: String,
    /// Do not append the styler suffix.
    #[arg(long)]
    no_styler: bool,
    /// Replace the default styler text.
    #[arg(long)]
    styler: Option<String>,
}

impl PromptFlags {
    fn spec(&self) -> Result<PromptSpec> {
        let strategy = match self.strategy.as_str() {
            "concat" => PromptStrategy::Concat,
            "representative" => PromptStrategy::RepresentativeSelection,
            s => match s.strip_prefix("single:").map(str::parse) {
                Some(Ok(index)) => PromptStrategy::SingleCaption { index },
                _ => bail!("unknown prompt strategy {s:?}"),
            },
        };
        let styler = match (&self.styler, self.no_styler) {
            (_, true) => None,
            (Some(text), false) => Some(StylerConfig { text: text.clone() }),
            (None, false) => Some(StylerConfig::default()),
        };
        Ok(PromptSpec { strategy, styler })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StaticKind {
    PerImageCount,
    CoinFlip,
}

#[derive(Subcommand)]
enum Command {
    /// Run the epoch loop described by a run config.
    Curate {
        #[arg(long)]
        config: PathBuf,
        /// Corpus file; overrides the config's `dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Stop after sealing this epoch (the run can be resumed later).
        #[arg(long)]
        stop_after: Option<u32>,
        #[command(flatten)]
        backends: BackendFlags,
    },
    /// Continue a run from its highest sealed epoch.
    Resume {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        backends: BackendFlags,
    },
    /// Replace images before training, per image or by coin flip.
    StaticReplace {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, value_enum)]
        mode: StaticKind,
        /// Captions per image whose image is replaced (per-image-count).
        #[arg(long)]
        k: Option<usize>,
        /// Replacement probability (coin-flip).
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output snapshot path; the action log is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Where generated images go (default: `images/` next to the output).
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        prompt: PromptFlags,
        #[command(flatten)]
        backends: BackendFlags,
    },
    /// Draw K shots and add synthesized shots generated from their captions.
    Fewshot {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        extra: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        prompt: PromptFlags,
        #[command(flatten)]
        backends: BackendFlags,
    },
    /// Round-trip captioning evaluation of one or more generation configs.
    Roundtrip {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        /// JSON file with one config or an array of configs; default is concat + styler.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Metric used for ranking.
        #[arg(long, default_value = "bleu4")]
        metric: MetricName,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[command(flatten)]
        backends: BackendFlags,
    },
    /// Score candidate captions against references.
    Score {
        /// JSON object image_id -> caption, or a list of {image_id, caption}.
        #[arg(long)]
        candidates: PathBuf,
        /// JSON object image_id -> list of reference captions.
        #[arg(long, conflicts_with = "corpus")]
        references: Option<PathBuf>,
        /// Take references from a corpus file instead.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Comma-separated metric names (default: all).
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<MetricName>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Post-hoc reports.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Serve the deterministic synthetic backends over stdio.
    ServeSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noisy_fraction: f64,
        #[arg(long, default_value_t = 0.9)]
        decay: f64,
        /// Fix the noisy set exactly over this corpus' samples.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: Split,
        /// Constant caption returned by caption_batch (default: echo the corpus' first reference).
        #[arg(long)]
        caption: Option<String>,
        #[arg(long)]
        fail_generation: bool,
        /// Comma-separated roles to serve (default: all).
        #[arg(long, value_delimiter = ',')]
        roles: Vec<String>,
    },
    /// Replay a golden transcript against a backend command.
    Conformance {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        backend: String,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// Aggregate human error annotations.
    Annotations {
        #[arg(long)]
        input: PathBuf,
        /// JSON array of category names (default: built-in 25 categories).
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_ANNOTATORS)]
        min_annotators: usize,
        /// Directory for summary.json, categories.csv and per_image.csv.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// One row per completed run directory (each with metrics.json).
    Sweep {
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-epoch loss histograms of a run directory.
    Losses {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Caption length distribution of a corpus.
    Lengths {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path, split: Split) -> Result<Dataset> {
    load_dataset(path, split).with_context(|| format!("loading {}", path.display()))
}

fn default_cache(out: &Path) -> PathBuf {
    out.parent().unwrap_or(Path::new(".")).join("images")
}

struct Resolved {
    loss: Option<Arc<dyn curette::backend::LossOracle>>,
    generator: Option<Arc<dyn ImageGenerator>>,
    captioner: Option<Arc<dyn curette::backend::Captioner>>,
    embedder: Option<Arc<dyn Embedder>>,
    _pool: Backends,
}

fn resolve(
    flags: &BackendFlags,
    config: &BTreeMap<Role, String>,
    roles: &[Role],
    batch_size: usize,
    ctx: &BuiltinContext<'_>,
) -> Result<Resolved> {
    let mut pool = Backends::new(flags.client(batch_size));
    let mut out = Resolved { loss: None, generator: None, captioner: None, embedder: None, _pool: Backends::default() };
    for &role in roles {
        let Some(spec) = flags.spec(role, config) else { continue };
        log::info!("{} backend: {spec}", role.as_str());
        match role {
            Role::Loss => out.loss = Some(pool.loss(&spec, ctx)?),
            Role::Generator => out.generator = Some(pool.generator(&spec, ctx)?),
            Role::Captioner => out.captioner = Some(pool.captioner(&spec, ctx)?),
            Role::Embedder => out.embedder = Some(pool.embedder(&spec)?),
            Role::Scorer => {}
        }
    }
    out._pool = pool;
    Ok(out)
}

fn require<T: ?Sized>(backend: &Option<Arc<T>>, role: Role) -> Result<&T> {
    match backend {
        Some(b) => Ok(b.as_ref()),
        None => bail!(
            "no {} backend: pass --{}-backend or set {}",
            role.as_str(),
            role.as_str(),
            backends::env_var(role)
        ),
    }
}

fn run_config(path: &Path, dataset: Option<PathBuf>) -> Result<(RunConfig, Option<Dataset>)> {
    let mut config: RunConfig = read_json(path)?;
    if let Some(d) = dataset {
        config.dataset = Some(d);
    }
    let dataset = match &config.dataset {
        Some(p) => Some(load(p, config.split)?),
        None => None,
    };
    Ok((config, dataset))
}

fn print_report(report: &orchestrator::RunReport<f64>) {
    println!("initial samples: {}", report.initial_samples);
    for e in &report.epochs {
        println!(
            "epoch {}: mean loss {:.4}, std {:.4}, above 2 sigma {}, selected {}, actions {}, skipped {}, samples {}",
            e.epoch,
            e.loss_mean,
            e.loss_std,
            e.above_two_sigma,
            e.selected,
            e.actions.values().sum::<usize>(),
            e.skipped,
            e.samples_after
        );
    }
}

fn curate(config_path: &Path, dataset: Option<PathBuf>, stop_after: Option<u32>, flags: &BackendFlags, resume: bool) -> Result<ExitCode> {
    let (config, dataset) = run_config(config_path, dataset)?;
    let ctx = BuiltinContext { dataset: dataset.as_ref(), seed: config.rng_seed, ..Default::default() };
    let r = resolve(flags, &config.backends, &[Role::Loss, Role::Generator, Role::Embedder], config.batch_size, &ctx)?;
    let backends = RunBackends {
        loss: require(&r.loss, Role::Loss)?,
        generator: r.generator.as_deref(),
        embedder: r.embedder.as_deref(),
    };
    let outcome = if resume {
        orchestrator::resume::<f64>(&config, &backends)?
    } else {
        let dataset = dataset.context("the run config names no dataset; pass --dataset")?;
        orchestrator::run_until::<f64>(&config, &dataset, &backends, stop_after.unwrap_or(config.epochs))?
    };
    print_report(&outcome.report);
    if outcome.report.complete {
        println!("run complete: {}", config.snapshot_dir.display());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("stopped after epoch {}; resume to finish", outcome.snapshots.len() - 1);
        Ok(ExitCode::from(3))
    }
}

fn write_snapshot(out: &Path, snapshot: &DatasetSnapshot, skipped: usize) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_snapshot(snapshot, out).with_context(|| format!("writing {}", out.display()))?;
    println!("{} samples, {} actions, {} skipped -> {}", snapshot.dataset.len(), snapshot.actions.len(), skipped, out.display());
    Ok(())
}

fn roundtrip(
    dataset_path: &Path,
    split: Split,
    config: Option<&Path>,
    metric: MetricName,
    out: &Path,
    cache_dir: Option<PathBuf>,
    batch_size: usize,
    flags: &BackendFlags,
) -> Result<()> {
    let dataset = load(dataset_path, split)?;
    let configs: Vec<RoundTripConfig> = match config {
        None => vec![RoundTripConfig::new("concat+styler", PromptSpec::default())],
        Some(p) => {
            let v: serde_json::Value = read_json(p)?;
            if v.is_array() {
                serde_json::from_value(v)?
            } else {
                vec![serde_json::from_value(v)?]
            }
        }
    };
    let none = BTreeMap::new();
    let mut ctx = BuiltinContext { dataset: Some(&dataset), ..Default::default() };
    // The echo captioner answers synthetic images by the prompt they were generated from.
    let embedder = match flags.spec(Role::Embedder, &none) {
        Some(spec) => Some(Backends::new(flags.client(batch_size)).embedder(&spec)?),
        None => None,
    };
    for c in &configs {
        for img in dataset.images() {
            let caps = dataset.captions_of(&img.image_id);
            if let (Some(first), Ok(p)) =
                (caps.first(), build_prompt(caps, c.prompt.strategy, c.prompt.styler.as_ref(), embedder.as_deref()))
            {
                ctx.echo_by_prompt.entry(p.prompt_id).or_insert_with(|| first.text().to_owned());
            }
        }
    }
    let r = resolve(flags, &none, &[Role::Generator, Role::Captioner, Role::Embedder], batch_size, &ctx)?;
    let backends = RoundTripBackends {
        generator: require(&r.generator, Role::Generator)?,
        captioner: require(&r.captioner, Role::Captioner)?,
        embedder: r.embedder.as_deref(),
        cache_dir: cache_dir.unwrap_or_else(|| default_cache(out)),
        max_in_flight: flags.max_in_flight,
        batch_size,
    };
    let comparison = compare_configs::<f64>(&dataset, &configs, &backends, metric)?;
    for row in &comparison.rows {
        match (&row.rank, &row.score, &row.error) {
            (Some(rank), score, _) => println!(
                "#{rank} {}: {metric} {} ({} skipped)",
                row.name,
                score.map_or("n/a".into(), |s| format!("{s:.4}")),
                row.skipped
            ),
            (None, _, Some(e)) => println!("failed {}: {e}", row.name),
            _ => {}
        }
    }
    write_json(out, &comparison)?;
    if comparison.rows.iter().any(|r| r.error.is_some()) {
        bail!("at least one round-trip config failed");
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidateFile {
    Map(BTreeMap<String, String>),
    List(Vec<CandidateRow>),
}

#[derive(Deserialize)]
struct CandidateRow {
    image_id: String,
    caption: String,
}

fn score(
    candidates: &Path,
    references: Option<&Path>,
    corpus: Option<&Path>,
    split: Split,
    metrics: Vec<MetricName>,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> Result<()> {
    let candidates = match read_json::<CandidateFile>(candidates)? {
        CandidateFile::Map(m) => m,
        CandidateFile::List(list) => {
            let mut m = BTreeMap::new();
            for c in list {
                if m.insert(c.image_id.clone(), c.caption).is_some() {
                    bail!("candidate for {} given twice", c.image_id);
                }
            }
            m
        }
    };
    let references: BTreeMap<String, Vec<String>> = match (references, corpus) {
        (Some(r), _) => read_json(r)?,
        (None, Some(c)) => {
            let ds = load(c, split)?;
            ds.captions_by_image()
                .iter()
                .filter(|(id, _)| candidates.contains_key(*id))
                .map(|(id, caps)| (id.clone(), caps.iter().map(|c| c.text().to_owned()).collect()))
                .collect()
        }
        (None, None) => bail!("pass --references or --corpus"),
    };
    let metrics: BTreeSet<MetricName> = if metrics.is_empty() { MetricName::all() } else { metrics.into_iter().collect() };
    let report: MetricReport = score_corpus(&candidates, &references, &metrics)?;
    if let Some(p) = csv {
        fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    match out {
        Some(p) => write_json(p, &report)?,
        None => {
            for (m, v) in &report.corpus {
                println!("{m}\t{v:.6}");
            }
        }
    }
    Ok(())
}

fn analyze(what: Analyze) -> Result<()> {
    match what {
        Analyze::Annotations { input, taxonomy, min_annotators, out_dir } => {
            let taxonomy = match taxonomy {
                Some(p) => analysis::parse_taxonomy(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => analysis::default_taxonomy(),
            };
            let file = fs::File::open(&input).with_context(|| format!("reading {}", input.display()))?;
            let records = analysis::parse_annotations(file)?;
            let summary = analysis::aggregate_annotations(&records, &taxonomy, min_annotators)?;
            println!("{} images kept, {} excluded (< {min_annotators} annotators)", summary.images, summary.excluded_images);
            for (g, m) in &summary.group_means {
                println!("{g} loss: mean errors per annotator {m:.3}");
            }
            if let Some(rho) = summary.spearman {
                println!("spearman(loss, errors) = {rho:.4}");
            }
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir)?;
                write_json(&dir.join("summary.json"), &summary)?;
                fs::write(dir.join("categories.csv"), analysis::category_csv(&summary))?;
                fs::write(dir.join("per_image.csv"), analysis::per_image_csv(&summary))?;
            } else {
                print!("{}", analysis::category_csv(&summary));
            }
        }
        Analyze::Sweep { runs, out } => {
            let rows = analysis::sweep_report(&runs)?;
            write_or_print(out.as_deref(), &analysis::sweep_csv(&rows))?;
        }
        Analyze::Losses { run, out } => {
            let path = run.join(DISTRIBUTION_FILE);
            let text = if path.is_file() {
                fs::read_to_string(&path)?
            } else {
                let mut ledger = LossLedger::new();
                let mut epoch = 1;
                let mut rows = Vec::new();
                while orchestrator::losses_file(&run, epoch).is_file() {
                    let f = fs::File::open(orchestrator::losses_file(&run, epoch))?;
                    let records: Vec<curette::LossRecord> = ledger::read_ndjson(std::io::BufReader::new(f))?;
                    let ids: Vec<String> = records.iter().map(|r| r.sample_id.clone()).collect();
                    ledger.record_epoch(epoch, records, ids.iter().map(String::as_str))?;
                    rows.extend(ledger.export_loss_distribution(epoch..=epoch)?);
                    epoch += 1;
                }
                if rows.is_empty() {
                    bail!("{} has no recorded losses", run.display());
                }
                ledger::histogram_csv(&rows)
            };
            write_or_print(out.as_deref(), &text)?;
        }
        Analyze::Lengths { dataset, split } => {
            let stats = caption_length_stats(&load(&dataset, split)?)?;
            println!("captions: {}, mean tokens: {:.2}, max: {}", stats.count, stats.mean, stats.max);
            for (len, n) in &stats.histogram {
                let marker = if (*len as f64) > stats.mean { " *" } else { "" };
                println!("{len}\t{n}{marker}");
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn serve_synthetic(
    seed: u64,
    noisy_fraction: f64,
    decay: f64,
    dataset: Option<PathBuf>,
    split: Split,
    caption: Option<String>,
    fail_generation: bool,
    roles: Vec<String>,
) -> Result<()> {
    let dataset = dataset.map(|p| load(&p, split)).transpose()?;
    let wants = |r: &str| roles.is_empty() || roles.iter().any(|x| x == r);
    let config = SyntheticLossConfig { seed, noisy_fraction, decay, ..Default::default() };
    let mut set = BackendSet::default();
    if wants("loss") {
        set.loss = Some(match &dataset {
            Some(ds) => Box::new(SyntheticLossOracle::new(config, ds.sample_ids())),
            None => Box::new(SyntheticLossOracle::streaming(config)),
        });
    }
    if wants("generator") {
        set.generator =
            Some(if fail_generation { Box::new(FailingGenerator::default()) } else { Box::new(StubGenerator) });
    }
    if wants("captioner") {
        set.captioner = Some(match (caption, &dataset) {
            (Some(text), _) => Box::new(ConstantCaptioner(text)),
            (None, Some(ds)) => Box::new(ReferenceEchoCaptioner::by_uri(
                ds.images()
                    .iter()
                    .filter_map(|i| ds.captions_of(&i.image_id).first().map(|c| (i.uri.clone(), c.text().to_owned())))
                    .collect(),
            )),
            (None, None) => Box::new(ConstantCaptioner("a picture".into())),
        });
    }
    if wants("embedder") {
        let e = HashedBagOfWords::default();
        set.embed_dim = Some(e.dim);
        set.embedder = Some(Box::new(e));
    }
    if wants("scorer") {
        set.scorer = Some(Box::new(HashedPairScorer));
    }
    serve(&set, std::io::stdin().lock(), std::io::stdout().lock())?;
    Ok(())
}

fn conformance(transcript: &Path, backend: &str) -> Result<ExitCode> {
    let text = fs::read_to_string(transcript).with_context(|| format!("reading {}", transcript.display()))?;
    let transcript = Transcript::parse(&text).map_err(anyhow::Error::msg)?;
    let client = RpcClient::spawn(backend, ClientConfig::default())?;
    let mismatches = transcript.replay_client(&client);
    for m in &mismatches {
        println!("request {}: {}", m.request_id, m.detail);
    }
    println!("{} exchanges, {} mismatches", transcript.exchanges.len(), mismatches.len());
    Ok(if mismatches.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn generation<'a>(
    generator: &'a dyn ImageGenerator,
    embedder: Option<&'a dyn Embedder>,
    prompt: PromptSpec,
    cache_dir: PathBuf,
    seed: u64,
    max_in_flight: usize,
) -> Generation<'a> {
    Generation { generator, embedder, prompt, cache_dir, rng_seed: seed, max_in_flight }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    let none = BTreeMap::new();
    match command {
        Command::Curate { config, dataset, stop_after, backends } => curate(&config, dataset, stop_after, &backends, false),
        Command::Resume { config, dataset, backends } => curate(&config, dataset, None, &backends, true),
        Command::StaticReplace { dataset, split, mode, k, p, seed, out, cache_dir, prompt, backends } => {
            let ds = load(&dataset, split)?;
            let mode = match mode {
                StaticKind::PerImageCount => StaticMode::PerImageCount { captions_replaced: k.context("--k is required")? },
                StaticKind::CoinFlip => StaticMode::CoinFlip { p: p.context("--p is required")? },
            };
            let ctx = BuiltinContext { dataset: Some(&ds), seed, ..Default::default() };
            let r = resolve(&backends, &none, &[Role::Generator, Role::Embedder], 64, &ctx)?;
            let cache = cache_dir.unwrap_or_else(|| default_cache(&out));
            let g = generation(require(&r.generator, Role::Generator)?, r.embedder.as_deref(), prompt.spec()?, cache, seed, backends.max_in_flight);
            let outcome = apply_static_replace(&ds, mode, &g)?;
            write_snapshot(&out, &outcome.snapshot, outcome.skipped.len())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fewshot { dataset, split, k, extra, seed, out, cache_dir, prompt, backends } => {
            let ds = load(&dataset, split)?;
            let (shots, mut actions) = select_shots(&ds, k, seed)?;
            let snapshot = if extra == 0 {
                DatasetSnapshot::initial(shots)
            } else {
                let ctx = BuiltinContext { dataset: Some(&ds), seed, ..Default::default() };
                let r = resolve(&backends, &none, &[Role::Generator, Role::Embedder], 64, &ctx)?;
                let cache = cache_dir.unwrap_or_else(|| default_cache(&out));
                let g = generation(require(&r.generator, Role::Generator)?, r.embedder.as_deref(), prompt.spec()?, cache, seed, backends.max_in_flight);
                let outcome = few_shot_augment(&shots, extra, &g)?;
                if !outcome.skipped.is_empty() {
                    log::warn!("{} extra shots could not be generated", outcome.skipped.len());
                }
                outcome.snapshot
            };
            actions.extend(snapshot.actions);
            write_snapshot(&out, &DatasetSnapshot { epoch: 0, dataset: snapshot.dataset, actions }, 0)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Roundtrip { dataset, split, config, metric, out, cache_dir, batch_size, backends } => {
            roundtrip(&dataset, split, config.as_deref(), metric, &out, cache_dir, batch_size, &backends)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { candidates, references, corpus, split, metrics, out, csv } => {
            score(&candidates, references.as_deref(), corpus.as_deref(), split, metrics, out.as_deref(), csv.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { what } => {
            analyze(what)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ServeSynthetic { seed, noisy_fraction, decay, dataset, split, caption, fail_generation, roles } => {
            serve_synthetic(seed, noisy_fraction, decay, dataset, split, caption, fail_generation, roles)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Conformance { transcript, backend } => conformance(&transcript, &backend),
    }
}
