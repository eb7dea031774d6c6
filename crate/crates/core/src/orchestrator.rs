//! The epoch loop: losses for every sample of snapshot `t-1`, selection, policy,
//! snapshot `t`, with every epoch persisted so a run can be resumed.
//!
//! Layout of a run directory:
//!
//! ```text
//! run.json                      config and its hash
//! snapshot_NNNN.json            dataset D_t (+ snapshot_NNNN.actions.json)
//! losses_NNNN.ndjson            losses recorded at epoch t (computed on D_{t-1})
//! loss_hist_NNNN.csv            50-bin histogram of those losses
//! epoch_NNNN.sealed             written last; lists selection, skips and file digests
//! images/                       generated images, keyed by prompt id and seed
//! report.json                   written when all epochs are sealed
//! loss_distribution.csv         histograms of every epoch
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{collect_losses, BackendError, Embedder, ImageGenerator, LossOracle, LossQuery};
use crate::curation::{
    apply_actions, apply_static_replace, curate, few_shot_augment, select_shots, CurationError, Generation,
    Policy, PolicyConfig, Skipped, StaticMode, DEFAULT_EPOCHS,
};
use crate::dataset::{
    actions_path, load_snapshot, save_snapshot, Dataset, DatasetError, DatasetSnapshot, Split,
};
use crate::hashing::sha256_hex;
use crate::ledger::{histogram_csv, read_ndjson, EpochStats, LedgerError, LossLedger, LossRecord};
use crate::scalar::Scalar;

pub const RUN_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.json";
pub const DISTRIBUTION_FILE: &str = "loss_distribution.csv";
pub const IMAGE_DIR: &str = "images";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Loss,
    Generator,
    Captioner,
    Embedder,
    Scorer,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Loss, Role::Generator, Role::Captioner, Role::Embedder, Role::Scorer];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Loss => "loss",
            Role::Generator => "generator",
            Role::Captioner => "captioner",
            Role::Embedder => "embedder",
            Role::Scorer => "scorer",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMode {
    /// Curate between epochs from the recorded losses.
    #[default]
    Dynamic,
    /// Replace images once before training, then only record losses.
    StaticPre { static_mode: StaticMode },
    /// Train on `k` drawn shots plus `n_extra` synthesized ones, then only record losses.
    FewShot { k: usize, n_extra: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    pub policy: PolicyConfig,
    /// Command per backend role, used by the CLI to launch backends.
    #[serde(default)]
    pub backends: BTreeMap<Role, String>,
    pub snapshot_dir: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Corpus to curate, used by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_epochs() -> u32 {
    DEFAULT_EPOCHS
}

fn default_batch_size() -> usize {
    64
}

fn default_split() -> Split {
    Split::Train
}

impl RunConfig {
    pub fn new(policy: PolicyConfig, snapshot_dir: impl Into<PathBuf>) -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            policy,
            backends: BTreeMap::new(),
            snapshot_dir: snapshot_dir.into(),
            rng_seed: 0,
            mode: RunMode::Dynamic,
            batch_size: 64,
            dataset: None,
            split: Split::Train,
        }
    }

    /// Digest of everything that determines the run's output (the run directory excluded).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.snapshot_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn generation_seed(&self) -> u64 {
        self.policy.rng_seed.unwrap_or(self.rng_seed)
    }

    fn needs_generator(&self) -> bool {
        match self.mode {
            RunMode::Dynamic => matches!(self.policy.policy, Policy::ReplaceImg { .. }),
            RunMode::StaticPre { .. } => true,
            RunMode::FewShot { n_extra, .. } => n_extra > 0,
        }
    }
}

pub struct RunBackends<'a> {
    pub loss: &'a dyn LossOracle,
    pub generator: Option<&'a dyn ImageGenerator>,
    pub embedder: Option<&'a dyn Embedder>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("{0} already holds a run; resume it or pick another directory")]
    DirectoryInUse(PathBuf),
    #[error("corrupt run state: {0}")]
    CorruptState(String),
    #[error("epoch {epoch}: loss backend unavailable: {source}")]
    BackendUnavailable { epoch: u32, source: BackendError },
    #[error("epoch {epoch}: loss backend error: {source}")]
    Backend { epoch: u32, source: BackendError },
    #[error("epoch {epoch}: {source}")]
    Curation { epoch: u32, source: CurationError },
    #[error("epoch {epoch}: {source}")]
    Ledger { epoch: u32, source: LedgerError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Written last for every epoch; its presence marks the epoch complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSeal {
    pub epoch: u32,
    pub selection: Vec<String>,
    pub skipped: Vec<Skipped>,
    /// File name -> SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary<T> {
    pub epoch: u32,
    pub samples_before: usize,
    pub loss_mean: T,
    pub loss_std: T,
    /// Samples at or above mean + 2 std.
    pub above_two_sigma: usize,
    pub selected: usize,
    pub actions: BTreeMap<String, usize>,
    pub skipped: usize,
    pub samples_after: usize,
    pub images_after: usize,
    pub synthesized_samples_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport<T> {
    pub config_hash: String,
    pub mode: RunMode,
    pub policy: String,
    pub initial_samples: usize,
    pub initial_actions: BTreeMap<String, usize>,
    pub initial_skipped: usize,
    pub epochs: Vec<EpochSummary<T>>,
    pub epoch_stats: Vec<EpochStats<T>>,
    pub cumulative_actions: BTreeMap<String, usize>,
    pub final_samples: usize,
    pub complete: bool,
}

#[derive(Debug)]
pub struct RunOutcome<T> {
    /// `D_0 .. D_t` for every sealed epoch.
    pub snapshots: Vec<DatasetSnapshot>,
    pub ledger: LossLedger<T>,
    pub report: RunReport<T>,
}

#[derive(Serialize, Deserialize)]
struct RunFile {
    config_hash: String,
    config: RunConfig,
}

pub fn snapshot_file(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("snapshot_{epoch:04}.json"))
}

pub fn losses_file(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("losses_{epoch:04}.ndjson"))
}

pub fn histogram_file(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("loss_hist_{epoch:04}.csv"))
}

pub fn seal_file(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.sealed"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_owned(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn digest_of(path: &Path) -> Result<String, RunError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

struct State<T> {
    snapshots: Vec<DatasetSnapshot>,
    ledger: LossLedger<T>,
    seals: Vec<EpochSeal>,
}

fn validate(config: &RunConfig, backends: &RunBackends<'_>) -> Result<(), RunError> {
    if config.epochs == 0 {
        return Err(RunError::Config("epochs must be at least 1".into()));
    }
    if config.batch_size == 0 {
        return Err(RunError::Config("batch_size must be at least 1".into()));
    }
    config.policy.rule.validate().map_err(|e| RunError::Config(e.to_string()))?;
    if config.needs_generator() && backends.generator.is_none() {
        return Err(RunError::Config("this policy/mode needs an image generator backend".into()));
    }
    Ok(())
}

fn generation<'a>(config: &RunConfig, backends: &RunBackends<'a>) -> Option<Generation<'a>> {
    backends.generator.map(|generator| Generation {
        generator,
        embedder: backends.embedder,
        prompt: config.policy.prompt.clone(),
        cache_dir: config.snapshot_dir.join(IMAGE_DIR),
        rng_seed: config.generation_seed(),
        max_in_flight: config.policy.max_in_flight,
    })
}

/// Persists a snapshot and its epoch's artifacts, then the seal.
fn persist_epoch<T: Scalar + Serialize>(
    dir: &Path,
    snapshot: &DatasetSnapshot,
    ledger: &LossLedger<T>,
    selection: Vec<String>,
    skipped: Vec<Skipped>,
) -> Result<EpochSeal, RunError> {
    let epoch = snapshot.epoch;
    let mut written = Vec::new();
    if epoch > 0 {
        let lpath = losses_file(dir, epoch);
        let mut buf = Vec::new();
        ledger.write_ndjson(epoch, &mut buf).map_err(|source| RunError::Ledger { epoch, source })?;
        write_file(&lpath, &buf)?;
        let hpath = histogram_file(dir, epoch);
        let rows = ledger.export_loss_distribution(epoch..=epoch).map_err(|source| RunError::Ledger { epoch, source })?;
        write_file(&hpath, histogram_csv(&rows).as_bytes())?;
        written.extend([lpath, hpath]);
    }
    let spath = snapshot_file(dir, epoch);
    save_snapshot(snapshot, &spath)?;
    written.extend([actions_path(&spath), spath]);
    let mut files = BTreeMap::new();
    for p in &written {
        files.insert(file_name(p), digest_of(p)?);
    }
    let seal = EpochSeal { epoch, selection, skipped, files };
    let seal_path = seal_file(dir, epoch);
    write_file(&seal_path, serde_json::to_string_pretty(&seal).expect("seal serializes").as_bytes())?;
    Ok(seal)
}

fn initial_snapshot(
    config: &RunConfig,
    dataset: &Dataset,
    generation: Option<&Generation<'_>>,
) -> Result<(DatasetSnapshot, Vec<Skipped>), RunError> {
    let at0 = |source| RunError::Curation { epoch: 0, source };
    match config.mode {
        RunMode::Dynamic => Ok((DatasetSnapshot::initial(dataset.clone()), Vec::new())),
        RunMode::StaticPre { static_mode } => {
            let generation = generation.ok_or_else(|| RunError::Config("static mode needs a generator".into()))?;
            let out = apply_static_replace(dataset, static_mode, generation).map_err(at0)?;
            Ok((out.snapshot, out.skipped))
        }
        RunMode::FewShot { k, n_extra } => {
            let (shots, mut actions) = select_shots(dataset, k, config.rng_seed).map_err(at0)?;
            let (snapshot, skipped) = match (n_extra, generation) {
                (0, _) => (DatasetSnapshot::initial(shots), Vec::new()),
                (_, None) => return Err(RunError::Config("few-shot augmentation needs a generator".into())),
                (_, Some(g)) => {
                    let out = few_shot_augment(&shots, n_extra, g).map_err(at0)?;
                    (out.snapshot, out.skipped)
                }
            };
            actions.extend(snapshot.actions);
            Ok((DatasetSnapshot { epoch: 0, dataset: snapshot.dataset, actions }, skipped))
        }
    }
}

fn loss_queries(dataset: &Dataset) -> Vec<LossQuery> {
    dataset
        .samples()
        .iter()
        .map(|s| LossQuery {
            sample_id: s.sample_id.clone(),
            image_uri: dataset.image(&s.image_id).map(|i| i.uri.clone()).unwrap_or_default(),
            caption_text: dataset.caption(&s.caption_id).map(|c| c.text().to_owned()).unwrap_or_default(),
        })
        .collect()
}

fn drive<T: Scalar + Serialize>(
    config: &RunConfig,
    backends: &RunBackends<'_>,
    state: &mut State<T>,
    until: u32,
) -> Result<(), RunError> {
    let dir = &config.snapshot_dir;
    let generation = generation(config, backends);
    let first = state.snapshots.len() as u32;
    for epoch in first..=until.min(config.epochs) {
        let prev = state.snapshots.last().expect("snapshot 0 exists");
        let queries = loss_queries(&prev.dataset);
        let losses = collect_losses(backends.loss, epoch, &queries, config.batch_size).map_err(|source| {
            if source.is_fatal() {
                RunError::BackendUnavailable { epoch, source }
            } else {
                RunError::Backend { epoch, source }
            }
        })?;
        let records = losses.into_iter().map(|l| LossRecord { sample_id: l.sample_id, epoch, loss: T::lit(l.loss) }).collect();
        state
            .ledger
            .record_epoch(epoch, records, prev.dataset.sample_ids())
            .map_err(|source| RunError::Ledger { epoch, source })?;

        let (next, selection, skipped) = if config.mode == RunMode::Dynamic {
            let selection = state
                .ledger
                .select_difficult(epoch, config.policy.rule)
                .map_err(|source| RunError::Ledger { epoch, source })?;
            let out = curate(prev, &selection, &state.ledger, &config.policy, generation.as_ref())
                .map_err(|source| RunError::Curation { epoch, source })?;
            (out.snapshot, selection, out.skipped)
        } else {
            (DatasetSnapshot { epoch, dataset: prev.dataset.clone(), actions: Vec::new() }, Vec::new(), Vec::new())
        };
        log::info!(
            "epoch {epoch}: {} samples, {} selected, {} actions, {} skipped",
            prev.dataset.len(),
            selection.len(),
            next.actions.len(),
            skipped.len()
        );
        let seal = persist_epoch(dir, &next, &state.ledger, selection, skipped)?;
        state.seals.push(seal);
        state.snapshots.push(next);
    }
    Ok(())
}

fn count_actions(actions: &[crate::curation::CurationAction]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for a in actions {
        *out.entry(a.name().to_owned()).or_insert(0) += 1;
    }
    out
}

fn build_report<T: Scalar>(config: &RunConfig, state: &State<T>) -> Result<RunReport<T>, RunError> {
    let s0 = &state.snapshots[0];
    let mut epochs = Vec::new();
    let mut epoch_stats = Vec::new();
    let mut cumulative = count_actions(&s0.actions);
    for (t, snap) in state.snapshots.iter().enumerate().skip(1) {
        let epoch = t as u32;
        let stats = state.ledger.stats(epoch).ok_or(RunError::Ledger { epoch, source: LedgerError::NoSuchEpoch(epoch) })?;
        let actions = count_actions(&snap.actions);
        for (k, v) in &actions {
            *cumulative.entry(k.clone()).or_insert(0) += v;
        }
        let ds = &snap.dataset;
        epochs.push(EpochSummary {
            epoch,
            samples_before: state.snapshots[t - 1].dataset.len(),
            loss_mean: stats.mean,
            loss_std: stats.std,
            above_two_sigma: state.ledger.count_above_sigma(epoch, 2.0).map_err(|source| RunError::Ledger { epoch, source })?,
            selected: state.seals[t].selection.len(),
            actions,
            skipped: state.seals[t].skipped.len(),
            samples_after: ds.len(),
            images_after: ds.unique_sample_images(),
            synthesized_samples_after: ds
                .samples()
                .iter()
                .filter(|s| ds.image(&s.image_id).is_some_and(|i| i.provenance.is_synthesized()))
                .count(),
        });
        epoch_stats.push(stats.clone());
    }
    Ok(RunReport {
        config_hash: config.config_hash(),
        mode: config.mode,
        policy: config.policy.policy.name().to_owned(),
        initial_samples: s0.dataset.len(),
        initial_actions: count_actions(&s0.actions),
        initial_skipped: state.seals[0].skipped.len(),
        epochs,
        epoch_stats,
        cumulative_actions: cumulative,
        final_samples: state.snapshots.last().map_or(0, |s| s.dataset.len()),
        complete: state.snapshots.len() as u32 == config.epochs + 1,
    })
}

fn finish<T: Scalar + Serialize>(config: &RunConfig, state: State<T>) -> Result<RunOutcome<T>, RunError> {
    let report = build_report(config, &state)?;
    if report.complete {
        let dir = &config.snapshot_dir;
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_file(&dir.join(REPORT_FILE), json.as_bytes())?;
        let rows = state
            .ledger
            .export_loss_distribution(1..=config.epochs)
            .map_err(|source| RunError::Ledger { epoch: config.epochs, source })?;
        write_file(&dir.join(DISTRIBUTION_FILE), histogram_csv(&rows).as_bytes())?;
    }
    Ok(RunOutcome { snapshots: state.snapshots, ledger: state.ledger, report })
}

/// Runs all configured epochs in a fresh run directory.
pub fn run<T: Scalar + Serialize>(
    config: &RunConfig,
    dataset: &Dataset,
    backends: &RunBackends<'_>,
) -> Result<RunOutcome<T>, RunError> {
    run_until(config, dataset, backends, config.epochs)
}

/// Like [`run`] but stops after sealing epoch `until`.
pub fn run_until<T: Scalar + Serialize>(
    config: &RunConfig,
    dataset: &Dataset,
    backends: &RunBackends<'_>,
    until: u32,
) -> Result<RunOutcome<T>, RunError> {
    validate(config, backends)?;
    if dataset.is_empty() {
        return Err(RunError::Config("dataset has no samples".into()));
    }
    let dir = &config.snapshot_dir;
    if dir.join(RUN_FILE).exists() {
        return Err(RunError::DirectoryInUse(dir.clone()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let run_file = RunFile { config_hash: config.config_hash(), config: config.clone() };
    write_file(&dir.join(RUN_FILE), serde_json::to_string_pretty(&run_file).expect("serializes").as_bytes())?;

    let generation = generation(config, backends);
    let (snapshot0, skipped) = initial_snapshot(config, dataset, generation.as_ref())?;
    let seal = persist_epoch::<T>(dir, &snapshot0, &LossLedger::new(), Vec::new(), skipped)?;
    let mut state = State { snapshots: vec![snapshot0], ledger: LossLedger::new(), seals: vec![seal] };
    drive(config, backends, &mut state, until)?;
    finish(config, state)
}

/// Loads every sealed epoch of a run directory, checking digests and ledger consistency.
fn load_state<T: Scalar + serde::de::DeserializeOwned>(dir: &Path) -> Result<State<T>, RunError> {
    let corrupt = |m: String| RunError::CorruptState(m);
    let mut state = State { snapshots: Vec::new(), ledger: LossLedger::new(), seals: Vec::new() };
    let mut epoch = 0u32;
    while seal_file(dir, epoch).is_file() {
        let spath = seal_file(dir, epoch);
        let seal: EpochSeal = serde_json::from_slice(&fs::read(&spath).map_err(io_err(&spath))?)
            .map_err(|e| corrupt(format!("{}: {e}", spath.display())))?;
        if seal.epoch != epoch {
            return Err(corrupt(format!("{} names epoch {}", spath.display(), seal.epoch)));
        }
        for (name, digest) in &seal.files {
            let p = dir.join(name);
            let actual = digest_of(&p).map_err(|_| corrupt(format!("sealed file {name} is missing")))?;
            if &actual != digest {
                return Err(corrupt(format!("sealed file {name} was modified")));
            }
        }
        let snapshot = load_snapshot(&snapshot_file(dir, epoch))?;
        if snapshot.epoch != epoch {
            return Err(corrupt(format!("snapshot file for epoch {epoch} holds epoch {}", snapshot.epoch)));
        }
        if epoch > 0 {
            let lpath = losses_file(dir, epoch);
            let file = fs::File::open(&lpath).map_err(io_err(&lpath))?;
            let records = read_ndjson(BufReader::new(file)).map_err(|e| corrupt(format!("{}: {e}", lpath.display())))?;
            let prev = &state.snapshots[epoch as usize - 1];
            state
                .ledger
                .record_epoch(epoch, records, prev.dataset.sample_ids())
                .map_err(|e| corrupt(format!("{}: {e}", lpath.display())))?;
        }
        state.snapshots.push(snapshot);
        state.seals.push(seal);
        epoch += 1;
    }
    if state.snapshots.is_empty() {
        return Err(corrupt(format!("{} has no sealed epoch", dir.display())));
    }
    Ok(state)
}

fn check_run_file(config: &RunConfig) -> Result<(), RunError> {
    let dir = &config.snapshot_dir;
    let path = dir.join(RUN_FILE);
    let bytes = fs::read(&path).map_err(|_| RunError::CorruptState(format!("{} holds no run", dir.display())))?;
    let stored: RunFile =
        serde_json::from_slice(&bytes).map_err(|e| RunError::CorruptState(format!("{}: {e}", path.display())))?;
    let expected = config.config_hash();
    if stored.config_hash != expected || stored.config.config_hash() != expected {
        return Err(RunError::CorruptState(format!(
            "config hash {expected} does not match the run's {}",
            stored.config_hash
        )));
    }
    Ok(())
}

/// Continues a run from its highest sealed epoch.
pub fn resume<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    config: &RunConfig,
    backends: &RunBackends<'_>,
) -> Result<RunOutcome<T>, RunError> {
    validate(config, backends)?;
    check_run_file(config)?;
    let mut state = load_state::<T>(&config.snapshot_dir)?;
    drive(config, backends, &mut state, config.epochs)?;
    finish(config, state)
}

/// Loads a run directory without continuing it.
pub fn load_run<T: Scalar + Serialize + serde::de::DeserializeOwned>(config: &RunConfig) -> Result<RunOutcome<T>, RunError> {
    check_run_file(config)?;
    let state = load_state::<T>(&config.snapshot_dir)?;
    let report = build_report(config, &state)?;
    Ok(RunOutcome { snapshots: state.snapshots, ledger: state.ledger, report })
}

/// Replays each snapshot's action log on its predecessor (on `initial` for snapshot 0)
/// and checks the result equals the stored snapshot.
pub fn verify_action_logs(initial: &Dataset, snapshots: &[DatasetSnapshot]) -> Result<(), RunError> {
    let mut prev = initial;
    for snap in snapshots {
        let replayed = apply_actions(prev, &snap.actions).map_err(|source| RunError::Curation { epoch: snap.epoch, source })?;
        if replayed != snap.dataset {
            return Err(RunError::CorruptState(format!("replaying the actions of epoch {} does not reproduce it", snap.epoch)));
        }
        prev = &snap.dataset;
    }
    Ok(())
}

/// Config stored in a run directory.
pub fn read_run_config(dir: &Path) -> Result<RunConfig, RunError> {
    let path = dir.join(RUN_FILE);
    let bytes = fs::read(&path).map_err(|_| RunError::CorruptState(format!("{} holds no run", dir.display())))?;
    let stored: RunFile =
        serde_json::from_slice(&bytes).map_err(|e| RunError::CorruptState(format!("{}: {e}", path.display())))?;
    Ok(stored.config)
}
