mod common;

use std::fs;

use common::{corpus, dir_contents, twice_in_place};
use curette::backend::synthetic::{StubGenerator, SyntheticLossConfig, SyntheticLossOracle};
use curette::backend::{BackendError, LossOracle, LossQuery, SampleLoss};
use curette::curation::{CaptionMode, PolicyConfig, StaticMode};
use curette::dataset::{load_snapshot, Dataset};
use curette::ledger::SelectionRule;
use curette::orchestrator::{
    self, load_run, read_run_config, resume, run, run_until, seal_file, snapshot_file, verify_action_logs, RunBackends,
    RunConfig, RunError, RunMode, DISTRIBUTION_FILE, REPORT_FILE,
};

fn oracle(ds: &Dataset) -> SyntheticLossOracle {
    SyntheticLossOracle::new(SyntheticLossConfig { seed: 11, ..Default::default() }, ds.sample_ids())
}

fn remove_config(dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::new(PolicyConfig::new(curette::curation::Policy::Remove, SelectionRule::SigmaThreshold { k: 2.0 }), dir);
    c.epochs = 3;
    c.rng_seed = 5;
    c
}

fn replace_img_config(dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::new(PolicyConfig::replace_img(0.05, CaptionMode::RepartnerCaption), dir);
    c.epochs = 3;
    c.rng_seed = 5;
    c.batch_size = 17;
    c
}

fn backends<'a>(loss: &'a dyn LossOracle) -> RunBackends<'a> {
    RunBackends { loss, generator: Some(&StubGenerator), embedder: None }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let ds = corpus(60, 5, 1);
    let loss = oracle(&ds);
    for config in [remove_config(&dir), replace_img_config(&dir)] {
        let (a, b) = twice_in_place(&dir, || {
            run::<f64>(&config, &ds, &backends(&loss)).unwrap();
        });
        assert!(a.contains_key(REPORT_FILE) && a.contains_key(DISTRIBUTION_FILE));
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (name, bytes) in &a {
            assert!(b[name] == *bytes, "{name} differs");
        }
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn replace_img_run_writes_images_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let ds = corpus(60, 5, 1);
    let loss = oracle(&ds);
    let config = replace_img_config(&dir);
    let out = run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    assert!(out.report.complete);
    assert_eq!(out.snapshots.len(), 4);
    for (t, snap) in out.snapshots.iter().enumerate() {
        assert_eq!(snap.dataset.len(), ds.len(), "epoch {t}");
        assert_eq!(load_snapshot(&snapshot_file(&dir, t as u32)).unwrap(), *snap);
    }
    // top 5% of 300 samples = 15 per epoch, minus pinned repeats
    assert_eq!(out.report.epochs[0].selected, 15);
    assert_eq!(out.report.epochs[0].actions["replace_img"], 15);
    let synthesized = out.report.epochs.last().unwrap().synthesized_samples_after;
    assert_eq!(synthesized, out.report.cumulative_actions["replace_img"]);
    assert!(dir.join("images").read_dir().unwrap().count() >= 15);
    verify_action_logs(&ds, &out.snapshots[1..]).unwrap();
}

#[test]
fn action_logs_reconstruct_every_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(80, 5, 2);
    let loss = oracle(&ds);
    let config = remove_config(tmp.path());
    let out = run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    verify_action_logs(&ds, &out.snapshots).unwrap();

    let mut tampered = out.snapshots.clone();
    tampered[2].actions.pop();
    assert!(matches!(verify_action_logs(&ds, &tampered), Err(RunError::CorruptState(_))));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let ds = corpus(60, 5, 3);
    let loss = oracle(&ds);
    let config = replace_img_config(&dir);

    run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    let full = dir_contents(&dir);
    fs::remove_dir_all(&dir).unwrap();

    let partial = run_until::<f64>(&config, &ds, &backends(&loss), 1).unwrap();
    assert!(!partial.report.complete);
    assert!(!dir.join(REPORT_FILE).exists());
    // interrupted mid-epoch: epoch 2 wrote its losses but never sealed
    fs::write(orchestrator::losses_file(&dir, 2), b"{\"garbage\"").unwrap();
    let resumed = resume::<f64>(&config, &backends(&loss)).unwrap();
    assert!(resumed.report.complete);
    assert_eq!(dir_contents(&dir), full);
}

#[test]
fn resume_after_unsealing_the_last_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let ds = corpus(40, 5, 4);
    let loss = oracle(&ds);
    let config = remove_config(&dir);
    run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    let full = dir_contents(&dir);
    fs::remove_file(seal_file(&dir, 3)).unwrap();
    fs::remove_file(dir.join(REPORT_FILE)).unwrap();
    resume::<f64>(&config, &backends(&loss)).unwrap();
    assert_eq!(dir_contents(&dir), full);
}

#[test]
fn tampering_is_detected_on_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let ds = corpus(40, 5, 4);
    let loss = oracle(&ds);
    let config = remove_config(&dir);
    run_until::<f64>(&config, &ds, &backends(&loss), 2).unwrap();

    let path = snapshot_file(&dir, 1);
    let original = fs::read(&path).unwrap();
    fs::write(&path, [original.as_slice(), b" "].concat()).unwrap();
    let err = resume::<f64>(&config, &backends(&loss)).unwrap_err();
    assert!(matches!(err, RunError::CorruptState(_)), "{err}");
    fs::write(&path, &original).unwrap();

    let mut other = config.clone();
    other.rng_seed += 1;
    let err = resume::<f64>(&other, &backends(&loss)).unwrap_err();
    assert!(matches!(err, RunError::CorruptState(_)), "{err}");

    fs::remove_file(orchestrator::losses_file(&dir, 1)).unwrap();
    let err = resume::<f64>(&config, &backends(&loss)).unwrap_err();
    assert!(matches!(err, RunError::CorruptState(_)), "{err}");
}

#[test]
fn fresh_run_refuses_an_existing_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(10, 5, 4);
    let loss = oracle(&ds);
    let config = remove_config(tmp.path());
    run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    let err = run::<f64>(&config, &ds, &backends(&loss)).unwrap_err();
    assert!(matches!(err, RunError::DirectoryInUse(_)));
    assert_eq!(read_run_config(tmp.path()).unwrap(), config);
    let loaded = load_run::<f64>(&config).unwrap();
    assert!(loaded.report.complete);
}

#[test]
fn resume_without_a_run_is_corrupt_state() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(10, 5, 4);
    let loss = oracle(&ds);
    let err = resume::<f64>(&remove_config(tmp.path()), &backends(&loss)).unwrap_err();
    assert!(matches!(err, RunError::CorruptState(_)));
}

/// Fails with `Unavailable` from `fail_at` on.
struct DyingOracle {
    inner: SyntheticLossOracle,
    fail_at: u32,
}

impl LossOracle for DyingOracle {
    fn loss_batch(&self, epoch: u32, samples: &[LossQuery]) -> Result<Vec<SampleLoss>, BackendError> {
        if epoch >= self.fail_at {
            return Err(BackendError::Unavailable("process exited".into()));
        }
        self.inner.loss_batch(epoch, samples)
    }
}

#[test]
fn backend_loss_aborts_with_sealed_prefix_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let ds = corpus(40, 5, 6);
    let loss = oracle(&ds);
    let config = remove_config(&dir);
    run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    let full = dir_contents(&dir);
    fs::remove_dir_all(&dir).unwrap();

    let dying = DyingOracle { inner: oracle(&ds), fail_at: 2 };
    let err = run::<f64>(&config, &ds, &backends(&dying)).unwrap_err();
    assert!(matches!(err, RunError::BackendUnavailable { epoch: 2, .. }), "{err}");
    assert!(seal_file(&dir, 1).exists());
    assert!(!seal_file(&dir, 2).exists());
    resume::<f64>(&config, &backends(&loss)).unwrap();
    assert_eq!(dir_contents(&dir), full);
}

#[test]
fn config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(10, 5, 4);
    let loss = oracle(&ds);
    let mut c = replace_img_config(tmp.path());
    let no_gen = RunBackends { loss: &loss, generator: None, embedder: None };
    assert!(matches!(run::<f64>(&c, &ds, &no_gen), Err(RunError::Config(_))));
    c.epochs = 0;
    assert!(matches!(run::<f64>(&c, &ds, &backends(&loss)), Err(RunError::Config(_))));
    let mut c = remove_config(tmp.path());
    c.policy.rule = SelectionRule::TopFraction { ratio: 2.0 };
    assert!(matches!(run::<f64>(&c, &ds, &backends(&loss)), Err(RunError::Config(_))));
}

#[test]
fn static_pre_replaces_once_then_only_records() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(30, 5, 7);
    let loss = oracle(&ds);
    let mut config = remove_config(tmp.path());
    config.mode = RunMode::StaticPre { static_mode: StaticMode::PerImageCount { captions_replaced: 2 } };
    let out = run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    assert_eq!(out.report.initial_actions["replace_img"], 60);
    for e in &out.report.epochs {
        assert!(e.actions.is_empty());
        assert_eq!(e.samples_after, 150);
        assert_eq!(e.synthesized_samples_after, 60);
    }
    verify_action_logs(&ds, &out.snapshots).unwrap();
}

#[test]
fn few_shot_mode_trains_on_k_plus_extra() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(30, 5, 7);
    let loss = oracle(&ds);
    let mut config = remove_config(tmp.path());
    config.mode = RunMode::FewShot { k: 16, n_extra: 4 };
    let out = run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    assert_eq!(out.report.initial_samples, 20);
    assert_eq!(out.report.initial_actions["add_sample"], 4);
    assert_eq!(out.report.initial_actions["remove"], 150 - 16);
    assert_eq!(out.report.final_samples, 20);
    verify_action_logs(&ds, &out.snapshots).unwrap();
}

#[test]
fn single_precision_runs_select_the_same_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(60, 5, 8);
    let loss = oracle(&ds);
    let a = run::<f64>(&remove_config(&tmp.path().join("a")), &ds, &backends(&loss)).unwrap();
    let b = run::<f32>(&remove_config(&tmp.path().join("b")), &ds, &backends(&loss)).unwrap();
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        assert_eq!(x.dataset, y.dataset);
    }
    for (x, y) in a.report.epochs.iter().zip(&b.report.epochs) {
        assert!((x.loss_mean - y.loss_mean as f64).abs() < 1e-4);
    }
}

#[test]
fn remove_runs_shrink_monotonically() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(80, 5, 6);
    let loss = oracle(&ds);
    let mut config = remove_config(tmp.path());
    config.epochs = 4;
    let out = run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    let sets: Vec<std::collections::BTreeSet<&str>> = out.snapshots.iter().map(|s| s.dataset.sample_ids().collect()).collect();
    for t in 1..sets.len() {
        assert!(sets[t].is_subset(&sets[t - 1]), "epoch {t}");
    }
    // ledger epoch t scores D_{t-1}; anything removed before that is absent
    for e in out.ledger.epochs() {
        let scored: std::collections::BTreeSet<String> = out.ledger.records(e).unwrap().into_iter().map(|r| r.sample_id).collect();
        let live: std::collections::BTreeSet<String> = sets[e as usize - 1].iter().map(|s| s.to_string()).collect();
        assert_eq!(scored, live, "epoch {e}");
    }
}

#[test]
fn pinned_samples_are_replaced_at_most_once() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = corpus(40, 5, 9);
    // no decay: the same hard samples stay on top every epoch
    let loss = SyntheticLossOracle::new(SyntheticLossConfig { seed: 2, decay: 1.0, ..Default::default() }, ds.sample_ids());
    let mut config = replace_img_config(tmp.path());
    config.epochs = 4;
    let out = run::<f64>(&config, &ds, &backends(&loss)).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for snap in &out.snapshots {
        for a in &snap.actions {
            assert!(seen.insert(a.sample_id().to_owned()), "{} replaced twice", a.sample_id());
        }
    }
    assert!(seen.len() >= 10);
}
