mod common;

use std::collections::BTreeMap;

use common::{corpus, generation, random_ledger, ragged_corpus, NullGenerator};
use curette::backend::synthetic::{FailingGenerator, StubGenerator};
use curette::backend::BackendError;
use curette::curation::{
    apply_actions, apply_remove, apply_replace_cap, apply_replace_img, apply_static_replace, curate, few_shot_augment,
    pick_sibling_caption, select_shots, ActionKind, CaptionChange, CaptionMode, CurationError, Policy, PolicyConfig,
    StaticMode,
};
use curette::dataset::{Caption, DatasetSnapshot};
use curette::ledger::SelectionRule;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pick_some(ids: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let k = rng.random_range(0..=ids.len());
    let mut chosen: Vec<String> = ids.choose_multiple(rng, k).cloned().collect();
    chosen.sort();
    chosen
}

#[test]
fn cardinalities_over_random_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let generator = NullGenerator::default();
    let g = generation(&generator, dir.path(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for round in 0..1000 {
        let ds = ragged_corpus(&mut rng, 12, 5);
        let snapshot = DatasetSnapshot::initial(ds.clone());
        let ledger = random_ledger(&ds, 1, &mut rng);
        let ids: Vec<String> = ds.sample_ids().map(str::to_owned).collect();
        let selection = pick_some(&ids, &mut rng);

        let removed = apply_remove(&snapshot, &selection).unwrap();
        assert_eq!(removed.snapshot.dataset.len(), ds.len() - selection.len(), "round {round}");
        assert_eq!(removed.snapshot.epoch, 1);

        let cap = apply_replace_cap(&snapshot, &selection, &ledger).unwrap();
        assert_eq!(cap.snapshot.dataset.len(), ds.len());
        assert_eq!(cap.snapshot.dataset.unique_sample_images(), ds.unique_sample_images());
        assert_eq!(cap.snapshot.actions.len() + cap.skipped.len(), selection.len());

        let img = apply_replace_img(&snapshot, &selection, &ledger, CaptionMode::KeepCaption, true, &g).unwrap();
        assert_eq!(img.snapshot.dataset.len(), ds.len());
        assert_eq!(img.snapshot.actions.len(), selection.len());

        for outcome in [&removed, &cap, &img] {
            let replayed = apply_actions(&ds, &outcome.snapshot.actions).unwrap();
            assert_eq!(replayed, outcome.snapshot.dataset);
        }
    }
}

#[test]
fn few_shot_sixteen_plus_four_is_twenty() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus(50, 5, 3);
    let (shots, removes) = select_shots(&ds, 16, 9).unwrap();
    assert_eq!(shots.len(), 16);
    assert_eq!(removes.len(), ds.len() - 16);
    let g = generation(&StubGenerator, dir.path(), 9);
    let out = few_shot_augment(&shots, 4, &g).unwrap();
    assert_eq!(out.snapshot.dataset.len(), 20);
    assert!(out.skipped.is_empty());
    for (j, action) in out.snapshot.actions.iter().enumerate() {
        let ActionKind::AddSample { sample_id, caption_id, new_image } = &action.kind else { panic!("{action:?}") };
        let shot = &shots.samples()[j % 16];
        assert_eq!(sample_id, &format!("{}+aug{j}", shot.sample_id));
        assert_eq!(caption_id, &shot.caption_id);
        assert!(std::path::Path::new(&new_image.uri).is_file());
    }
    // zero extras is the identity
    let same = few_shot_augment(&shots, 0, &g).unwrap();
    assert_eq!(same.snapshot.dataset, shots);
}

#[test]
fn select_shots_is_seeded() {
    let ds = corpus(30, 5, 1);
    let (a, _) = select_shots(&ds, 16, 4).unwrap();
    let (b, _) = select_shots(&ds, 16, 4).unwrap();
    let (c, _) = select_shots(&ds, 16, 5).unwrap();
    assert_eq!(a.samples(), b.samples());
    assert_ne!(a.samples(), c.samples());
    assert!(matches!(select_shots(&ds, 0, 1), Err(CurationError::InvalidMode(_))));
    assert!(matches!(select_shots(&ds, 151, 1), Err(CurationError::InvalidMode(_))));
}

#[test]
fn sibling_caption_order() {
    let caps = vec![
        Caption::new("c0", "a dog"),
        Caption::new("c1", "a dog on the grass"),
        Caption::new("c2", "dog"),
        Caption::new("c3", "a brown dog"),
    ];
    let losses: BTreeMap<&str, f64> = [("c0", 3.0), ("c1", 1.0), ("c3", 1.0)].into_iter().collect();
    let loss = |id: &str| losses.get(id).copied();
    // c1 and c3 tie on loss; c3 has fewer tokens
    assert_eq!(pick_sibling_caption(&caps, "c0", loss), Some(3));
    // without losses: fewest tokens wins
    assert_eq!(pick_sibling_caption(&caps, "c0", |_| None), Some(2));
    // ties on everything fall back to list order
    let same = vec![Caption::new("x", "a b"), Caption::new("y", "c d"), Caption::new("z", "e f")];
    assert_eq!(pick_sibling_caption(&same, "x", |_| None), Some(1));
    assert_eq!(pick_sibling_caption(&same[..1], "x", |_| None), None);
}

#[test]
fn replace_cap_skips_single_caption_images() {
    let ds = corpus(3, 1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ledger = random_ledger(&ds, 1, &mut rng);
    let snapshot = DatasetSnapshot::initial(ds.clone());
    let out = apply_replace_cap(&snapshot, &["img00000#0".into()], &ledger).unwrap();
    assert!(out.snapshot.actions.is_empty());
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.snapshot.dataset.samples(), ds.samples());
}

#[test]
fn replace_cap_switches_to_lowest_loss_sibling() {
    let ds = corpus(2, 3, 2);
    let loss = |id: &str| match id {
        "img00000#0" => 9.0,
        "img00000#1" => 2.0,
        "img00000#2" => 0.5,
        _ => 1.0,
    };
    let records = ds.sample_ids().map(|id| curette::LossRecord { sample_id: id.to_owned(), epoch: 1, loss: loss(id) }).collect();
    let mut ledger = curette::LossLedger::new();
    ledger.record_epoch(1, records, ds.sample_ids()).unwrap();
    let out = apply_replace_cap(&DatasetSnapshot::initial(ds.clone()), &["img00000#0".into()], &ledger).unwrap();
    assert_eq!(
        out.snapshot.actions[0].kind,
        ActionKind::ReplaceCap {
            sample_id: "img00000#0".into(),
            old_caption_id: "img00000#0".into(),
            new_caption_id: "img00000#2".into()
        }
    );
    assert_eq!(out.snapshot.dataset.sample("img00000#0").unwrap().caption_id, "img00000#2");
}

#[test]
fn replace_img_pins_and_repartners() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus(4, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ledger = random_ledger(&ds, 1, &mut rng);
    let g = generation(&StubGenerator, dir.path(), 3);
    let first =
        apply_replace_img(&DatasetSnapshot::initial(ds.clone()), &["img00001#2".into()], &ledger, CaptionMode::RepartnerCaption, true, &g)
            .unwrap();
    let ActionKind::ReplaceImg { new_image, caption_mode, old_image_id, .. } = &first.snapshot.actions[0].kind else {
        panic!()
    };
    assert_eq!(old_image_id, "img00001");
    assert_eq!(new_image.image_id, "syn/img00001#2/e1");
    assert!(matches!(caption_mode, CaptionChange::RepartnerCaption { .. }));
    let sample = first.snapshot.dataset.sample("img00001#2").unwrap();
    assert_eq!(sample.image_id, new_image.image_id);
    assert_ne!(sample.caption_id, "img00001#2");
    assert!(first.snapshot.dataset.image(&new_image.image_id).unwrap().provenance.is_synthesized());

    let mut ledger2 = ledger.clone();
    let records = first
        .snapshot
        .dataset
        .sample_ids()
        .map(|id| curette::LossRecord { sample_id: id.to_owned(), epoch: 2, loss: 1.0 })
        .collect();
    ledger2.record_epoch(2, records, first.snapshot.dataset.sample_ids()).unwrap();
    let pinned = apply_replace_img(&first.snapshot, &["img00001#2".into()], &ledger2, CaptionMode::KeepCaption, true, &g).unwrap();
    assert!(pinned.snapshot.actions.is_empty());
    assert_eq!(pinned.skipped[0].sample_id, "img00001#2");
    let again = apply_replace_img(&first.snapshot, &["img00001#2".into()], &ledger2, CaptionMode::KeepCaption, false, &g).unwrap();
    assert_eq!(again.snapshot.actions.len(), 1);
    assert_eq!(again.snapshot.epoch, 2);
}

#[test]
fn generation_failures_skip_and_outages_abort() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus(4, 2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ledger = random_ledger(&ds, 1, &mut rng);
    let snapshot = DatasetSnapshot::initial(ds.clone());
    let sel = vec!["img00000#0".to_owned(), "img00002#1".to_owned()];

    let failing = FailingGenerator::default();
    let out = apply_replace_img(&snapshot, &sel, &ledger, CaptionMode::KeepCaption, true, &generation(&failing, dir.path(), 0)).unwrap();
    assert!(out.snapshot.actions.is_empty());
    assert_eq!(out.skipped.len(), 2);
    assert_eq!(out.snapshot.dataset.samples(), ds.samples());

    let down = FailingGenerator { error: BackendError::Unavailable("gone".into()) };
    let err = apply_replace_img(&snapshot, &sel, &ledger, CaptionMode::KeepCaption, true, &generation(&down, dir.path(), 0)).unwrap_err();
    assert!(matches!(err, CurationError::BackendUnavailable(_)), "{err:?}");

    let err = curate(&snapshot, &sel, &ledger, &PolicyConfig::replace_img(0.1, CaptionMode::KeepCaption), None).unwrap_err();
    assert!(matches!(err, CurationError::GeneratorRequired(_)));
}

#[test]
fn unknown_samples_are_rejected() {
    let ds = corpus(2, 2, 5);
    let err = apply_remove(&DatasetSnapshot::initial(ds), &["nope".into()]).unwrap_err();
    assert!(matches!(err, CurationError::UnknownSample(_)));
}

#[test]
fn generated_images_are_cached_by_prompt_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus(5, 5, 8);
    let generator = NullGenerator::default();
    let mode = StaticMode::PerImageCount { captions_replaced: 2 };
    let a = apply_static_replace(&ds, mode, &generation(&generator, dir.path(), 4)).unwrap();
    let calls = generator.calls.load(std::sync::atomic::Ordering::Relaxed);
    assert_eq!(calls, 10);
    // NullGenerator writes nothing, so touch the files to simulate a filled cache
    for action in &a.snapshot.actions {
        let ActionKind::ReplaceImg { new_image, .. } = &action.kind else { panic!() };
        std::fs::write(&new_image.uri, b"png").unwrap();
    }
    let b = apply_static_replace(&ds, mode, &generation(&generator, dir.path(), 4)).unwrap();
    assert_eq!(generator.calls.load(std::sync::atomic::Ordering::Relaxed), calls);
    assert_eq!(a.snapshot.actions, b.snapshot.actions);
}

#[test]
fn per_image_count_replaces_exactly_k_of_five() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus(40, 5, 8);
    let generator = NullGenerator::default();
    for k in 1..=4 {
        let out = apply_static_replace(&ds, StaticMode::PerImageCount { captions_replaced: k }, &generation(&generator, dir.path(), 4)).unwrap();
        let replaced = out.snapshot.dataset.samples().iter().filter(|s| s.image_id.starts_with("syn/")).count();
        assert_eq!(replaced * 5, ds.len() * k);
        assert_eq!(out.snapshot.epoch, 0);
        assert!(out.snapshot.actions.iter().all(|a| a.epoch == 0));
        // the first k captions by position are the ones replaced
        for a in &out.snapshot.actions {
            let pos: usize = a.sample_id().rsplit('#').next().unwrap().parse().unwrap();
            assert!(pos < k);
        }
    }
    let err = apply_static_replace(&ds, StaticMode::PerImageCount { captions_replaced: 5 }, &generation(&generator, dir.path(), 4));
    assert!(matches!(err, Err(CurationError::InvalidMode(_))));
}

#[test]
fn coin_flip_is_seeded_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus(200, 5, 8);
    let generator = NullGenerator::default();
    let run = |seed| apply_static_replace(&ds, StaticMode::CoinFlip { p: 0.5 }, &generation(&generator, dir.path(), seed)).unwrap();
    assert_eq!(run(1).snapshot.actions, run(1).snapshot.actions);
    assert_ne!(run(1).snapshot.actions, run(2).snapshot.actions);
    let none = apply_static_replace(&ds, StaticMode::CoinFlip { p: 0.0 }, &generation(&generator, dir.path(), 1)).unwrap();
    assert!(none.snapshot.actions.is_empty());
    let all = apply_static_replace(&ds, StaticMode::CoinFlip { p: 1.0 }, &generation(&generator, dir.path(), 1)).unwrap();
    assert_eq!(all.snapshot.actions.len(), ds.len());
    assert!(apply_static_replace(&ds, StaticMode::CoinFlip { p: 1.5 }, &generation(&generator, dir.path(), 1)).is_err());
}

#[test]
fn policy_config_json_shape() {
    let cfg: PolicyConfig = serde_json::from_value(serde_json::json!({
        "policy": {"kind": "replace_img", "caption_mode": "repartner_caption"},
        "rule": {"kind": "top_fraction", "ratio": 0.4}
    }))
    .unwrap();
    assert_eq!(cfg.policy, Policy::ReplaceImg { caption_mode: CaptionMode::RepartnerCaption });
    assert_eq!(cfg.rule, SelectionRule::TopFraction { ratio: 0.4 });
    assert!(cfg.pin_replacements);
    assert_eq!(cfg.max_in_flight, 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn remove_then_replay_round_trips(seed in any::<u64>(), frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = ragged_corpus(&mut rng, 10, 4);
        let ids: Vec<String> = ds.sample_ids().map(str::to_owned).collect();
        let sel: Vec<String> = ids.iter().filter(|_| rng.random_bool(frac)).cloned().collect();
        let out = apply_remove(&DatasetSnapshot::initial(ds.clone()), &sel).unwrap();
        prop_assert_eq!(out.snapshot.dataset.len() + sel.len(), ds.len());
        for id in &sel {
            prop_assert!(out.snapshot.dataset.sample(id).is_none());
        }
        // every remaining sample still resolves its image and caption
        for s in out.snapshot.dataset.samples() {
            prop_assert!(out.snapshot.dataset.image(&s.image_id).is_some());
            prop_assert!(out.snapshot.dataset.caption(&s.caption_id).is_some());
        }
    }

    #[test]
    fn replace_cap_never_picks_the_current_caption(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = ragged_corpus(&mut rng, 8, 5);
        let ledger = random_ledger(&ds, 1, &mut rng);
        let ids: Vec<String> = ds.sample_ids().map(str::to_owned).collect();
        let out = apply_replace_cap(&DatasetSnapshot::initial(ds.clone()), &ids, &ledger).unwrap();
        for a in &out.snapshot.actions {
            let ActionKind::ReplaceCap { old_caption_id, new_caption_id, sample_id } = &a.kind else { panic!() };
            prop_assert_ne!(old_caption_id, new_caption_id);
            let s = ds.sample(sample_id).unwrap();
            prop_assert_eq!(ds.caption_owner(new_caption_id), Some(s.image_id.as_str()));
        }
    }
}
