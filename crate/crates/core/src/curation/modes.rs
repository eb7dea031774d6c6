use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::{apply_actions, ActionKind, CaptionChange, CurationAction, SynthesizedImage};
use super::generate::{synthesized_image_id, Generation, SynthJob};
use super::{CurationError, CurationOutcome, Skipped};
use crate::dataset::{Dataset, DatasetSnapshot, Sample};

/// One-shot replacement applied before training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StaticMode {
    /// Replace the image of the first `captions_replaced` captions of every image.
    PerImageCount { captions_replaced: usize },
    /// Replace each sample's image independently with probability `p`.
    CoinFlip { p: f64 },
}

/// Static replacement; the result is an epoch-0 snapshot whose actions carry epoch 0.
pub fn apply_static_replace(
    dataset: &Dataset,
    mode: StaticMode,
    generation: &Generation<'_>,
) -> Result<CurationOutcome, CurationError> {
    let chosen: Vec<&Sample> = match mode {
        StaticMode::PerImageCount { captions_replaced: k } => {
            if k == 0 {
                return Err(CurationError::InvalidMode("captions_replaced must be at least 1".into()));
            }
            let mut by_image: BTreeMap<&str, Vec<(usize, &Sample)>> = BTreeMap::new();
            for s in dataset.samples() {
                let pos = dataset.caption_position(&s.caption_id).unwrap_or(usize::MAX);
                by_image.entry(&s.image_id).or_default().push((pos, s));
            }
            let mut chosen = Vec::new();
            for img in dataset.images() {
                let Some(mut samples) = by_image.remove(img.image_id.as_str()) else { continue };
                let n = dataset.captions_of(&img.image_id).len();
                if n < k + 1 {
                    return Err(CurationError::InvalidMode(format!(
                        "image {} has {n} captions, replacing {k} needs at least {}",
                        img.image_id,
                        k + 1
                    )));
                }
                samples.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.sample_id.cmp(&b.1.sample_id)));
                chosen.extend(samples.into_iter().take(k).map(|(_, s)| s));
            }
            chosen.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            chosen
        }
        StaticMode::CoinFlip { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(CurationError::InvalidMode(format!("coin-flip probability {p} outside [0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(generation.rng_seed);
            dataset.samples().iter().filter(|_| rng.random_bool(p)).collect()
        }
    };

    let jobs: Vec<SynthJob> = chosen
        .iter()
        .map(|s| SynthJob {
            key: s.sample_id.clone(),
            epoch: 0,
            captions: dataset.captions_of(&s.image_id).to_vec(),
            source_image_id: Some(s.image_id.clone()),
        })
        .collect();
    let mut actions = Vec::new();
    let mut skipped = Vec::new();
    for (s, result) in chosen.iter().zip(generation.synthesize(&jobs)?) {
        match result {
            Ok(syn) => actions.push(CurationAction {
                epoch: 0,
                kind: ActionKind::ReplaceImg {
                    sample_id: s.sample_id.clone(),
                    old_image_id: s.image_id.clone(),
                    new_image: SynthesizedImage {
                        image_id: synthesized_image_id(&s.sample_id, 0),
                        uri: syn.image_uri,
                        prompt_id: syn.prompt.prompt_id,
                        seed: syn.seed,
                    },
                    caption_mode: CaptionChange::KeepCaption,
                },
            }),
            Err(reason) => skipped.push(Skipped { sample_id: s.sample_id.clone(), reason }),
        }
    }
    let dataset = apply_actions(dataset, &actions)?;
    Ok(CurationOutcome { snapshot: DatasetSnapshot { epoch: 0, dataset, actions }, skipped })
}

/// `k` samples drawn without replacement by a seeded shuffle, with their images and
/// captions, plus the epoch-0 Remove actions that cut the rest.
pub fn select_shots(dataset: &Dataset, k: usize, rng_seed: u64) -> Result<(Dataset, Vec<CurationAction>), CurationError> {
    if k == 0 || k > dataset.len() {
        return Err(CurationError::InvalidMode(format!("cannot draw {k} shots from {} samples", dataset.len())));
    }
    let mut ids: Vec<&str> = dataset.sample_ids().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let keep: std::collections::HashSet<&str> = ids.into_iter().take(k).collect();
    let actions: Vec<CurationAction> = dataset
        .sample_ids()
        .filter(|id| !keep.contains(id))
        .map(|id| CurationAction { epoch: 0, kind: ActionKind::Remove { sample_id: id.to_owned() } })
        .collect();
    Ok((apply_actions(dataset, &actions)?, actions))
}

/// Adds `n_extra` synthesized shots. Extra shot `j` is generated from the caption of
/// shot `j mod K` (shots in sample-id order) and paired with that caption.
pub fn few_shot_augment(
    shots: &Dataset,
    n_extra: usize,
    generation: &Generation<'_>,
) -> Result<CurationOutcome, CurationError> {
    if n_extra == 0 {
        return Ok(CurationOutcome { snapshot: DatasetSnapshot::initial(shots.clone()), skipped: Vec::new() });
    }
    if shots.is_empty() {
        return Err(CurationError::InvalidMode("few-shot augmentation needs at least one shot".into()));
    }
    let k = shots.len();
    let mut sources = Vec::with_capacity(n_extra);
    let mut jobs = Vec::with_capacity(n_extra);
    for j in 0..n_extra {
        let shot = &shots.samples()[j % k];
        let caption = shots.caption(&shot.caption_id).expect("validated dataset").clone();
        let key = format!("{}+aug{j}", shot.sample_id);
        jobs.push(SynthJob { key: key.clone(), epoch: 0, captions: vec![caption], source_image_id: Some(shot.image_id.clone()) });
        sources.push((key, shot));
    }
    let mut actions = Vec::new();
    let mut skipped = Vec::new();
    for ((key, shot), result) in sources.into_iter().zip(generation.synthesize(&jobs)?) {
        match result {
            Ok(syn) => actions.push(CurationAction {
                epoch: 0,
                kind: ActionKind::AddSample {
                    sample_id: key.clone(),
                    caption_id: shot.caption_id.clone(),
                    new_image: SynthesizedImage {
                        image_id: synthesized_image_id(&key, 0),
                        uri: syn.image_uri,
                        prompt_id: syn.prompt.prompt_id,
                        seed: syn.seed,
                    },
                },
            }),
            Err(reason) => skipped.push(Skipped { sample_id: key, reason }),
        }
    }
    let dataset = apply_actions(shots, &actions)?;
    Ok(CurationOutcome { snapshot: DatasetSnapshot { epoch: 0, dataset, actions }, skipped })
}
