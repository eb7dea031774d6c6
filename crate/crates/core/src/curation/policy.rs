use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::action::{apply_actions, ActionKind, CaptionChange, CurationAction, SynthesizedImage};
use super::generate::{synthesized_image_id, Generation, SynthJob};
use super::{CurationError, CurationOutcome, Skipped, REMOVE_TOP_FRACTION, REPLACE_CAP_SIGMA};
use crate::dataset::{Caption, Dataset, DatasetSnapshot, Sample};
use crate::ledger::{LossLedger, SelectionRule};
use crate::promptgen::PromptSpec;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionMode {
    /// The synthesized image keeps the flagged sample's caption.
    #[default]
    KeepCaption,
    /// The synthesized image is paired with the sibling caption ReplaceCap would pick.
    RepartnerCaption,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Remove,
    ReplaceCap,
    ReplaceImg {
        #[serde(default)]
        caption_mode: CaptionMode,
    },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Remove => "remove",
            Policy::ReplaceCap => "replace_cap",
            Policy::ReplaceImg { .. } => "replace_img",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub policy: Policy,
    pub rule: SelectionRule,
    /// Never replace the image of a sample that already points at a synthesized image.
    #[serde(default = "yes")]
    pub pin_replacements: bool,
    /// Seed for generation; the run seed is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub prompt: PromptSpec,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn yes() -> bool {
    true
}

fn default_in_flight() -> usize {
    8
}

impl PolicyConfig {
    pub fn new(policy: Policy, rule: SelectionRule) -> Self {
        Self { policy, rule, pin_replacements: true, rng_seed: None, prompt: PromptSpec::default(), max_in_flight: 8 }
    }

    /// Remove the top 1% each epoch.
    pub fn remove() -> Self {
        Self::new(Policy::Remove, SelectionRule::TopFraction { ratio: REMOVE_TOP_FRACTION })
    }

    /// Replace captions of samples at or above mean + 2 sigma.
    pub fn replace_cap() -> Self {
        Self::new(Policy::ReplaceCap, SelectionRule::SigmaThreshold { k: REPLACE_CAP_SIGMA })
    }

    pub fn replace_img(ratio: f64, caption_mode: CaptionMode) -> Self {
        Self::new(Policy::ReplaceImg { caption_mode }, SelectionRule::TopFraction { ratio })
    }
}

/// Position of the caption a flagged sample should switch to: the lowest known loss,
/// then the fewest tokens, then list order. Unknown losses rank last.
pub fn pick_sibling_caption(
    captions: &[Caption],
    current_caption_id: &str,
    loss_of: impl Fn(&str) -> Option<f64>,
) -> Option<usize> {
    let rank = |c: &Caption| loss_of(c.caption_id()).unwrap_or(f64::INFINITY);
    captions
        .iter()
        .enumerate()
        .filter(|(_, c)| c.caption_id() != current_caption_id)
        .min_by(|(i, a), (j, b)| {
            rank(a)
                .partial_cmp(&rank(b))
                .unwrap_or(Ordering::Equal)
                .then(a.token_count().cmp(&b.token_count()))
                .then(i.cmp(j))
        })
        .map(|(i, _)| i)
}

fn find_sample<'a>(dataset: &'a Dataset, sample_id: &str) -> Result<&'a Sample, CurationError> {
    dataset.sample(sample_id).ok_or_else(|| CurationError::UnknownSample(sample_id.to_owned()))
}

fn finish(snapshot: &DatasetSnapshot, actions: Vec<CurationAction>, skipped: Vec<Skipped>) -> Result<CurationOutcome, CurationError> {
    let dataset = apply_actions(&snapshot.dataset, &actions)?;
    Ok(CurationOutcome { snapshot: DatasetSnapshot { epoch: snapshot.epoch + 1, dataset, actions }, skipped })
}

/// Latest loss per `(image_id, caption_id)` pair, minimised over duplicate samples.
struct PairLosses<'a, T> {
    by_pair: HashMap<(&'a str, &'a str), Vec<&'a str>>,
    ledger: &'a LossLedger<T>,
}

impl<'a, T: Scalar> PairLosses<'a, T> {
    fn new(dataset: &'a Dataset, ledger: &'a LossLedger<T>) -> Self {
        let mut by_pair: HashMap<(&str, &str), Vec<&str>> = HashMap::new();
        for s in dataset.samples() {
            by_pair.entry((s.image_id.as_str(), s.caption_id.as_str())).or_default().push(&s.sample_id);
        }
        Self { by_pair, ledger }
    }

    fn loss(&self, image_id: &str, caption_id: &str) -> Option<f64> {
        self.by_pair
            .get(&(image_id, caption_id))?
            .iter()
            .filter_map(|s| self.ledger.latest_loss(s))
            .map(Scalar::to_f64_lossy)
            .min_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal))
    }

    fn sibling(&self, dataset: &Dataset, sample: &Sample) -> Option<String> {
        let captions = dataset.captions_of(&sample.image_id);
        let i = pick_sibling_caption(captions, &sample.caption_id, |c| self.loss(&sample.image_id, c))?;
        Some(captions[i].caption_id().to_owned())
    }
}

/// Drops the selected samples for the rest of training.
pub fn apply_remove(snapshot: &DatasetSnapshot, selection: &[String]) -> Result<CurationOutcome, CurationError> {
    let epoch = snapshot.epoch + 1;
    let mut actions = Vec::with_capacity(selection.len());
    for id in selection {
        find_sample(&snapshot.dataset, id)?;
        actions.push(CurationAction { epoch, kind: ActionKind::Remove { sample_id: id.clone() } });
    }
    finish(snapshot, actions, Vec::new())
}

/// Re-pairs each selected sample's image with a sibling caption.
pub fn apply_replace_cap<T: Scalar>(
    snapshot: &DatasetSnapshot,
    selection: &[String],
    ledger: &LossLedger<T>,
) -> Result<CurationOutcome, CurationError> {
    let epoch = snapshot.epoch + 1;
    let ds = &snapshot.dataset;
    let losses = PairLosses::new(ds, ledger);
    let (mut actions, mut skipped) = (Vec::new(), Vec::new());
    for id in selection {
        let sample = find_sample(ds, id)?;
        match losses.sibling(ds, sample) {
            Some(new_caption_id) => actions.push(CurationAction {
                epoch,
                kind: ActionKind::ReplaceCap {
                    sample_id: id.clone(),
                    old_caption_id: sample.caption_id.clone(),
                    new_caption_id,
                },
            }),
            None => {
                log::warn!("sample {id}: image {} has no other caption, skipped", sample.image_id);
                skipped.push(Skipped { sample_id: id.clone(), reason: "image has no other caption".into() });
            }
        }
    }
    finish(snapshot, actions, skipped)
}

/// Points each selected sample at a newly synthesized image.
pub fn apply_replace_img<T: Scalar>(
    snapshot: &DatasetSnapshot,
    selection: &[String],
    ledger: &LossLedger<T>,
    caption_mode: CaptionMode,
    pin_replacements: bool,
    generation: &Generation<'_>,
) -> Result<CurationOutcome, CurationError> {
    let epoch = snapshot.epoch + 1;
    let ds = &snapshot.dataset;
    let losses = PairLosses::new(ds, ledger);
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    let mut targets = Vec::new();
    for id in selection {
        let sample = find_sample(ds, id)?;
        let synthesized = ds.image(&sample.image_id).is_some_and(|i| i.provenance.is_synthesized());
        if pin_replacements && synthesized {
            skipped.push(Skipped { sample_id: id.clone(), reason: "already replaced (pinned)".into() });
            continue;
        }
        let mut captions = ds.captions_of(&sample.image_id);
        if captions.is_empty() {
            captions = ds.caption_owner(&sample.caption_id).map_or(&[], |owner| ds.captions_of(owner));
        }
        jobs.push(SynthJob {
            key: id.clone(),
            epoch,
            captions: captions.to_vec(),
            source_image_id: Some(sample.image_id.clone()),
        });
        targets.push(sample);
    }

    let mut actions = Vec::with_capacity(jobs.len());
    for (sample, result) in targets.into_iter().zip(generation.synthesize(&jobs)?) {
        match result {
            Ok(s) => {
                let caption_mode = match caption_mode {
                    CaptionMode::KeepCaption => CaptionChange::KeepCaption,
                    CaptionMode::RepartnerCaption => match losses.sibling(ds, sample) {
                        Some(new_caption_id) => CaptionChange::RepartnerCaption { new_caption_id },
                        None => CaptionChange::KeepCaption,
                    },
                };
                actions.push(CurationAction {
                    epoch,
                    kind: ActionKind::ReplaceImg {
                        sample_id: sample.sample_id.clone(),
                        old_image_id: sample.image_id.clone(),
                        new_image: SynthesizedImage {
                            image_id: synthesized_image_id(&sample.sample_id, epoch),
                            uri: s.image_uri,
                            prompt_id: s.prompt.prompt_id,
                            seed: s.seed,
                        },
                        caption_mode,
                    },
                })
            }
            Err(message) => skipped.push(Skipped { sample_id: sample.sample_id.clone(), reason: message }),
        }
    }
    finish(snapshot, actions, skipped)
}

/// Applies the configured policy to the samples selected at the snapshot's next epoch.
pub fn curate<T: Scalar>(
    snapshot: &DatasetSnapshot,
    selection: &[String],
    ledger: &LossLedger<T>,
    config: &PolicyConfig,
    generation: Option<&Generation<'_>>,
) -> Result<CurationOutcome, CurationError> {
    match config.policy {
        Policy::Remove => apply_remove(snapshot, selection),
        Policy::ReplaceCap => apply_replace_cap(snapshot, selection, ledger),
        Policy::ReplaceImg { caption_mode } => {
            let generation = generation.ok_or(CurationError::GeneratorRequired("replace_img"))?;
            apply_replace_img(snapshot, selection, ledger, caption_mode, config.pin_replacements, generation)
        }
    }
}
