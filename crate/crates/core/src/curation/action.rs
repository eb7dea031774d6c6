use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::dataset::{Dataset, ImageAsset, Provenance, Sample};

/// One auditable dataset edit. `epoch` is the epoch of the snapshot the edit produces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationAction {
    pub epoch: u32,
    #[serde(flatten)]
    pub kind: ActionKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ActionKind {
    Remove {
        sample_id: String,
    },
    ReplaceCap {
        sample_id: String,
        old_caption_id: String,
        new_caption_id: String,
    },
    ReplaceImg {
        sample_id: String,
        old_image_id: String,
        new_image: SynthesizedImage,
        caption_mode: CaptionChange,
    },
    /// A new sample pairing a synthesized image with an existing caption (few-shot augmentation).
    AddSample {
        sample_id: String,
        caption_id: String,
        new_image: SynthesizedImage,
    },
}

/// Everything needed to recreate the synthesized asset when replaying the log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedImage {
    pub image_id: String,
    pub uri: String,
    pub prompt_id: String,
    pub seed: u64,
}

impl SynthesizedImage {
    pub fn to_asset(&self) -> ImageAsset {
        ImageAsset {
            image_id: self.image_id.clone(),
            uri: self.uri.clone(),
            provenance: Provenance::Synthesized { prompt_id: self.prompt_id.clone(), seed: self.seed },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CaptionChange {
    KeepCaption,
    RepartnerCaption { new_caption_id: String },
}

impl CurationAction {
    pub fn sample_id(&self) -> &str {
        match &self.kind {
            ActionKind::Remove { sample_id }
            | ActionKind::ReplaceCap { sample_id, .. }
            | ActionKind::ReplaceImg { sample_id, .. }
            | ActionKind::AddSample { sample_id, .. } => sample_id,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ActionKind::Remove { .. } => "remove",
            ActionKind::ReplaceCap { .. } => "replace_cap",
            ActionKind::ReplaceImg { .. } => "replace_img",
            ActionKind::AddSample { .. } => "add_sample",
        }
    }
}

/// Applies an action log to a dataset.
///
/// When the log removes samples or re-points images, images no longer referenced
/// by any sample (neither as the sample's image nor as owner of its caption) are
/// dropped together with their captions.
pub fn apply_actions(dataset: &Dataset, actions: &[CurationAction]) -> Result<Dataset, CurationError> {
    if actions.is_empty() {
        return Ok(dataset.clone());
    }
    let (split, mut images, mut captions_by_image, samples) = dataset.clone().into_parts();
    let mut samples: BTreeMap<String, Sample> = samples.into_iter().map(|s| (s.sample_id.clone(), s)).collect();
    let mut image_ids: HashSet<String> = images.iter().map(|i| i.image_id.clone()).collect();
    let mut prune = false;
    let fail = |i: usize, message: String| CurationError::Replay { index: i, message };

    for (i, action) in actions.iter().enumerate() {
        match &action.kind {
            ActionKind::Remove { sample_id } => {
                samples.remove(sample_id).ok_or_else(|| CurationError::UnknownSample(sample_id.clone()))?;
                prune = true;
            }
            ActionKind::ReplaceCap { sample_id, old_caption_id, new_caption_id } => {
                let s = samples.get_mut(sample_id).ok_or_else(|| CurationError::UnknownSample(sample_id.clone()))?;
                if &s.caption_id != old_caption_id {
                    return Err(fail(i, format!("sample {sample_id} has caption {}, not {old_caption_id}", s.caption_id)));
                }
                s.caption_id = new_caption_id.clone();
            }
            ActionKind::ReplaceImg { sample_id, old_image_id, new_image, caption_mode } => {
                let s = samples.get_mut(sample_id).ok_or_else(|| CurationError::UnknownSample(sample_id.clone()))?;
                if &s.image_id != old_image_id {
                    return Err(fail(i, format!("sample {sample_id} has image {}, not {old_image_id}", s.image_id)));
                }
                if !image_ids.insert(new_image.image_id.clone()) {
                    return Err(fail(i, format!("image {} already exists", new_image.image_id)));
                }
                images.push(new_image.to_asset());
                s.image_id = new_image.image_id.clone();
                if let CaptionChange::RepartnerCaption { new_caption_id } = caption_mode {
                    s.caption_id = new_caption_id.clone();
                }
                prune = true;
            }
            ActionKind::AddSample { sample_id, caption_id, new_image } => {
                if samples.contains_key(sample_id) {
                    return Err(fail(i, format!("sample {sample_id} already exists")));
                }
                if !image_ids.insert(new_image.image_id.clone()) {
                    return Err(fail(i, format!("image {} already exists", new_image.image_id)));
                }
                images.push(new_image.to_asset());
                samples.insert(
                    sample_id.clone(),
                    Sample { sample_id: sample_id.clone(), image_id: new_image.image_id.clone(), caption_id: caption_id.clone() },
                );
            }
        }
    }

    if prune {
        let mut live: HashSet<&str> = HashSet::new();
        for s in samples.values() {
            live.insert(&s.image_id);
            if let Some(owner) = dataset.caption_owner(&s.caption_id) {
                live.insert(owner);
            }
        }
        let live: HashSet<String> = live.into_iter().map(str::to_owned).collect();
        images.retain(|img| live.contains(&img.image_id));
        captions_by_image.retain(|id, _| live.contains(id));
    }
    Ok(Dataset::from_parts(split, images, captions_by_image, samples.into_values().collect())?)
}
