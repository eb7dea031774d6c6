//! Image-captioning corpora: images, captions, samples and edit snapshots.
//!
//! A corpus file is a single JSON document:
//!
//! ```json
//! { "split": "train",
//!   "images": [ { "image_id": "...", "uri": "...",
//!                 "provenance": {"kind": "original"},
//!                 "captions": [ {"caption_id": "...", "text": "..."} ] } ] }
//! ```
//!
//! Without a `samples` array every `(image, caption)` pair becomes one sample whose
//! id is the caption id. Snapshots always write `samples` (and `epoch`) so edited
//! datasets round-trip; the action log goes to a sibling `<name>.actions.json`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curation::CurationAction;
use crate::metrics::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("schema violation at {record}: {message}")]
    Schema { record: String, message: String },
    #[error("dataset has no captions")]
    EmptyDataset,
}

impl DatasetError {
    pub(crate) fn schema(record: impl Into<String>, message: impl Into<String>) -> Self {
        DatasetError::Schema { record: record.into(), message: message.into() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.to_owned(), source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

/// Where an image came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Synthesized { prompt_id: String, seed: u64 },
}

impl Provenance {
    pub fn is_synthesized(&self) -> bool {
        matches!(self, Provenance::Synthesized { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub image_id: String,
    pub uri: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Caption {
    caption_id: String,
    text: String,
    token_count: usize,
}

impl Caption {
    pub fn new(caption_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let token_count = tokenize(&text).len();
        Self { caption_id: caption_id.into(), text, token_count }
    }

    pub fn caption_id(&self) -> &str {
        &self.caption_id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub image_id: String,
    pub caption_id: String,
}

/// An immutable, validated corpus.
#[derive(Clone, Debug)]
pub struct Dataset {
    split: Split,
    images: Vec<ImageAsset>,
    captions_by_image: BTreeMap<String, Vec<Caption>>,
    samples: Vec<Sample>,
    image_index: HashMap<String, usize>,
    // caption_id -> (owning image_id, position in that image's list)
    caption_index: HashMap<String, (String, usize)>,
    sample_index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.split == other.split
            && self.images == other.images
            && self.captions_by_image == other.captions_by_image
            && self.samples == other.samples
    }
}

impl Dataset {
    /// Builds a dataset from explicit parts, validating every invariant.
    ///
    /// Samples are re-sorted by `sample_id`. Images without an entry in
    /// `captions_by_image` own no captions (typical for synthesized assets).
    pub fn from_parts(
        split: Split,
        images: Vec<ImageAsset>,
        mut captions_by_image: BTreeMap<String, Vec<Caption>>,
        mut samples: Vec<Sample>,
    ) -> Result<Self, DatasetError> {
        let mut image_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if img.image_id.is_empty() {
                return Err(DatasetError::schema(format!("image #{i}"), "empty image_id"));
            }
            if img.uri.trim().is_empty() {
                return Err(DatasetError::schema(format!("image {}", img.image_id), "empty uri"));
            }
            if let Provenance::Synthesized { prompt_id, .. } = &img.provenance {
                if prompt_id.is_empty() {
                    return Err(DatasetError::schema(format!("image {}", img.image_id), "synthesized image without prompt_id"));
                }
            }
            if image_index.insert(img.image_id.clone(), i).is_some() {
                return Err(DatasetError::schema(format!("image {}", img.image_id), "duplicate image_id"));
            }
        }

        captions_by_image.retain(|_, caps| !caps.is_empty());
        let mut caption_index = HashMap::new();
        for (image_id, caps) in &captions_by_image {
            if !image_index.contains_key(image_id) {
                return Err(DatasetError::schema(format!("captions of {image_id}"), "captions reference a missing image"));
            }
            for (pos, cap) in caps.iter().enumerate() {
                if cap.caption_id.is_empty() {
                    return Err(DatasetError::schema(format!("caption #{pos} of image {image_id}"), "empty caption_id"));
                }
                if cap.text.trim().is_empty() {
                    return Err(DatasetError::schema(format!("caption {}", cap.caption_id), "caption text is empty"));
                }
                if caption_index.insert(cap.caption_id.clone(), (image_id.clone(), pos)).is_some() {
                    return Err(DatasetError::schema(format!("caption {}", cap.caption_id), "duplicate caption_id"));
                }
            }
        }

        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let mut sample_index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if !caption_index.contains_key(&s.caption_id) {
                return Err(DatasetError::schema(
                    format!("caption {} (sample {})", s.caption_id, s.sample_id),
                    "sample references a missing caption",
                ));
            }
            if !image_index.contains_key(&s.image_id) {
                return Err(DatasetError::schema(
                    format!("caption {} (sample {})", s.caption_id, s.sample_id),
                    format!("references missing image {}", s.image_id),
                ));
            }
            if sample_index.insert(s.sample_id.clone(), i).is_some() {
                return Err(DatasetError::schema(format!("sample {}", s.sample_id), "duplicate sample_id"));
            }
        }

        Ok(Self { split, images, captions_by_image, samples, image_index, caption_index, sample_index })
    }

    /// Builds a dataset with one sample per `(image, caption)` pair, sample id = caption id.
    pub fn from_images(split: Split, images: Vec<(ImageAsset, Vec<Caption>)>) -> Result<Self, DatasetError> {
        let mut assets = Vec::with_capacity(images.len());
        let mut captions_by_image = BTreeMap::new();
        let mut samples = Vec::new();
        for (asset, caps) in images {
            for cap in &caps {
                samples.push(Sample {
                    sample_id: cap.caption_id.clone(),
                    image_id: asset.image_id.clone(),
                    caption_id: cap.caption_id.clone(),
                });
            }
            if captions_by_image.insert(asset.image_id.clone(), caps).is_some() {
                return Err(DatasetError::schema(format!("image {}", asset.image_id), "duplicate image_id"));
            }
            assets.push(asset);
        }
        let ds = Self::from_parts(split, assets, captions_by_image, samples)?;
        let mut pairs = HashSet::with_capacity(ds.samples.len());
        for s in &ds.samples {
            if !pairs.insert((&s.image_id, &s.caption_id)) {
                return Err(DatasetError::schema(format!("sample {}", s.sample_id), "duplicate (image_id, caption_id) pair"));
            }
        }
        Ok(ds)
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &[ImageAsset] {
        &self.images
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn captions_by_image(&self) -> &BTreeMap<String, Vec<Caption>> {
        &self.captions_by_image
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageAsset> {
        self.image_index.get(image_id).map(|&i| &self.images[i])
    }

    pub fn sample(&self, sample_id: &str) -> Option<&Sample> {
        self.sample_index.get(sample_id).map(|&i| &self.samples[i])
    }

    /// Captions owned by an image, in list order (empty for synthesized assets).
    pub fn captions_of(&self, image_id: &str) -> &[Caption] {
        self.captions_by_image.get(image_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn caption(&self, caption_id: &str) -> Option<&Caption> {
        let (image_id, pos) = self.caption_index.get(caption_id)?;
        self.captions_by_image.get(image_id).map(|caps| &caps[*pos])
    }

    /// The image that owns a caption.
    pub fn caption_owner(&self, caption_id: &str) -> Option<&str> {
        self.caption_index.get(caption_id).map(|(img, _)| img.as_str())
    }

    pub fn caption_position(&self, caption_id: &str) -> Option<usize> {
        self.caption_index.get(caption_id).map(|(_, pos)| *pos)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.sample_id.as_str())
    }

    /// Number of distinct images referenced by samples.
    pub fn unique_sample_images(&self) -> usize {
        self.samples.iter().map(|s| s.image_id.as_str()).collect::<HashSet<_>>().len()
    }

    /// Decomposes into parts for deriving an edited dataset.
    pub(crate) fn into_parts(self) -> (Split, Vec<ImageAsset>, BTreeMap<String, Vec<Caption>>, Vec<Sample>) {
        (self.split, self.images, self.captions_by_image, self.samples)
    }

    fn to_file(&self, epoch: Option<u32>) -> CorpusFile {
        CorpusFile {
            split: self.split,
            epoch,
            images: self
                .images
                .iter()
                .map(|img| ImageRecord {
                    image_id: img.image_id.clone(),
                    uri: img.uri.clone(),
                    provenance: img.provenance.clone(),
                    captions: self
                        .captions_of(&img.image_id)
                        .iter()
                        .map(|c| CaptionRecord { caption_id: c.caption_id.clone(), text: c.text.clone() })
                        .collect(),
                })
                .collect(),
            samples: Some(self.samples.clone()),
        }
    }

    fn from_file(file: CorpusFile) -> Result<Self, DatasetError> {
        let split = file.split;
        let images: Vec<(ImageAsset, Vec<Caption>)> = file
            .images
            .into_iter()
            .map(|rec| {
                let caps = rec.captions.into_iter().map(|c| Caption::new(c.caption_id, c.text)).collect();
                (ImageAsset { image_id: rec.image_id, uri: rec.uri, provenance: rec.provenance }, caps)
            })
            .collect();
        match file.samples {
            None => Self::from_images(split, images),
            Some(samples) => {
                let mut assets = Vec::with_capacity(images.len());
                let mut captions_by_image = BTreeMap::new();
                for (asset, caps) in images {
                    if captions_by_image.insert(asset.image_id.clone(), caps).is_some() {
                        return Err(DatasetError::schema(format!("image {}", asset.image_id), "duplicate image_id"));
                    }
                    assets.push(asset);
                }
                Self::from_parts(split, assets, captions_by_image, samples)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epoch: Option<u32>,
    images: Vec<ImageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples: Option<Vec<Sample>>,
}

#[derive(Serialize, Deserialize)]
struct ImageRecord {
    image_id: String,
    uri: String,
    provenance: Provenance,
    captions: Vec<CaptionRecord>,
}

#[derive(Serialize, Deserialize)]
struct CaptionRecord {
    caption_id: String,
    text: String,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| {
        if e.is_data() {
            DatasetError::schema(path.display().to_string(), e.to_string())
        } else {
            DatasetError::Parse { path: path.to_owned(), message: e.to_string() }
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| DatasetError::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| DatasetError::io(path, e))
}

/// Loads a corpus file and checks it belongs to `split`.
pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset, DatasetError> {
    let file: CorpusFile = read_json(path)?;
    if file.split != split {
        return Err(DatasetError::schema("split", format!("file holds split {}, requested {split}", file.split)));
    }
    Dataset::from_file(file)
}

/// Writes a dataset as a corpus file (with explicit samples).
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    write_json(path, &dataset.to_file(None))
}

/// Dataset version `D_t` together with the actions that derived it from `D_{t-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSnapshot {
    pub epoch: u32,
    pub dataset: Dataset,
    pub actions: Vec<CurationAction>,
}

impl DatasetSnapshot {
    /// The unedited corpus.
    pub fn initial(dataset: Dataset) -> Self {
        Self { epoch: 0, dataset, actions: Vec::new() }
    }
}

/// `<dir>/<stem>.actions.json` for a snapshot path `<dir>/<stem>.json`.
pub fn actions_path(snapshot_path: &Path) -> PathBuf {
    let stem = snapshot_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    snapshot_path.with_file_name(format!("{stem}.actions.json"))
}

pub fn save_snapshot(snapshot: &DatasetSnapshot, path: &Path) -> Result<(), DatasetError> {
    write_json(path, &snapshot.dataset.to_file(Some(snapshot.epoch)))?;
    write_json(&actions_path(path), &snapshot.actions)
}

/// Loads a snapshot; a missing action file means no actions.
pub fn load_snapshot(path: &Path) -> Result<DatasetSnapshot, DatasetError> {
    let file: CorpusFile = read_json(path)?;
    let epoch = file.epoch.unwrap_or(0);
    let dataset = Dataset::from_file(file)?;
    let apath = actions_path(path);
    let actions = if apath.exists() { read_json(&apath)? } else { Vec::new() };
    Ok(DatasetSnapshot { epoch, dataset, actions })
}

/// Word-count distribution of a corpus' captions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    /// Mean token count, rounded to two decimals.
    pub mean: f64,
    pub max: usize,
    /// token count -> number of captions (bins of width 1).
    pub histogram: BTreeMap<usize, usize>,
}

impl LengthStats {
    /// Histogram bins whose token count exceeds the mean.
    pub fn bins_above_mean(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.histogram.iter().filter(move |(&len, _)| len as f64 > self.mean).map(|(&l, &c)| (l, c))
    }
}

pub fn caption_length_stats(dataset: &Dataset) -> Result<LengthStats, DatasetError> {
    let mut histogram = BTreeMap::new();
    let mut total = 0usize;
    let mut count = 0usize;
    for cap in dataset.captions_by_image.values().flatten() {
        *histogram.entry(cap.token_count).or_insert(0) += 1;
        total += cap.token_count;
        count += 1;
    }
    if count == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let mean = (total as f64 / count as f64 * 100.0).round() / 100.0;
    let max = histogram.keys().next_back().copied().unwrap_or(0);
    Ok(LengthStats { count, mean, max, histogram })
}
