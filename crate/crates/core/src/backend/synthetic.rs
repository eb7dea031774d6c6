//! Deterministic in-process backends for tests, dry runs and the synthetic
//! curation harness.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Captioner, Embedder, GenerateRequest, GeneratedImage, ImageGenerator, ImageTextPair, LossOracle,
    LossQuery, PairScorer, SampleLoss,
};
use crate::hashing::hash64;
use crate::metrics::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

/// Parameters of the two-population synthetic loss model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticLossConfig {
    pub seed: u64,
    pub noisy_fraction: f64,
    pub clean: Gaussian,
    pub noisy: Gaussian,
    /// Multiplier applied once per epoch to the losses of clean samples.
    pub decay: f64,
    /// Standard deviation of per-epoch noise added on top of a sample's base loss.
    pub jitter_std: f64,
}

impl Default for SyntheticLossConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            noisy_fraction: 0.05,
            clean: Gaussian { mean: 1.0, std: 0.25 },
            noisy: Gaussian { mean: 4.0, std: 0.5 },
            decay: 0.9,
            jitter_std: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
enum NoisySet {
    Fixed(HashSet<String>),
    /// Membership decided per sample id by hashing; used when the sample set is unknown.
    Hashed,
}

/// Loss oracle modelling a clean population whose losses shrink epoch over epoch
/// and a fixed "noisy" population that stays high.
///
/// Every sample has a base loss drawn once from its population, so a sample's
/// difficulty persists across epochs. Clean losses at epoch `t` are
/// `base * decay^t`; noisy losses stay at `base`. Losses are clamped at zero.
#[derive(Clone, Debug)]
pub struct SyntheticLossOracle {
    config: SyntheticLossConfig,
    noisy: NoisySet,
}

impl SyntheticLossOracle {
    /// Picks exactly `round(noisy_fraction * N)` noisy samples by a seeded shuffle
    /// of the sorted sample ids.
    pub fn new<'a>(config: SyntheticLossConfig, sample_ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut ids: Vec<&str> = sample_ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let count = (config.noisy_fraction.clamp(0.0, 1.0) * ids.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        ids.shuffle(&mut rng);
        let noisy = ids.into_iter().take(count).map(str::to_owned).collect();
        Self { config, noisy: NoisySet::Fixed(noisy) }
    }

    /// Decides noisiness per sample id by hash, without knowing the sample set.
    pub fn streaming(config: SyntheticLossConfig) -> Self {
        Self { config, noisy: NoisySet::Hashed }
    }

    pub fn config(&self) -> &SyntheticLossConfig {
        &self.config
    }

    pub fn is_noisy(&self, sample_id: &str) -> bool {
        match &self.noisy {
            NoisySet::Fixed(set) => set.contains(sample_id),
            NoisySet::Hashed => {
                let h = hash64(&[&self.config.seed.to_le_bytes(), b"noisy", sample_id.as_bytes()]);
                (h as f64 / u64::MAX as f64) < self.config.noisy_fraction
            }
        }
    }

    pub fn noisy_ids(&self) -> Option<Vec<String>> {
        match &self.noisy {
            NoisySet::Fixed(set) => {
                let mut v: Vec<String> = set.iter().cloned().collect();
                v.sort();
                Some(v)
            }
            NoisySet::Hashed => None,
        }
    }

    fn draw(&self, dist: Gaussian, key: &[&[u8]]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(hash64(key));
        match Normal::new(dist.mean, dist.std.max(0.0)) {
            Ok(n) => n.sample(&mut rng),
            Err(_) => dist.mean,
        }
    }

    /// Loss of a sample at an epoch.
    pub fn loss(&self, sample_id: &str, epoch: u32) -> f64 {
        let seed = self.config.seed.to_le_bytes();
        let noisy = self.is_noisy(sample_id);
        let dist = if noisy { self.config.noisy } else { self.config.clean };
        let base = self.draw(dist, &[&seed, b"base", sample_id.as_bytes()]);
        let mut loss = if noisy { base } else { base * self.config.decay.powi(epoch as i32) };
        if self.config.jitter_std > 0.0 {
            let jitter = Gaussian { mean: 0.0, std: self.config.jitter_std };
            loss += self.draw(jitter, &[&seed, b"jitter", sample_id.as_bytes(), &epoch.to_le_bytes()]);
        }
        loss.max(0.0)
    }
}

impl LossOracle for SyntheticLossOracle {
    fn loss_batch(&self, epoch: u32, samples: &[LossQuery]) -> Result<Vec<SampleLoss>, BackendError> {
        if samples.is_empty() {
            return Err(BackendError::remote("empty_batch", "loss_batch needs at least one sample"));
        }
        Ok(samples
            .iter()
            .map(|q| SampleLoss { sample_id: q.sample_id.clone(), loss: self.loss(&q.sample_id, epoch) })
            .collect())
    }
}

/// Writes a small solid-colour PNG whose colour encodes `hash(prompt_id, seed)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubGenerator;

pub const STUB_IMAGE_SIZE: u32 = 8;

impl StubGenerator {
    pub fn color(prompt_id: &str, seed: u64) -> [u8; 3] {
        let h = hash64(&[prompt_id.as_bytes(), &seed.to_le_bytes()]).to_le_bytes();
        [h[0], h[1], h[2]]
    }

    fn write_png(path: &Path, rgb: [u8; 3]) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut encoder = png::Encoder::new(BufWriter::new(File::create(path)?), STUB_IMAGE_SIZE, STUB_IMAGE_SIZE);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(std::io::Error::other)?;
        let pixels: Vec<u8> = rgb.iter().copied().cycle().take((STUB_IMAGE_SIZE * STUB_IMAGE_SIZE * 3) as usize).collect();
        writer.write_image_data(&pixels).map_err(std::io::Error::other)?;
        writer.finish().map_err(std::io::Error::other)
    }
}

impl ImageGenerator for StubGenerator {
    fn generate_image(&self, request: &GenerateRequest) -> Result<GeneratedImage, BackendError> {
        let rgb = Self::color(&request.prompt_id, request.seed);
        Self::write_png(Path::new(&request.out_uri), rgb)
            .map_err(|e| BackendError::remote("generation_failed", format!("cannot write {}: {e}", request.out_uri)))?;
        Ok(GeneratedImage { image_uri: request.out_uri.clone() })
    }
}

/// Returns the original image of the prompt's source image (round-trip upper bound).
#[derive(Clone, Debug, Default)]
pub struct IdentityGenerator {
    uris: BTreeMap<String, String>,
}

impl IdentityGenerator {
    pub fn new(uris: BTreeMap<String, String>) -> Self {
        Self { uris }
    }

    pub fn from_dataset(dataset: &crate::dataset::Dataset) -> Self {
        Self::new(dataset.images().iter().map(|i| (i.image_id.clone(), i.uri.clone())).collect())
    }
}

impl ImageGenerator for IdentityGenerator {
    fn generate_image(&self, request: &GenerateRequest) -> Result<GeneratedImage, BackendError> {
        let id = request
            .source_image_id
            .as_deref()
            .ok_or_else(|| BackendError::remote("generation_failed", "identity generator needs source_image_id"))?;
        self.uris
            .get(id)
            .map(|uri| GeneratedImage { image_uri: uri.clone() })
            .ok_or_else(|| BackendError::remote("generation_failed", format!("no image registered for {id}")))
    }
}

/// Fails every request with the given error.
#[derive(Clone, Debug)]
pub struct FailingGenerator {
    pub error: BackendError,
}

impl Default for FailingGenerator {
    fn default() -> Self {
        Self { error: BackendError::remote("generation_failed", "stub generator always fails") }
    }
}

impl ImageGenerator for FailingGenerator {
    fn generate_image(&self, _request: &GenerateRequest) -> Result<GeneratedImage, BackendError> {
        Err(self.error.clone())
    }
}

#[derive(Clone, Debug)]
pub struct ConstantCaptioner(pub String);

impl Captioner for ConstantCaptioner {
    fn caption_batch(&self, image_uris: &[String]) -> Result<Vec<String>, BackendError> {
        if image_uris.is_empty() {
            return Err(BackendError::remote("empty_batch", "no images"));
        }
        Ok(vec![self.0.clone(); image_uris.len()])
    }
}

/// Looks captions up by image uri, or by a prompt-id prefix of the uri's file name
/// (the naming used for generated images).
#[derive(Clone, Debug, Default)]
pub struct ReferenceEchoCaptioner {
    by_uri: BTreeMap<String, String>,
    by_prompt_id: BTreeMap<String, String>,
}

impl ReferenceEchoCaptioner {
    pub fn new(by_uri: BTreeMap<String, String>, by_prompt_id: BTreeMap<String, String>) -> Self {
        Self { by_uri, by_prompt_id }
    }

    pub fn by_uri(map: BTreeMap<String, String>) -> Self {
        Self { by_uri: map, by_prompt_id: BTreeMap::new() }
    }

    pub fn by_prompt_id(map: BTreeMap<String, String>) -> Self {
        Self { by_uri: BTreeMap::new(), by_prompt_id: map }
    }

    fn lookup(&self, uri: &str) -> Option<&String> {
        if let Some(c) = self.by_uri.get(uri) {
            return Some(c);
        }
        let name = Path::new(uri).file_name()?.to_str()?;
        let prompt_id = name.split(['-', '.']).next()?;
        self.by_prompt_id.get(prompt_id)
    }
}

impl Captioner for ReferenceEchoCaptioner {
    fn caption_batch(&self, image_uris: &[String]) -> Result<Vec<String>, BackendError> {
        if image_uris.is_empty() {
            return Err(BackendError::remote("empty_batch", "no images"));
        }
        image_uris
            .iter()
            .map(|u| self.lookup(u).cloned().ok_or_else(|| BackendError::remote("unknown_image", u.clone())))
            .collect()
    }
}

/// L2-normalised hashed bag of words over the canonical tokenizer.
#[derive(Clone, Copy, Debug)]
pub struct HashedBagOfWords {
    pub dim: usize,
}

pub const DEFAULT_EMBED_DIM: usize = 256;

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self { dim: DEFAULT_EMBED_DIM }
    }
}

impl HashedBagOfWords {
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim.max(1)];
        for tok in tokenize(text).tokens() {
            let bucket = (hash64(&[tok.as_bytes()]) % v.len() as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashedBagOfWords {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::remote("empty_batch", "no texts"));
        }
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// Deterministic stand-in for an image-text scorer: a hash of the pair mapped into `[0, 1)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct HashedPairScorer;

impl PairScorer for HashedPairScorer {
    fn pair_score_batch(&self, pairs: &[ImageTextPair]) -> Result<Vec<f64>, BackendError> {
        if pairs.is_empty() {
            return Err(BackendError::remote("empty_batch", "no pairs"));
        }
        Ok(pairs
            .iter()
            .map(|p| (hash64(&[p.image_uri.as_bytes(), p.text.as_bytes()]) >> 11) as f64 / (1u64 << 53) as f64)
            .collect())
    }
}
