use std::path::PathBuf;

use super::CurationError;
use crate::backend::{BackendError, Embedder, GenerateRequest, ImageGenerator};
use crate::dataset::Caption;
use crate::hashing::derive_seed;
use crate::promptgen::{build_prompt, Prompt, PromptError, PromptSpec};

/// Image generation settings shared by ReplaceImg, static replacement, few-shot
/// augmentation and round-trip evaluation.
pub struct Generation<'a> {
    pub generator: &'a dyn ImageGenerator,
    pub embedder: Option<&'a dyn Embedder>,
    pub prompt: PromptSpec,
    /// Generated files land at `<cache_dir>/<prompt_id>-<seed as 16 hex>.png`;
    /// an existing file is reused instead of generating again.
    pub cache_dir: PathBuf,
    pub rng_seed: u64,
    pub max_in_flight: usize,
}

/// One image to synthesize. The seed is derived from `(rng_seed, key, epoch)`.
#[derive(Clone, Debug)]
pub struct SynthJob {
    pub key: String,
    pub epoch: u32,
    pub captions: Vec<Caption>,
    pub source_image_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesized {
    pub prompt: Prompt,
    pub seed: u64,
    pub image_uri: String,
}

/// Id given to the image synthesized for `key` at `epoch`.
pub fn synthesized_image_id(key: &str, epoch: u32) -> String {
    format!("syn/{key}/e{epoch}")
}

impl Generation<'_> {
    /// Synthesizes one image per job, in job order. Per-job failures come back as
    /// `Err(message)`; an unreachable backend aborts the whole call.
    pub fn synthesize(&self, jobs: &[SynthJob]) -> Result<Vec<Result<Synthesized, String>>, CurationError> {
        let mut prompts = Vec::with_capacity(jobs.len());
        for job in jobs {
            match build_prompt(&job.captions, self.prompt.strategy, self.prompt.styler.as_ref(), self.embedder) {
                Ok(p) => prompts.push(Ok(p)),
                Err(PromptError::Embedding(e)) if e.is_fatal() => return Err(CurationError::BackendUnavailable(e)),
                Err(PromptError::Embedding(e)) => prompts.push(Err(format!("embedding failed: {e}"))),
                Err(e) => return Err(e.into()),
            }
        }

        // Cache hits and prompt failures resolve locally; the rest go to the generator together.
        let mut results: Vec<Option<Result<Synthesized, BackendError>>> = Vec::with_capacity(jobs.len());
        let mut requests = Vec::new();
        let mut waiting = Vec::new();
        for (i, (job, prompt)) in jobs.iter().zip(prompts).enumerate() {
            let prompt = match prompt {
                Ok(p) => p,
                Err(m) => {
                    results.push(Some(Err(BackendError::remote("prompt_failed", m))));
                    continue;
                }
            };
            let seed = derive_seed(self.rng_seed, &job.key, job.epoch);
            let out = self.cache_dir.join(format!("{}-{seed:016x}.png", prompt.prompt_id));
            if out.is_file() {
                log::debug!("reusing cached image {}", out.display());
                results.push(Some(Ok(Synthesized { prompt, seed, image_uri: out.to_string_lossy().into_owned() })));
                continue;
            }
            requests.push(GenerateRequest {
                prompt: prompt.text.clone(),
                prompt_id: prompt.prompt_id.clone(),
                seed,
                out_uri: out.to_string_lossy().into_owned(),
                source_image_id: job.source_image_id.clone(),
            });
            waiting.push((i, prompt, seed));
            results.push(None);
        }
        let generated = match rayon::ThreadPoolBuilder::new().num_threads(self.max_in_flight.max(1)).build() {
            Ok(pool) => pool.install(|| self.generator.generate_many(&requests)),
            Err(_) => requests.iter().map(|r| self.generator.generate_image(r)).collect(),
        };
        for ((i, prompt, seed), r) in waiting.into_iter().zip(generated) {
            results[i] = Some(r.map(|img| Synthesized { prompt, seed, image_uri: img.image_uri }));
        }
        let results: Vec<Result<Synthesized, BackendError>> =
            results.into_iter().map(|r| r.expect("every job resolved")).collect();

        let mut out = Vec::with_capacity(results.len());
        for (job, r) in jobs.iter().zip(results) {
            match r {
                Ok(s) => out.push(Ok(s)),
                Err(e) if e.is_fatal() => return Err(CurationError::BackendUnavailable(e)),
                Err(e) => {
                    log::warn!("generation failed for {}: {e}", job.key);
                    out.push(Err(e.to_string()));
                }
            }
        }
        Ok(out)
    }
}
