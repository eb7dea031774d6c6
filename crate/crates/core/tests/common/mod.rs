#![allow(dead_code)]

pub mod oracle;

use std::io::{BufRead, BufReader, Write};
use std::thread;

use curette::backend::client::{ClientConfig, RpcClient};
use curette::backend::server::{serve, BackendSet};
use curette::dataset::{Caption, Dataset, ImageAsset, Provenance, Split};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: &[&str] = &[
    "a", "dog", "cat", "man", "woman", "runs", "sits", "on", "the", "grass", "red", "ball", "street", "water", "near",
    "tree", "two", "small", "big", "plays",
];

pub fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let n = rng.random_range(1..=max_len);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `images` originals with `captions` captions each, texts drawn from [`WORDS`].
pub fn corpus(images: usize, captions: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = (0..images)
        .map(|i| {
            let id = format!("img{i:05}");
            let caps = (0..captions).map(|j| Caption::new(format!("{id}#{j}"), random_text(&mut rng, 8))).collect();
            (ImageAsset { image_id: id.clone(), uri: format!("orig/{id}.png"), provenance: Provenance::Original }, caps)
        })
        .collect();
    Dataset::from_images(Split::Train, parts).unwrap()
}

/// Like [`corpus`] but with a random number of captions (1..=max_captions) per image.
pub fn ragged_corpus(rng: &mut ChaCha8Rng, max_images: usize, max_captions: usize) -> Dataset {
    let images = rng.random_range(1..=max_images);
    let parts = (0..images)
        .map(|i| {
            let id = format!("img{i:03}");
            let n = rng.random_range(1..=max_captions);
            let caps = (0..n).map(|j| Caption::new(format!("{id}#{j}"), random_text(rng, 8))).collect();
            (ImageAsset { image_id: id.clone(), uri: format!("orig/{id}.png"), provenance: Provenance::Original }, caps)
        })
        .collect();
    Dataset::from_images(Split::Train, parts).unwrap()
}

/// Serves `set` on a background thread over in-memory pipes.
pub fn served(set: BackendSet, config: ClientConfig) -> RpcClient {
    let (req_r, req_w) = std::io::pipe().unwrap();
    let (resp_r, resp_w) = std::io::pipe().unwrap();
    thread::spawn(move || {
        let _ = serve(&set, BufReader::new(req_r), resp_w);
    });
    RpcClient::connect(BufReader::new(resp_r), req_w, config).unwrap()
}

/// A raw backend: sends `handshake` then hands the request lines and the
/// response writer to `body`.
pub fn scripted<F>(handshake: &str, config: ClientConfig, body: F) -> Result<RpcClient, curette::backend::BackendError>
where
    F: FnOnce(&mut dyn Iterator<Item = String>, &mut dyn Write) + Send + 'static,
{
    let (req_r, req_w) = std::io::pipe().unwrap();
    let (resp_r, mut resp_w) = std::io::pipe().unwrap();
    let handshake = handshake.to_owned();
    thread::spawn(move || {
        writeln!(resp_w, "{handshake}").unwrap();
        resp_w.flush().unwrap();
        let mut lines = BufReader::new(req_r).lines().map_while(Result::ok);
        body(&mut lines, &mut resp_w);
    });
    RpcClient::connect(BufReader::new(resp_r), req_w, config)
}

/// Candidate and reference texts keyed by image id.
pub struct MetricCorpus {
    pub candidates: std::collections::BTreeMap<String, String>,
    pub references: std::collections::BTreeMap<String, Vec<String>>,
}

impl MetricCorpus {
    pub fn pairs(&self) -> Vec<(String, Vec<String>)> {
        self.candidates.iter().map(|(k, c)| (c.clone(), self.references[k].clone())).collect()
    }
}

/// Up to 20 images with up to 5 references of up to 8 tokens from a 6-word
/// vocabulary, so n-gram overlaps are common. Candidates may be empty.
pub fn random_metric_corpus(rng: &mut ChaCha8Rng) -> MetricCorpus {
    const VOCAB: &[&str] = &["a", "dog", "cat", "runs", "on", "grass"];
    let sentence = |rng: &mut ChaCha8Rng, min: usize| -> String {
        let n = rng.random_range(min..=8);
        (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let images = rng.random_range(1..=20);
    let mut candidates = std::collections::BTreeMap::new();
    let mut references = std::collections::BTreeMap::new();
    for i in 0..images {
        let id = format!("i{i:02}");
        let n_refs = rng.random_range(1..=5);
        let refs: Vec<String> = (0..n_refs).map(|_| sentence(rng, 1)).collect();
        let cand = if rng.random_bool(0.2) { refs[rng.random_range(0..n_refs)].clone() } else { sentence(rng, 0) };
        candidates.insert(id.clone(), cand);
        references.insert(id, refs);
    }
    MetricCorpus { candidates, references }
}

/// Largest absolute difference between the library and the naive oracles over
/// every per-image and corpus value of every metric.
pub fn oracle_gap(corpus: &MetricCorpus) -> f64 {
    use curette::metrics::{score_corpus, MetricName};
    let report: curette::MetricReport =
        score_corpus(&corpus.candidates, &corpus.references, &MetricName::all()).unwrap();
    let pairs = corpus.pairs();
    let cider = oracle::cider(&pairs);
    let bleu_names = [MetricName::Bleu1, MetricName::Bleu2, MetricName::Bleu3, MetricName::Bleu4];
    let mut gap = 0.0f64;
    let mut track = |got: f64, want: f64| {
        gap = gap.max((got - want).abs());
        if got.is_nan() != want.is_nan() {
            gap = f64::INFINITY;
        }
    };
    let (mut rouge_sum, mut meteor_sum) = (0.0, 0.0);
    for (idx, (id, cand)) in corpus.candidates.iter().enumerate() {
        let refs = &corpus.references[id];
        let row = &report.per_sample[id];
        let b = oracle::sentence_bleu(cand, refs);
        for (k, name) in bleu_names.iter().enumerate() {
            track(row[name], b[k]);
        }
        let r = oracle::rouge_l(cand, refs);
        let m = oracle::meteor_lite(cand, refs);
        track(row[&MetricName::RougeL], r);
        track(row[&MetricName::MeteorLite], m);
        track(row[&MetricName::Cider], cider[idx]);
        rouge_sum += r;
        meteor_sum += m;
    }
    let n = pairs.len() as f64;
    let cb = oracle::corpus_bleu(&pairs);
    for (k, name) in bleu_names.iter().enumerate() {
        track(report.corpus[name], cb[k]);
    }
    track(report.corpus[&MetricName::RougeL], rouge_sum / n);
    track(report.corpus[&MetricName::MeteorLite], meteor_sum / n);
    track(report.corpus[&MetricName::Cider], cider.iter().sum::<f64>() / n);
    gap
}

/// Generator that answers with the requested path without writing anything.
#[derive(Default)]
pub struct NullGenerator {
    pub calls: std::sync::atomic::AtomicUsize,
}

impl curette::backend::ImageGenerator for NullGenerator {
    fn generate_image(
        &self,
        request: &curette::backend::GenerateRequest,
    ) -> Result<curette::backend::GeneratedImage, curette::backend::BackendError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Ok(curette::backend::GeneratedImage { image_uri: request.out_uri.clone() })
    }
}

pub fn generation<'a>(generator: &'a dyn curette::backend::ImageGenerator, cache_dir: &std::path::Path, seed: u64) -> curette::curation::Generation<'a> {
    curette::curation::Generation {
        generator,
        embedder: None,
        prompt: curette::promptgen::PromptSpec::default(),
        cache_dir: cache_dir.to_owned(),
        rng_seed: seed,
        max_in_flight: 4,
    }
}

/// Ledger holding one epoch of uniform random losses for every sample.
pub fn random_ledger(dataset: &Dataset, epoch: u32, rng: &mut ChaCha8Rng) -> curette::LossLedger {
    let records = dataset
        .sample_ids()
        .map(|id| curette::LossRecord { sample_id: id.to_owned(), epoch, loss: rng.random_range(0.0..5.0) })
        .collect();
    let mut ledger = curette::LossLedger::new();
    ledger.record_epoch(epoch, records, dataset.sample_ids()).unwrap();
    ledger
}

/// Every file under `dir` (recursively) keyed by relative path.
pub fn dir_contents(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Runs `f` twice against the same directory path, moving the first result
/// aside, and returns both directory listings. Paths are embedded in image
/// URIs, so byte comparisons need a fixed location.
pub fn twice_in_place(
    dir: &std::path::Path,
    mut f: impl FnMut(),
) -> (std::collections::BTreeMap<String, Vec<u8>>, std::collections::BTreeMap<String, Vec<u8>>) {
    f();
    let first = dir_contents(dir);
    let aside = dir.with_extension("first");
    std::fs::rename(dir, &aside).unwrap();
    f();
    let second = dir_contents(dir);
    std::fs::remove_dir_all(&aside).unwrap();
    (first, second)
}
