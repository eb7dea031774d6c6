//! Resolves backend specs per role into trait objects.
//!
//! A spec is either a shell command speaking the `curette/1` protocol on stdio
//! or one of the in-process builtins:
//!
//! - `builtin:synthetic[?seed=N&noisy_fraction=F&decay=D&jitter=J]` loss oracle
//! - `builtin:stub` generator writing placeholder PNGs, `builtin:identity`, `builtin:failing`
//! - `builtin:echo` captioner returning a reference caption, `builtin:constant?text=...`
//! - `builtin:bow[?dim=N]` hashed bag-of-words embedder
//!
//! Lookup order for a role: command-line flag, `CURETTE_BACKEND_CMD_<ROLE>`,
//! `CURETTE_BACKEND_CMD`, then the run config's `backends` map.

use std::collections::BTreeMap;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use curette::backend::client::{ClientConfig, ProcessBackend};
use curette::backend::synthetic::{
    ConstantCaptioner, FailingGenerator, HashedBagOfWords, IdentityGenerator, ReferenceEchoCaptioner,
    StubGenerator, SyntheticLossConfig, SyntheticLossOracle,
};
use curette::backend::{Captioner, Embedder, ImageGenerator, LossOracle};
use curette::dataset::Dataset;
use curette::orchestrator::Role;

pub const ENV_ALL: &str = "CURETTE_BACKEND_CMD";

pub fn env_var(role: Role) -> String {
    format!("{ENV_ALL}_{}", role.as_str().to_ascii_uppercase())
}

/// Backend command or builtin for `role`, if any source names one.
pub fn resolve_spec(role: Role, flag: Option<&str>, config: &BTreeMap<Role, String>) -> Option<String> {
    flag.map(str::to_owned)
        .or_else(|| std::env::var(env_var(role)).ok().filter(|s| !s.trim().is_empty()))
        .or_else(|| std::env::var(ENV_ALL).ok().filter(|s| !s.trim().is_empty()))
        .or_else(|| config.get(&role).cloned())
}

struct Builtin {
    name: String,
    params: BTreeMap<String, String>,
}

fn parse_builtin(spec: &str) -> Option<Builtin> {
    let rest = spec.trim().strip_prefix("builtin:")?;
    let (name, query) = rest.split_once('?').unwrap_or((rest, ""));
    let params = query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            (k.to_owned(), v.to_owned())
        })
        .collect();
    Some(Builtin { name: name.to_owned(), params })
}

impl Builtin {
    fn param<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.params
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("builtin:{} parameter {key}={v}: {e}", self.name)))
            .transpose()
    }
}

/// Context builtins may need: the corpus and seed of the command being run.
#[derive(Default)]
pub struct BuiltinContext<'a> {
    pub dataset: Option<&'a Dataset>,
    pub seed: u64,
    /// Reference captions keyed by prompt id, for `builtin:echo` in round trips.
    pub echo_by_prompt: BTreeMap<String, String>,
}

#[derive(Default)]
pub struct Backends {
    processes: BTreeMap<String, Arc<ProcessBackend>>,
    client: ClientConfig,
}

impl Backends {
    pub fn new(client: ClientConfig) -> Self {
        Self { processes: BTreeMap::new(), client }
    }

    fn process(&mut self, command: &str) -> Result<Arc<ProcessBackend>> {
        if let Some(p) = self.processes.get(command) {
            return Ok(p.clone());
        }
        let p = Arc::new(
            ProcessBackend::spawn(command, self.client.clone()).with_context(|| format!("starting backend `{command}`"))?,
        );
        self.processes.insert(command.to_owned(), p.clone());
        Ok(p)
    }

    pub fn loss(&mut self, spec: &str, ctx: &BuiltinContext<'_>) -> Result<Arc<dyn LossOracle>> {
        let Some(b) = parse_builtin(spec) else { return Ok(self.process(spec)?) };
        match b.name.as_str() {
            "synthetic" => {
                let defaults = SyntheticLossConfig::default();
                let config = SyntheticLossConfig {
                    seed: b.param("seed")?.unwrap_or(ctx.seed),
                    noisy_fraction: b.param("noisy_fraction")?.unwrap_or(defaults.noisy_fraction),
                    decay: b.param("decay")?.unwrap_or(defaults.decay),
                    jitter_std: b.param("jitter")?.unwrap_or(defaults.jitter_std),
                    ..defaults
                };
                Ok(match ctx.dataset {
                    Some(ds) => Arc::new(SyntheticLossOracle::new(config, ds.sample_ids())),
                    None => Arc::new(SyntheticLossOracle::streaming(config)),
                })
            }
            other => bail!("builtin:{other} cannot serve the loss role"),
        }
    }

    pub fn generator(&mut self, spec: &str, ctx: &BuiltinContext<'_>) -> Result<Arc<dyn ImageGenerator>> {
        let Some(b) = parse_builtin(spec) else { return Ok(self.process(spec)?) };
        match b.name.as_str() {
            "stub" => Ok(Arc::new(StubGenerator)),
            "identity" => {
                let ds = ctx.dataset.ok_or_else(|| anyhow!("builtin:identity needs a dataset"))?;
                Ok(Arc::new(IdentityGenerator::from_dataset(ds)))
            }
            "failing" => Ok(Arc::new(FailingGenerator::default())),
            other => bail!("builtin:{other} cannot serve the generator role"),
        }
    }

    pub fn captioner(&mut self, spec: &str, ctx: &BuiltinContext<'_>) -> Result<Arc<dyn Captioner>> {
        let Some(b) = parse_builtin(spec) else { return Ok(self.process(spec)?) };
        match b.name.as_str() {
            "constant" => Ok(Arc::new(ConstantCaptioner(b.param("text")?.unwrap_or_else(|| "a picture".to_owned())))),
            "echo" => {
                let ds = ctx.dataset.ok_or_else(|| anyhow!("builtin:echo needs a dataset"))?;
                let by_uri = ds
                    .images()
                    .iter()
                    .filter_map(|i| ds.captions_of(&i.image_id).first().map(|c| (i.uri.clone(), c.text().to_owned())))
                    .collect();
                Ok(Arc::new(ReferenceEchoCaptioner::new(by_uri, ctx.echo_by_prompt.clone())))
            }
            other => bail!("builtin:{other} cannot serve the captioner role"),
        }
    }

    pub fn embedder(&mut self, spec: &str) -> Result<Arc<dyn Embedder>> {
        let Some(b) = parse_builtin(spec) else { return Ok(self.process(spec)?) };
        match b.name.as_str() {
            "bow" => Ok(Arc::new(HashedBagOfWords { dim: b.param("dim")?.unwrap_or(HashedBagOfWords::default().dim) })),
            other => bail!("builtin:{other} cannot serve the embedder role"),
        }
    }
}
