//! Run configuration: one TOML file describing dataset, schemes, corpus,
//! methods, backend and sandbox. Relative paths resolve against the
//! directory containing the config file.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendError, CompletionBackend, Decoding, EchoBackend, LiveBackend, LiveConfig, RecordingBackend, ReplayBackend, ScriptRule,
    ScriptedBackend,
};
use crate::evolution::{EvolutionMethod, PromptCorpus};
use crate::execution::datasets::{self, DatasetFormat};
use crate::execution::{SandboxPolicy, TaskInstance};
use crate::repr::Scheme;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub workflow: WorkflowConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub backend: BackendConfig,
    #[serde(default)]
    pub sandbox: SandboxPolicy,
    /// Directory the config was loaded from; relative paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "DatasetConfig::default_format")]
    pub format: String,
    /// Name reported in evaluation reports.
    #[serde(default = "DatasetConfig::default_id")]
    pub id: String,
    /// Tasks drawn (seeded) into the validation split; the rest form the
    /// test split. Without it both splits are the whole dataset.
    #[serde(default)]
    pub validation_size: Option<usize>,
}

impl DatasetConfig {
    fn default_format() -> String {
        "native".into()
    }

    fn default_id() -> String {
        "tasks".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkflowConfig {
    pub schemes: Vec<Scheme>,
    /// Template workflow file; its extension names the scheme. Bundled
    /// template when absent.
    pub template: Option<PathBuf>,
    /// Key into the corpus task descriptions (`lcb`, `humaneval`, `mbpp`).
    pub dataset_description: Option<String>,
    /// Literal description; takes precedence over `dataset_description`.
    pub task_description: Option<String>,
    pub code_producers: Option<Vec<String>>,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Pysteps],
            template: None,
            dataset_description: Some("lcb".into()),
            task_description: None,
            code_producers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub path: Option<PathBuf>,
    pub mutation_ids: Option<Vec<usize>>,
    /// Draw this many distinct mutation prompts with the run seed instead
    /// of listing ids.
    pub sample_mutations: Option<usize>,
    pub hyper_mutation_id: usize,
    pub thinking_style_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub methods: Vec<EvolutionMethod>,
    pub separator: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            methods: vec![EvolutionMethod::DE1],
            separator: crate::evolution::DEFAULT_SEPARATOR.into(),
            temperature: 0.7,
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n: usize,
    pub ks: Vec<usize>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_iterations: usize,
    /// Workflow document to evaluate; its extension names the scheme.
    pub workflow: Option<PathBuf>,
    /// Directory of `<agent>.prompt.txt` files.
    pub agents: Option<PathBuf>,
    pub split: Split,
    /// Also run the single-agent baseline and write a comparison.
    pub compare_baseline: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 10,
            ks: crate::evaluation::DEFAULT_KS.to_vec(),
            temperature: 1.0,
            max_tokens: 2048,
            max_iterations: 3,
            workflow: None,
            agents: None,
            split: Split::Test,
            compare_baseline: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
    Scripted,
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "BackendConfig::default_model")]
    pub model: String,
    /// Recorded transcript for `replay`.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    /// JSON rules file for `scripted`: `{"rules": [...], "fallback": "..."}`.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub live: LiveConfig,
}

impl BackendConfig {
    fn default_model() -> String {
        Decoding::default().model
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    rules: Vec<ScriptRule>,
    #[serde(default)]
    fallback: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.workflow.schemes.is_empty() {
            return Err(ConfigError::Invalid("workflow.schemes is empty".into()));
        }
        if self.evolution.methods.is_empty() {
            return Err(ConfigError::Invalid("evolution.methods is empty".into()));
        }
        if self.eval.n == 0 || self.eval.ks.is_empty() {
            return Err(ConfigError::Invalid("eval.n and eval.ks must be non-empty".into()));
        }
        if let Some(k) = self.eval.ks.iter().find(|&&k| k == 0 || k > self.eval.n) {
            return Err(ConfigError::Invalid(format!(
                "eval.ks contains {k}, outside 1..={}",
                self.eval.n
            )));
        }
        self.sandbox.check().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn existing(&self, p: &Path, what: &str) -> Result<PathBuf, ConfigError> {
        let full = self.resolve(p);
        if !full.exists() {
            return Err(ConfigError::Input {
                path: full,
                message: format!("{what} not found"),
            });
        }
        Ok(full)
    }

    /// Hash of the resolved config; the output directory is not part of it.
    pub fn fingerprint(&self) -> String {
        crate::backend::hex_digest(self.resolved_json().as_bytes())
    }

    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn corpus(&self) -> Result<PromptCorpus, ConfigError> {
        match &self.corpus.path {
            None => Ok(PromptCorpus::bundled()),
            Some(p) => {
                let full = self.existing(p, "corpus file")?;
                PromptCorpus::load(&full).map_err(|e| ConfigError::Input {
                    path: full,
                    message: e.to_string(),
                })
            }
        }
    }

    /// Mutation prompt ids for this run: listed, sampled with the seed, or
    /// just the first one.
    pub fn mutation_ids(&self, corpus: &PromptCorpus) -> Result<Vec<usize>, ConfigError> {
        let len = corpus.mutation_prompts.len();
        let ids = match (&self.corpus.mutation_ids, self.corpus.sample_mutations) {
            (Some(ids), _) => ids.clone(),
            (None, Some(k)) => {
                if k == 0 || k > len {
                    return Err(ConfigError::Invalid(format!("corpus.sample_mutations must be in 1..={len}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut all: Vec<usize> = (0..len).collect();
                all.shuffle(&mut rng);
                let mut picked = all[..k].to_vec();
                picked.sort_unstable();
                picked
            }
            (None, None) => vec![0],
        };
        if ids.is_empty() {
            return Err(ConfigError::Invalid("corpus.mutation_ids is empty".into()));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= len) {
            return Err(ConfigError::Invalid(format!(
                "mutation prompt id {bad} out of range (corpus has {len})"
            )));
        }
        Ok(ids)
    }

    pub fn task_description(&self, corpus: &PromptCorpus) -> Result<String, ConfigError> {
        if let Some(t) = &self.workflow.task_description {
            return Ok(t.clone());
        }
        let id = self.workflow.dataset_description.as_deref().unwrap_or("lcb");
        corpus
            .task_description(id)
            .map(str::to_string)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Loads the dataset and splits it into (validation, test).
    pub fn tasks(&self) -> Result<(Vec<TaskInstance>, Vec<TaskInstance>), ConfigError> {
        let ds = self
            .dataset
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("this command needs a [dataset] section".into()))?;
        let path = self.existing(&ds.path, "dataset file")?;
        let format: DatasetFormat = ds
            .format
            .parse()
            .map_err(|e: datasets::DatasetError| ConfigError::Invalid(e.to_string()))?;
        let loaded = datasets::load(&path, format).map_err(|e| ConfigError::Input {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut tasks = loaded.tasks;
        if tasks.is_empty() {
            return Err(ConfigError::Input {
                path,
                message: "dataset has no usable tasks".into(),
            });
        }
        tasks.sort_by(|a, b| a.id.cmp(&b.id));
        match ds.validation_size {
            None => Ok((tasks.clone(), tasks)),
            Some(v) if v == 0 || v > tasks.len() => Err(ConfigError::Invalid(format!(
                "dataset.validation_size must be in 1..={}",
                tasks.len()
            ))),
            Some(v) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                tasks.shuffle(&mut rng);
                let test = tasks.split_off(v);
                let mut validation = tasks;
                validation.sort_by(|a, b| a.id.cmp(&b.id));
                let mut test = test;
                test.sort_by(|a, b| a.id.cmp(&b.id));
                Ok((validation, test))
            }
        }
    }

    pub fn backend(&self) -> Result<RecordingBackend, ConfigError> {
        let inner: Box<dyn CompletionBackend> = match self.backend.kind {
            BackendKind::Echo => Box::new(EchoBackend),
            BackendKind::Replay => {
                let p = self
                    .backend
                    .transcript
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("backend.transcript is required for replay".into()))?;
                let full = self.existing(p, "transcript")?;
                Box::new(ReplayBackend::from_file(&full).map_err(|e| ConfigError::Input {
                    path: full,
                    message: e.to_string(),
                })?)
            }
            BackendKind::Scripted => {
                let p = self
                    .backend
                    .rules
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("backend.rules is required for scripted".into()))?;
                let full = self.existing(p, "rules file")?;
                let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::Read {
                    path: full.clone(),
                    source,
                })?;
                let rules: RulesFile = serde_json::from_str(&text).map_err(|e| ConfigError::Input {
                    path: full,
                    message: e.to_string(),
                })?;
                Box::new(ScriptedBackend::from_rules(rules.rules, rules.fallback))
            }
            BackendKind::Live => Box::new(LiveBackend::new(self.backend.live.clone()).map_err(|e| match e {
                BackendError::Config(m) => ConfigError::Invalid(m),
                other => ConfigError::Invalid(other.to_string()),
            })?),
        };
        Ok(RecordingBackend::boxed(inner))
    }

    pub fn evolution_decoding(&self) -> Decoding {
        Decoding {
            model: self.backend.model.clone(),
            temperature: self.evolution.temperature,
            max_tokens: self.evolution.max_tokens,
            seed: None,
        }
    }

    pub fn sampling_decoding(&self) -> Decoding {
        Decoding {
            model: self.backend.model.clone(),
            temperature: self.eval.temperature,
            max_tokens: self.eval.max_tokens,
            seed: None,
        }
    }
}
