//! Run configuration. Values resolve as flags > `LEGALQA_*` environment
//! variables > TOML file > defaults, and the resolved set is frozen into the
//! run manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use legalqa_core::chunker::ChunkingConfig;
use legalqa_core::inference::{RetryPolicy, WireConfig};
use legalqa_core::metrics::{JudgeConfig, MetricKind, RougeVariant, Thresholds};
use legalqa_core::selection::{Combiner, DbscanParams};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "LEGALQA_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{key}` (from {origin}); valid keys: {}", KEYS.join(", "))]
    UnknownKey { key: String, origin: String },
    #[error("invalid value `{value}` for `{key}`: expected {expected}")]
    InvalidValue {
        key: String,
        value: String,
        expected: String,
    },
    #[error("malformed override `{0}`, expected key=value")]
    MalformedOverride(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Toml { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Basic,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Wire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Fallback,
    Wire,
}

/// Which documents answers are generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Verification,
    Test,
    All,
}

macro_rules! keyword_enum {
    ($ty:ty, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err([$($name),+].join(" | ")),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(PromptMode, "basic" => PromptMode::Basic, "complex" => PromptMode::Complex);
keyword_enum!(BackendKind, "oracle" => BackendKind::Oracle, "wire" => BackendKind::Wire);
keyword_enum!(EmbedderKind, "fallback" => EmbedderKind::Fallback, "wire" => EmbedderKind::Wire);
keyword_enum!(
    EvalSplit,
    "verification" => EvalSplit::Verification,
    "test" => EvalSplit::Test,
    "all" => EvalSplit::All,
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub corpus: Option<PathBuf>,
    pub max_test_doc_words: usize,
    pub chunk_size: usize,
    pub augment: bool,
    pub prompt_mode: PromptMode,
    pub paraphrase_pool: Option<PathBuf>,
    pub technique_fragments: Option<PathBuf>,
    pub technique_search: bool,
    pub backend: BackendKind,
    pub chat_url: String,
    pub embed_url: String,
    pub model: String,
    pub embed_model: String,
    pub embedder: EmbedderKind,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub max_in_flight: usize,
    pub single_message: bool,
    pub max_prompt_chars: Option<usize>,
    pub epsilon: f64,
    pub min_points: usize,
    pub combiner: Combiner,
    pub metric: MetricKind,
    pub rouge_variant: RougeVariant,
    pub rouge_threshold: f64,
    pub meteor_threshold: f64,
    pub cosine_threshold: f64,
    pub eval_split: EvalSplit,
}

pub const KEYS: &[&str] = &[
    "corpus",
    "max_test_doc_words",
    "chunk_size",
    "augment",
    "prompt_mode",
    "paraphrase_pool",
    "technique_fragments",
    "technique_search",
    "backend",
    "chat_url",
    "embed_url",
    "model",
    "embed_model",
    "embedder",
    "temperature",
    "timeout_secs",
    "max_retries",
    "retry_base_ms",
    "max_in_flight",
    "single_message",
    "max_prompt_chars",
    "epsilon",
    "min_points",
    "combiner",
    "metric",
    "rouge_variant",
    "rouge_threshold",
    "meteor_threshold",
    "cosine_threshold",
    "eval_split",
];

impl Default for Config {
    fn default() -> Self {
        let wire = WireConfig::default();
        let thresholds = Thresholds::<f64>::default();
        let dbscan = DbscanParams::<f64>::default();
        Self {
            corpus: None,
            max_test_doc_words: legalqa_core::corpus::DEFAULT_MAX_TEST_DOC_WORDS,
            chunk_size: legalqa_core::chunker::DEFAULT_CHUNK_SIZE,
            augment: true,
            prompt_mode: PromptMode::Complex,
            paraphrase_pool: None,
            technique_fragments: None,
            technique_search: false,
            backend: BackendKind::Wire,
            chat_url: wire.chat_url,
            embed_url: wire.embed_url,
            model: wire.model,
            embed_model: wire.embed_model,
            embedder: EmbedderKind::Fallback,
            temperature: 0.0,
            timeout_secs: wire.timeout.as_secs(),
            max_retries: wire.retry.max_retries,
            retry_base_ms: wire.retry.base_delay.as_millis() as u64,
            max_in_flight: wire.max_in_flight,
            single_message: wire.single_message,
            max_prompt_chars: None,
            epsilon: dbscan.epsilon,
            min_points: dbscan.min_points,
            combiner: Combiner::Product,
            metric: MetricKind::Cosine,
            rouge_variant: RougeVariant::RougeL,
            rouge_threshold: thresholds.rouge,
            meteor_threshold: thresholds.meteor,
            cosine_threshold: thresholds.cosine,
            eval_split: EvalSplit::Verification,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| {
        let detail = e.to_string();
        ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            expected: if detail.contains('|') {
                detail
            } else {
                expected.to_string()
            },
        }
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
            expected: "a boolean".into(),
        }),
    }
}

fn optional(value: &str) -> Option<&str> {
    let v = value.trim();
    (!v.is_empty() && v != "none").then_some(v)
}

impl Config {
    /// Applies one textual key/value. `origin` is only used in error messages.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        const INT: &str = "a non-negative integer";
        const REAL: &str = "a number";
        match key {
            "corpus" => self.corpus = optional(value).map(PathBuf::from),
            "max_test_doc_words" => self.max_test_doc_words = parse(key, value, INT)?,
            "chunk_size" => self.chunk_size = parse(key, value, INT)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "prompt_mode" => self.prompt_mode = parse(key, value, "")?,
            "paraphrase_pool" => self.paraphrase_pool = optional(value).map(PathBuf::from),
            "technique_fragments" => self.technique_fragments = optional(value).map(PathBuf::from),
            "technique_search" => self.technique_search = parse_bool(key, value)?,
            "backend" => self.backend = parse(key, value, "")?,
            "chat_url" => self.chat_url = value.trim().to_string(),
            "embed_url" => self.embed_url = value.trim().to_string(),
            "model" => self.model = value.trim().to_string(),
            "embed_model" => self.embed_model = value.trim().to_string(),
            "embedder" => self.embedder = parse(key, value, "")?,
            "temperature" => self.temperature = parse(key, value, REAL)?,
            "timeout_secs" => self.timeout_secs = parse(key, value, INT)?,
            "max_retries" => self.max_retries = parse(key, value, INT)?,
            "retry_base_ms" => self.retry_base_ms = parse(key, value, INT)?,
            "max_in_flight" => self.max_in_flight = parse(key, value, INT)?,
            "single_message" => self.single_message = parse_bool(key, value)?,
            "max_prompt_chars" => {
                self.max_prompt_chars = optional(value).map(|v| parse(key, v, INT)).transpose()?
            }
            "epsilon" => self.epsilon = parse(key, value, REAL)?,
            "min_points" => self.min_points = parse(key, value, INT)?,
            "combiner" => self.combiner = parse(key, value, "product | icw-only | dbl-only")?,
            "metric" => self.metric = parse(key, value, "rouge | meteor | cosine")?,
            "rouge_variant" => self.rouge_variant = parse(key, value, "rouge-l | rouge-1")?,
            "rouge_threshold" => self.rouge_threshold = parse(key, value, REAL)?,
            "meteor_threshold" => self.meteor_threshold = parse(key, value, REAL)?,
            "cosine_threshold" => self.cosine_threshold = parse(key, value, REAL)?,
            "eval_split" => self.eval_split = parse(key, value, "")?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    origin: origin.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn apply_toml(&mut self, path: &Path) -> Result<(), ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let table: toml::Table = raw
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Toml {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let origin = path.display().to_string();
        for (key, value) in &table {
            let text = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_) => {
                    value.to_string()
                }
                other => {
                    return Err(ConfigError::InvalidValue {
                        key: key.clone(),
                        value: other.to_string(),
                        expected: "a scalar".into(),
                    })
                }
            };
            self.set(key, &text, &origin)?;
        }
        Ok(())
    }

    /// Reads `LEGALQA_<KEY>` variables. Prefixed variables that name no key
    /// are logged and skipped, since the environment is shared.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (name, value) in vars {
            let key = name[ENV_PREFIX.len()..].to_ascii_lowercase();
            if KEYS.contains(&key.as_str()) {
                self.set(&key, &value, &format!("environment variable {name}"))?;
            } else {
                log::warn!("ignoring {name}: not a configuration key");
            }
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedOverride(o.clone()))?;
            self.set(k.trim(), v, "command line")?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chunking()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.dbscan()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.temperature >= 0.0) {
            return invalid("temperature must be >= 0");
        }
        if self.max_in_flight == 0 {
            return invalid("max_in_flight must be >= 1");
        }
        for (name, t) in [
            ("rouge_threshold", self.rouge_threshold),
            ("meteor_threshold", self.meteor_threshold),
            ("cosine_threshold", self.cosine_threshold),
        ] {
            if !t.is_finite() {
                return invalid(&format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    /// Full resolution: defaults, then file, then environment, then flags.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut c = Config::default();
        if let Some(path) = file {
            c.apply_toml(path)?;
        }
        c.apply_env(env)?;
        c.apply_overrides(overrides)?;
        c.validate()?;
        Ok(c)
    }

    pub fn chunking(&self) -> ChunkingConfig {
        ChunkingConfig {
            chunk_size: self.chunk_size,
            augment: self.augment,
        }
    }

    pub fn dbscan(&self) -> DbscanParams<f64> {
        DbscanParams {
            epsilon: self.epsilon,
            min_points: self.min_points,
        }
    }

    pub fn judge(&self) -> JudgeConfig<f64> {
        JudgeConfig {
            thresholds: Thresholds {
                rouge: self.rouge_threshold,
                meteor: self.meteor_threshold,
                cosine: self.cosine_threshold,
            },
            gate: self.metric,
            rouge_variant: self.rouge_variant,
        }
    }

    pub fn wire(&self) -> WireConfig {
        WireConfig {
            chat_url: self.chat_url.clone(),
            embed_url: self.embed_url.clone(),
            model: self.model.clone(),
            embed_model: self.embed_model.clone(),
            timeout: Duration::from_secs(self.timeout_secs),
            retry: RetryPolicy {
                max_retries: self.max_retries,
                base_delay: Duration::from_millis(self.retry_base_ms),
                ..RetryPolicy::default()
            },
            max_in_flight: self.max_in_flight,
            single_message: self.single_message,
            max_prompt_chars: self.max_prompt_chars,
        }
    }

    /// Keys whose values differ between two configurations.
    pub fn diff(&self, other: &Config) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        KEYS.iter()
            .filter(|k| a.get(**k) != b.get(**k))
            .map(|k| k.to_string())
            .collect()
    }
}
