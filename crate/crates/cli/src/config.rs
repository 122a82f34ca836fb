//! Flat `key = value` configuration with CLI-flag overrides.
//!
//! Precedence: built-in defaults < config file < command-line flags. Every
//! command validates the settings it needs up front and reports all the
//! problems in one aggregated message before touching any data file.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use subfact::corpus::DatasetRule;
use subfact::encoder::{DEFAULT_EMBED_DIM, DEFAULT_VOCAB_DIM};
use subfact::reformulate::ReformulationMode;
use subfact::scoring::Aggregator;

use crate::errors::CliError;

/// Every knob a command can read, after defaults and overrides merged.
#[derive(Debug, Clone)]
pub struct Settings {
    // Input and artifact paths; commands state which ones they need.
    pub corpus: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub pools: Option<PathBuf>,
    pub articles: Option<PathBuf>,
    pub crime_map: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub steps_log: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    // Behaviour.
    pub mode: ReformulationMode,
    pub aggregator: Aggregator,
    pub rule: DatasetRule,
    pub seed: u64,
    pub vocab_dim: usize,
    pub embed_dim: usize,
    pub temperature: f64,
    pub alpha: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub case_loss: bool,
    pub subfact_loss: bool,
    /// Run-file tag; commands fall back to a descriptive default.
    pub tag: Option<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            corpus: None,
            qrels: None,
            pools: None,
            articles: None,
            crime_map: None,
            cache: None,
            index: None,
            embeddings: None,
            checkpoint: None,
            steps_log: None,
            run: None,
            metrics: None,
            mode: ReformulationMode::Kgcr,
            aggregator: Aggregator::MaxSimSum,
            rule: DatasetRule::LeCaRD,
            seed: 0,
            vocab_dim: DEFAULT_VOCAB_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            temperature: 0.01,
            alpha: 0.9,
            steps: 200,
            batch_size: 8,
            learning_rate: 0.05,
            case_loss: true,
            subfact_loss: true,
            tag: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| format!("key {key}: bad value {value:?}: {e}"))
}

impl Settings {
    /// Apply one `key = value` assignment from the config file.
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "qrels" => self.qrels = Some(PathBuf::from(value)),
            "pools" => self.pools = Some(PathBuf::from(value)),
            "articles" => self.articles = Some(PathBuf::from(value)),
            "crime_map" => self.crime_map = Some(PathBuf::from(value)),
            "cache" => self.cache = Some(PathBuf::from(value)),
            "index" => self.index = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "steps_log" => self.steps_log = Some(PathBuf::from(value)),
            "run" => self.run = Some(PathBuf::from(value)),
            "metrics" => self.metrics = Some(PathBuf::from(value)),
            "mode" => self.mode = parse_value(key, value)?,
            "aggregator" => self.aggregator = parse_value(key, value)?,
            "rule" => self.rule = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "vocab_dim" => self.vocab_dim = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "temperature" => self.temperature = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "case_loss" => self.case_loss = parse_value(key, value)?,
            "subfact_loss" => self.subfact_loss = parse_value(key, value)?,
            "tag" => self.tag = Some(value.to_string()),
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Load a config file on top of the defaults; all bad lines are
    /// reported together.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let content = fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut settings = Settings::default();
        let mut problems = Vec::new();
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    if let Err(problem) = settings.set(key.trim(), value.trim()) {
                        problems.push(format!("line {}: {problem}", idx + 1));
                    }
                }
                None => problems.push(format!("line {}: expected `key = value`", idx + 1)),
            }
        }
        if problems.is_empty() {
            Ok(settings)
        } else {
            Err(usage_report(
                &format!("config file {} has problems", path.display()),
                &problems,
            ))
        }
    }
}

/// Collect a command's precondition failures into one usage error.
pub fn usage_report(context: &str, problems: &[String]) -> CliError {
    let mut message = format!("{context}:");
    for problem in problems {
        message.push_str("\n  - ");
        message.push_str(problem);
    }
    CliError::Usage(message)
}

/// Record `name` as required; when set, also check the file exists.
pub fn require_path(
    problems: &mut Vec<String>,
    name: &str,
    value: &Option<PathBuf>,
    must_exist: bool,
) -> PathBuf {
    let flag = name.replace('_', "-");
    match value {
        Some(path) => {
            if must_exist && !path.exists() {
                problems.push(format!("{name}: path {} does not exist", path.display()));
            }
            path.clone()
        }
        None => {
            problems.push(format!("{name} is not set (config key `{name}` or --{flag})"));
            PathBuf::new()
        }
    }
}

/// Finish a validation pass: no problems, or one aggregated usage error.
pub fn finish_validation(command: &str, problems: Vec<String>) -> Result<(), CliError> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(usage_report(
            &format!("`{command}` cannot run with this configuration"),
            &problems,
        ))
    }
}
