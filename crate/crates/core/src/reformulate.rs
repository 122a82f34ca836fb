//! Knowledge-guided case reformulation: prompt an LLM to extract charged
//! crimes and law articles, reconcile them against the expert
//! crime→article map, then summarize the facts of each crime into a
//! cause/procedure/outcome sub-fact. Also hosts the naive one-shot
//! summarization mode and the on-disk reformulation cache.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LegalCase;
use crate::llm::{LlmClient, LlmError, LlmRequest};
use crate::text::{count_words, truncate_words};
use crate::{MAX_FIELD_WORDS, MAX_SUBFACTS};

/// System prompt of the crime/article extraction step.
pub const EXTRACTION_PROMPT: &str = "You are now a legal expert, and your task is to find all the crimes and law articles in the procuratorate's charges (or court judgments) from the provided case. The output format is one line each for crimes and law articles, two lines in total. Multiple crimes (law articles) are separated by semicolons.";

/// Header of the per-crime summarization prompt; the crime and article
/// slots are appended by [`summarization_prompt`].
pub const SUMMARIZATION_PROMPT_HEADER: &str = "You are now a legal expert, and you are good at analyzing lengthy legal case texts containing multiple circumstances of crime. Your task is to concisely summarize the causes, procedures, and outcomes associated with a specified crime, ensuring each part does not exceed 100 words.";

/// System prompt of the naive (crime-blind) summarization mode.
pub const NAIVE_SUMMARY_PROMPT: &str = "You are now a legal expert. Your task is to concisely summarize the causes, procedures, and outcomes of the provided case, ensuring each part does not exceed 100 words.";

/// Full system prompt of the summarization step for one crime-article pair.
pub fn summarization_prompt(pair: &CrimeArticlePair) -> String {
    let provisions: Vec<&str> = pair.articles.iter().map(|a| a.provision.as_str()).collect();
    format!(
        "{SUMMARIZATION_PROMPT_HEADER}\n\n[Crime]: {}\n\n[Law Articles]: {}",
        pair.crime,
        provisions.join("; ")
    )
}

#[derive(Debug, Error)]
pub enum ReformulateError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("case {case_id:?}: extraction response is not two non-empty lines: {response:?}")]
    ExtractionFormat { case_id: String, response: String },
    #[error("case {case_id:?}, crime {crime:?}: unusable summary response: {response:?}")]
    SummaryFormat {
        case_id: String,
        crime: String,
        response: String,
    },
    #[error("case {case_id:?}: no extracted crime survives the expert map")]
    NoUsableCrimes { case_id: String },
    #[error("case {case_id:?} has an empty fact section")]
    EmptyFact { case_id: String },
    #[error("article store is not a JSON object of article_id → provision: {reason}")]
    BadStore { reason: String },
    #[error("crime map is not a JSON object of crime → [article_id]: {reason}")]
    BadMap { reason: String },
    #[error("crime map lists article {article_id:?} (crime {crime:?}) absent from the store")]
    UnknownArticle { crime: String, article_id: String },
    #[error("crimes {first:?} and {second:?} collide after normalization")]
    CrimeCollision { first: String, second: String },
    #[error("invalid reformulated case {case_id:?}: {reason}")]
    InvalidCase { case_id: String, reason: String },
    #[error("cache line {line}: {source}")]
    CacheParse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("cache holds two entries for case {case_id:?} in mode {mode}")]
    DuplicateCacheEntry { case_id: String, mode: ReformulationMode },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A statute article: identifying title plus full provision text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawArticle {
    pub article_id: String,
    pub provision: String,
}

/// A charged crime together with the articles that define it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrimeArticlePair {
    pub crime: String,
    pub articles: Vec<LawArticle>,
}

/// A crime-titled snippet of one case: what led to the crime, how it was
/// carried out, and how it ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubFact {
    pub crime: String,
    pub cause: String,
    pub procedure: String,
    pub outcome: String,
    #[serde(skip, default)]
    pub source_case_id: String,
}

impl SubFact {
    /// All parts joined into one whitespace-separated text, the encoder's
    /// input.
    pub fn full_text(&self) -> String {
        [&self.crime, &self.cause, &self.procedure, &self.outcome]
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn validate(&self) -> Result<(), String> {
        if self.crime.trim().is_empty() {
            return Err("sub-fact with empty crime title".to_string());
        }
        let fields = [
            ("cause", &self.cause),
            ("procedure", &self.procedure),
            ("outcome", &self.outcome),
        ];
        if fields.iter().all(|(_, text)| text.trim().is_empty()) {
            return Err(format!("sub-fact {:?} has no content", self.crime));
        }
        for (name, text) in fields {
            if count_words(text) > MAX_FIELD_WORDS {
                return Err(format!(
                    "sub-fact {:?}: {name} exceeds {MAX_FIELD_WORDS} words",
                    self.crime
                ));
            }
        }
        Ok(())
    }
}

/// A case reduced to its ordered sub-facts (1 to 4, distinct crimes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReformulatedCase {
    pub case_id: String,
    pub subfacts: Vec<SubFact>,
}

impl ReformulatedCase {
    pub fn validate(&self) -> Result<(), ReformulateError> {
        let bad = |reason: String| ReformulateError::InvalidCase {
            case_id: self.case_id.clone(),
            reason,
        };
        if self.case_id.trim().is_empty() {
            return Err(bad("empty case id".to_string()));
        }
        if self.subfacts.is_empty() || self.subfacts.len() > MAX_SUBFACTS {
            return Err(bad(format!(
                "{} sub-facts, expected 1 to {MAX_SUBFACTS}",
                self.subfacts.len()
            )));
        }
        let mut seen = BTreeMap::new();
        for sf in &self.subfacts {
            sf.validate().map_err(bad)?;
            let key = crate::labeling::normalize_crime(&sf.crime);
            if let Some(prev) = seen.insert(key, sf.crime.clone()) {
                return Err(bad(format!(
                    "crimes {prev:?} and {:?} are not distinct",
                    sf.crime
                )));
            }
        }
        Ok(())
    }
}

/// Resolves article titles to provisions. JSON object on disk:
/// `{article_id: provision}`.
#[derive(Debug, Clone, Default)]
pub struct ArticleStore {
    entries: BTreeMap<String, String>,
}

impl ArticleStore {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ReformulateError> {
        let content = fs::read_to_string(path)?;
        let entries: BTreeMap<String, String> =
            serde_json::from_str(&content).map_err(|e| ReformulateError::BadStore {
                reason: e.to_string(),
            })?;
        Ok(Self { entries })
    }

    pub fn get(&self, article_id: &str) -> Option<LawArticle> {
        self.entries.get(article_id.trim()).map(|provision| LawArticle {
            article_id: article_id.trim().to_string(),
            provision: provision.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The expert crime→articles database. JSON object on disk:
/// `{crime: [article_id, ...]}`. Lookup is whitespace- and
/// case-insensitive on the crime name.
#[derive(Debug, Clone, Default)]
pub struct CrimeArticleMap {
    /// normalized crime → (display name, article ids)
    entries: BTreeMap<String, (String, Vec<String>)>,
}

impl CrimeArticleMap {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, Vec<String>)>,
        store: &ArticleStore,
    ) -> Result<Self, ReformulateError> {
        let mut map = BTreeMap::new();
        for (crime, articles) in entries {
            for article_id in &articles {
                if store.get(article_id).is_none() {
                    return Err(ReformulateError::UnknownArticle {
                        crime: crime.clone(),
                        article_id: article_id.clone(),
                    });
                }
            }
            let key = crate::labeling::normalize_crime(&crime);
            if let Some((prev, _)) = map.insert(key, (crime.clone(), articles)) {
                return Err(ReformulateError::CrimeCollision {
                    first: prev,
                    second: crime,
                });
            }
        }
        Ok(Self { entries: map })
    }

    pub fn load(path: &Path, store: &ArticleStore) -> Result<Self, ReformulateError> {
        let content = fs::read_to_string(path)?;
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&content).map_err(|e| ReformulateError::BadMap {
                reason: e.to_string(),
            })?;
        Self::from_entries(raw, store)
    }

    pub fn articles_for(&self, crime: &str) -> Option<&[String]> {
        self.entries
            .get(&crate::labeling::normalize_crime(crime))
            .map(|(_, ids)| ids.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Full pipeline vs. the crime-blind single-summary baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReformulationMode {
    Kgcr,
    Ns,
}

impl fmt::Display for ReformulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReformulationMode::Kgcr => "kgcr",
            ReformulationMode::Ns => "ns",
        })
    }
}

impl FromStr for ReformulationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kgcr" => Ok(ReformulationMode::Kgcr),
            "ns" => Ok(ReformulationMode::Ns),
            other => Err(format!("unknown reformulation mode {other:?}, expected kgcr or ns")),
        }
    }
}

/// Recoverable oddities recorded while reformulating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReformulationWarning {
    /// Extracted crime missing from the expert map; dropped.
    UnmappedCrime { case_id: String, crime: String },
    /// Extracted article title missing from the store; ignored.
    UnresolvedArticle { case_id: String, title: String },
    /// A summary field ran past the word cap and was cut.
    FieldTruncated {
        case_id: String,
        crime: String,
        field: &'static str,
    },
}

impl fmt::Display for ReformulationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReformulationWarning::UnmappedCrime { case_id, crime } => {
                write!(f, "case {case_id:?}: crime {crime:?} not in the expert map, dropped")
            }
            ReformulationWarning::UnresolvedArticle { case_id, title } => {
                write!(f, "case {case_id:?}: article {title:?} not in the store, ignored")
            }
            ReformulationWarning::FieldTruncated { case_id, crime, field } => write!(
                f,
                "case {case_id:?}, crime {crime:?}: {field} truncated to {MAX_FIELD_WORDS} words"
            ),
        }
    }
}

/// Split one extraction-response line on half- or full-width semicolons,
/// trim, drop empties, and dedup keeping first occurrences.
fn split_semicolon_list(line: &str) -> Vec<String> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for part in line.split([';', '；']) {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if seen.insert(part.to_string(), ()).is_none() {
            out.push(part.to_string());
        }
    }
    out
}

/// Step one: ask the LLM for the charged crimes and cited law articles.
/// Returns both lists deduplicated in response order.
pub fn extract_crimes_articles(
    case: &LegalCase,
    llm: &dyn LlmClient,
) -> Result<(Vec<String>, Vec<String>), ReformulateError> {
    if case.fact().trim().is_empty() {
        return Err(ReformulateError::EmptyFact {
            case_id: case.id.clone(),
        });
    }
    let response = llm.complete(&LlmRequest {
        case_id: case.id.clone(),
        label: "extract".to_string(),
        system: EXTRACTION_PROMPT.to_string(),
        user: case.fact().to_string(),
    })?;
    let lines: Vec<&str> = response
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let [crimes_line, articles_line] = lines.as_slice() else {
        return Err(ReformulateError::ExtractionFormat {
            case_id: case.id.clone(),
            response,
        });
    };
    Ok((
        split_semicolon_list(crimes_line),
        split_semicolon_list(articles_line),
    ))
}

/// Step between: reconcile extracted crimes and article titles against
/// the expert map. Per crime, keep the map-listed articles the LLM also
/// cited; if it cited none of them, keep all map-listed articles.
pub fn expand_and_map(
    case_id: &str,
    crimes: &[String],
    article_titles: &[String],
    store: &ArticleStore,
    map: &CrimeArticleMap,
    warnings: &mut Vec<ReformulationWarning>,
) -> Result<Vec<CrimeArticlePair>, ReformulateError> {
    let mut extracted = Vec::new();
    for title in article_titles {
        match store.get(title) {
            Some(article) => extracted.push(article.article_id),
            None => warnings.push(ReformulationWarning::UnresolvedArticle {
                case_id: case_id.to_string(),
                title: title.clone(),
            }),
        }
    }

    let mut pairs = Vec::new();
    let mut seen_crimes = BTreeMap::new();
    for crime in crimes {
        if seen_crimes
            .insert(crate::labeling::normalize_crime(crime), ())
            .is_some()
        {
            continue;
        }
        let Some(listed) = map.articles_for(crime) else {
            warnings.push(ReformulationWarning::UnmappedCrime {
                case_id: case_id.to_string(),
                crime: crime.clone(),
            });
            continue;
        };
        let cited: Vec<&String> = listed
            .iter()
            .filter(|id| extracted.contains(id))
            .collect();
        let chosen: Vec<&String> = if cited.is_empty() {
            listed.iter().collect()
        } else {
            cited
        };
        let articles: Vec<LawArticle> = chosen
            .iter()
            .map(|id| store.get(id).expect("map validated against store"))
            .collect();
        pairs.push(CrimeArticlePair {
            crime: crime.clone(),
            articles,
        });
    }
    if pairs.is_empty() {
        return Err(ReformulateError::NoUsableCrimes {
            case_id: case_id.to_string(),
        });
    }
    Ok(pairs)
}

/// Parse a summary into (cause, procedure, outcome). Accepts the labeled
/// "Cause:/Procedure:/Outcome:" layout with multi-line fields; a response
/// without labels lands wholly in procedure.
fn parse_summary(response: &str) -> Option<(String, String, String)> {
    let trimmed = response.trim();
    if trimmed.is_empty() {
        return None;
    }
    fn label_of(line: &str) -> Option<(usize, &str)> {
        for (slot, label) in [(0, "cause:"), (1, "procedure:"), (2, "outcome:")] {
            if line.len() >= label.len() && line[..label.len()].eq_ignore_ascii_case(label) {
                return Some((slot, line[label.len()..].trim_start()));
            }
        }
        None
    }
    let mut fields: [Vec<&str>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut current: Option<usize> = None;
    let mut saw_label = false;
    for line in trimmed.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((slot, rest)) = label_of(line) {
            saw_label = true;
            current = Some(slot);
            if !rest.is_empty() {
                fields[slot].push(rest);
            }
        } else if let Some(slot) = current {
            fields[slot].push(line);
        }
    }
    if !saw_label {
        return Some((String::new(), trimmed.to_string(), String::new()));
    }
    let join = |parts: &[&str]| parts.join(" ");
    Some((join(&fields[0]), join(&fields[1]), join(&fields[2])))
}

fn cap_field(
    text: String,
    field: &'static str,
    case_id: &str,
    crime: &str,
    warnings: &mut Vec<ReformulationWarning>,
) -> String {
    if count_words(&text) > MAX_FIELD_WORDS {
        warnings.push(ReformulationWarning::FieldTruncated {
            case_id: case_id.to_string(),
            crime: crime.to_string(),
            field,
        });
        truncate_words(&text, MAX_FIELD_WORDS)
    } else {
        text
    }
}

/// Short filesystem-safe name for a crime, used in fixture file names.
pub fn crime_slug(crime: &str) -> String {
    let mut slug = String::new();
    for ch in crate::labeling::normalize_crime(crime).chars() {
        if ch.is_alphanumeric() {
            slug.push(ch);
        } else if !slug.ends_with('-') {
            slug.push('-');
        }
    }
    slug.trim_matches('-').to_string()
}

/// Step two: summarize the case's facts for one crime-article pair.
pub fn summarize_fact(
    case: &LegalCase,
    pair: &CrimeArticlePair,
    llm: &dyn LlmClient,
    warnings: &mut Vec<ReformulationWarning>,
) -> Result<SubFact, ReformulateError> {
    let response = llm.complete(&LlmRequest {
        case_id: case.id.clone(),
        label: format!("summarize__{}", crime_slug(&pair.crime)),
        system: summarization_prompt(pair),
        user: case.fact().to_string(),
    })?;
    let Some((cause, procedure, outcome)) = parse_summary(&response) else {
        return Err(ReformulateError::SummaryFormat {
            case_id: case.id.clone(),
            crime: pair.crime.clone(),
            response,
        });
    };
    let subfact = SubFact {
        crime: pair.crime.clone(),
        cause: cap_field(cause, "cause", &case.id, &pair.crime, warnings),
        procedure: cap_field(procedure, "procedure", &case.id, &pair.crime, warnings),
        outcome: cap_field(outcome, "outcome", &case.id, &pair.crime, warnings),
        source_case_id: case.id.clone(),
    };
    if subfact.validate().is_err() {
        return Err(ReformulateError::SummaryFormat {
            case_id: case.id.clone(),
            crime: pair.crime.clone(),
            response,
        });
    }
    Ok(subfact)
}

fn fallback_subfact(
    case: &LegalCase,
    warnings: &mut Vec<ReformulationWarning>,
) -> Result<ReformulatedCase, ReformulateError> {
    if case.fact().trim().is_empty() {
        return Err(ReformulateError::EmptyFact {
            case_id: case.id.clone(),
        });
    }
    let subfact = SubFact {
        crime: "fact".to_string(),
        cause: String::new(),
        procedure: cap_field(
            case.fact().trim().to_string(),
            "procedure",
            &case.id,
            "fact",
            warnings,
        ),
        outcome: String::new(),
        source_case_id: case.id.clone(),
    };
    Ok(ReformulatedCase {
        case_id: case.id.clone(),
        subfacts: vec![subfact],
    })
}

/// Reformulate one case end to end. KGCR chains extraction, mapping and
/// per-crime summaries (first four crimes kept); a case whose crimes all
/// fall outside the map degrades to one "fact" sub-fact. NS issues a
/// single crime-blind summary.
pub fn reformulate_case(
    case: &LegalCase,
    llm: &dyn LlmClient,
    store: &ArticleStore,
    map: &CrimeArticleMap,
    mode: ReformulationMode,
    warnings: &mut Vec<ReformulationWarning>,
) -> Result<ReformulatedCase, ReformulateError> {
    let result = match mode {
        ReformulationMode::Ns => {
            if case.fact().trim().is_empty() {
                return Err(ReformulateError::EmptyFact {
                    case_id: case.id.clone(),
                });
            }
            let response = llm.complete(&LlmRequest {
                case_id: case.id.clone(),
                label: "naive".to_string(),
                system: NAIVE_SUMMARY_PROMPT.to_string(),
                user: case.fact().to_string(),
            })?;
            let Some((cause, procedure, outcome)) = parse_summary(&response) else {
                return Err(ReformulateError::SummaryFormat {
                    case_id: case.id.clone(),
                    crime: "summary".to_string(),
                    response,
                });
            };
            ReformulatedCase {
                case_id: case.id.clone(),
                subfacts: vec![SubFact {
                    crime: "summary".to_string(),
                    cause: cap_field(cause, "cause", &case.id, "summary", warnings),
                    procedure: cap_field(procedure, "procedure", &case.id, "summary", warnings),
                    outcome: cap_field(outcome, "outcome", &case.id, "summary", warnings),
                    source_case_id: case.id.clone(),
                }],
            }
        }
        ReformulationMode::Kgcr => {
            let (crimes, titles) = extract_crimes_articles(case, llm)?;
            match expand_and_map(&case.id, &crimes, &titles, store, map, warnings) {
                Ok(pairs) => {
                    let mut subfacts = Vec::new();
                    for pair in pairs.iter().take(MAX_SUBFACTS) {
                        subfacts.push(summarize_fact(case, pair, llm, warnings)?);
                    }
                    ReformulatedCase {
                        case_id: case.id.clone(),
                        subfacts,
                    }
                }
                Err(ReformulateError::NoUsableCrimes { .. }) => fallback_subfact(case, warnings)?,
                Err(other) => return Err(other),
            }
        }
    };
    result.validate()?;
    Ok(result)
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    case_id: String,
    mode: ReformulationMode,
    subfacts: Vec<SubFact>,
}

/// All reformulations of a corpus, persisted as JSON Lines so ranking and
/// training never re-invoke the LLM.
#[derive(Debug, Clone, Default)]
pub struct ReformulationCache {
    entries: BTreeMap<(String, ReformulationMode), ReformulatedCase>,
}

impl ReformulationCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load a cache file; a missing file is an empty cache.
    pub fn load_or_empty(path: &Path) -> Result<Self, ReformulateError> {
        if !path.exists() {
            return Ok(Self::new());
        }
        Self::load(path)
    }

    pub fn load(path: &Path) -> Result<Self, ReformulateError> {
        let content = fs::read_to_string(path)?;
        let records: Vec<(usize, CacheRecord)> = crate::io::parse_jsonl(&content)
            .map_err(|(line, source)| ReformulateError::CacheParse { line, source })?;
        let mut cache = Self::new();
        for (_, record) in records {
            let mut case = ReformulatedCase {
                case_id: record.case_id,
                subfacts: record.subfacts,
            };
            for sf in &mut case.subfacts {
                sf.source_case_id = case.case_id.clone();
            }
            case.validate()?;
            let key = (case.case_id.clone(), record.mode);
            if cache.entries.contains_key(&key) {
                return Err(ReformulateError::DuplicateCacheEntry {
                    case_id: key.0,
                    mode: key.1,
                });
            }
            cache.entries.insert(key, case);
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<(), ReformulateError> {
        let mut out = String::new();
        for ((case_id, mode), case) in &self.entries {
            let record = CacheRecord {
                case_id: case_id.clone(),
                mode: *mode,
                subfacts: case.subfacts.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("cache record serializes"));
            out.push('\n');
        }
        crate::io::write_atomic(path, out.as_bytes())?;
        Ok(())
    }

    pub fn get(&self, case_id: &str, mode: ReformulationMode) -> Option<&ReformulatedCase> {
        self.entries.get(&(case_id.to_string(), mode))
    }

    pub fn insert(&mut self, mode: ReformulationMode, case: ReformulatedCase) {
        self.entries.insert((case.case_id.clone(), mode), case);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cases(&self, mode: ReformulationMode) -> impl Iterator<Item = &ReformulatedCase> {
        self.entries
            .iter()
            .filter(move |((_, m), _)| *m == mode)
            .map(|(_, case)| case)
    }
}

/// Collapse a case to the single-vector ablation shape: one sub-fact
/// holding all the original text, encoded as a whole.
pub fn collapse_to_single_vector(case: &ReformulatedCase) -> ReformulatedCase {
    let joined: Vec<String> = case.subfacts.iter().map(SubFact::full_text).collect();
    ReformulatedCase {
        case_id: case.case_id.clone(),
        subfacts: vec![SubFact {
            crime: "summary".to_string(),
            cause: String::new(),
            procedure: joined.join(" "),
            outcome: String::new(),
            source_case_id: case.case_id.clone(),
        }],
    }
}

/// Fetch from the cache or reformulate and insert. Reports whether an LLM
/// round trip happened.
pub fn reformulate_with_cache(
    case: &LegalCase,
    llm: &dyn LlmClient,
    store: &ArticleStore,
    map: &CrimeArticleMap,
    mode: ReformulationMode,
    cache: &mut ReformulationCache,
    warnings: &mut Vec<ReformulationWarning>,
) -> Result<(ReformulatedCase, bool), ReformulateError> {
    if let Some(hit) = cache.get(&case.id, mode) {
        return Ok((hit.clone(), false));
    }
    let fresh = reformulate_case(case, llm, store, map, mode, warnings)?;
    cache.insert(mode, fresh.clone());
    Ok((fresh, true))
}
