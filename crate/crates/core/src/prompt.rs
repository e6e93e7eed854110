//! Prompt templates, technique decorators and metric-driven template ranking.
//!
//! A rendered instruction is assembled as
//!
//! ```text
//! prefix fragments ++ body ++ suffix fragments ++ formatting clause
//! ```
//!
//! with fragments taken in the fixed technique order of [`TechniqueKind::ALL`].
//! The formatting clause (the "Does not exist" instruction) is always appended
//! exactly once; it is not a technique. The chunk text is never inlined, it
//! travels as the message payload next to the instruction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, GoldAnswer, QuestionSpec};
use crate::inference::{is_negative_answer, CellContext, ChatBackend, ChatRequest};

pub const QUESTION_PLACEHOLDER: &str = "{QUESTION}";
pub const DESCRIPTION_PLACEHOLDER: &str = "{DESCRIPTION}";
pub const NEGATIVE_PHRASE: &str = "Does not exist";
pub const DEFAULT_FORMATTING_CLAUSE: &str = ", otherwise respond with \"Does not exist\".";

/// Best performing base template from the paraphrase search.
pub const DEFAULT_BASE_BODY: &str =
    "Identify the part of the question that corresponds to {QUESTION}";

/// Finalized template (technique-enhanced) used for "complex" runs.
pub const FINAL_TEMPLATE_BODY: &str =
    "The following text is a excerpt from a larger legal document. \
If the information is directly present, identify the part of that corresponds to {QUESTION}, \
otherwise respond only with \"Does not exist\". In other words, answer the question of \
{DESCRIPTION} by quoting it word for word, exactly as it appears in the document";
pub const FINAL_TEMPLATE_FORMATTING: &str = ", otherwise respond only \"Does not exist\".";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template `{0}` has no {{QUESTION}} placeholder")]
    MissingQuestion(String),
    #[error("unresolved placeholder {placeholder} in template `{template}`")]
    Unresolved {
        template: String,
        placeholder: String,
    },
    #[error("invalid technique combination: {0}")]
    InvalidCombination(String),
    #[error("unknown technique `{0}`")]
    UnknownTechnique(String),
    #[error("paraphrase pool: {0}")]
    Pool(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechniqueKind {
    Coercive,
    Kind,
    Intensifier,
    Domain,
    Persona,
    Rephrasing,
    Reflection,
}

impl TechniqueKind {
    /// Canonical composition order.
    pub const ALL: [TechniqueKind; 7] = [
        TechniqueKind::Coercive,
        TechniqueKind::Kind,
        TechniqueKind::Intensifier,
        TechniqueKind::Domain,
        TechniqueKind::Persona,
        TechniqueKind::Rephrasing,
        TechniqueKind::Reflection,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn name(self) -> &'static str {
        match self {
            TechniqueKind::Coercive => "coercive",
            TechniqueKind::Kind => "kind",
            TechniqueKind::Intensifier => "intensifier",
            TechniqueKind::Domain => "domain",
            TechniqueKind::Persona => "persona",
            TechniqueKind::Rephrasing => "rephrasing",
            TechniqueKind::Reflection => "reflection",
        }
    }
}

impl fmt::Display for TechniqueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TechniqueKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PromptError::UnknownTechnique(s.to_string()))
    }
}

/// Pairs that may not be combined.
pub const FORBIDDEN_PAIRS: [(TechniqueKind, TechniqueKind); 2] = [
    (TechniqueKind::Coercive, TechniqueKind::Kind),
    (TechniqueKind::Domain, TechniqueKind::Persona),
];

pub fn compatible(a: TechniqueKind, b: TechniqueKind) -> bool {
    !FORBIDDEN_PAIRS
        .iter()
        .any(|&(x, y)| (a, b) == (x, y) || (a, b) == (y, x))
}

/// Text a technique wraps around the base instruction. Either side may be
/// empty. `{DESCRIPTION}` may appear in a fragment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Technique {
    pub kind: TechniqueKind,
    #[serde(default)]
    pub prefix: String,
    #[serde(default)]
    pub suffix: String,
}

impl Technique {
    pub fn new(kind: TechniqueKind, prefix: &str, suffix: &str) -> Self {
        Self {
            kind,
            prefix: prefix.to_string(),
            suffix: suffix.to_string(),
        }
    }

    pub fn default_for(kind: TechniqueKind) -> Self {
        use TechniqueKind::*;
        match kind {
            Coercive => Self::new(kind, "", " or there will be consequences"),
            Kind => Self::new(kind, "Please ", ". Thank you"),
            Intensifier => Self::new(kind, "", " as well as possible"),
            Domain => Self::new(kind, "This is a legal document. ", ""),
            Persona => Self::new(kind, "Take on the role of a legal expert, and ", ""),
            Rephrasing => Self::new(kind, "", ". In other words, {DESCRIPTION}"),
            Reflection => Self::new(
                kind,
                "",
                ". Afterwards, go through it again to improve your response",
            ),
        }
    }
}

/// Fragment table for all seven techniques.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TechniqueCatalog {
    techniques: BTreeMap<TechniqueKind, Technique>,
}

impl Default for TechniqueCatalog {
    fn default() -> Self {
        Self {
            techniques: TechniqueKind::ALL
                .into_iter()
                .map(|k| (k, Technique::default_for(k)))
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FragmentOverride {
    prefix: Option<String>,
    suffix: Option<String>,
}

impl TechniqueCatalog {
    pub fn get(&self, kind: TechniqueKind) -> &Technique {
        &self.techniques[&kind]
    }

    pub fn all(&self) -> Vec<Technique> {
        self.techniques.values().cloned().collect()
    }

    /// Default catalog with the given fragments replacing their kinds.
    pub fn from_techniques(list: impl IntoIterator<Item = Technique>) -> Self {
        let mut c = Self::default();
        for t in list {
            c.techniques.insert(t.kind, t);
        }
        c
    }

    /// Applies overrides from JSON `{"persona": {"prefix": "..."}, ...}`.
    pub fn with_overrides_json(mut self, raw: &str) -> Result<Self, PromptError> {
        let map: BTreeMap<String, FragmentOverride> = serde_json::from_str(raw)?;
        for (name, o) in map {
            let kind: TechniqueKind = name.parse()?;
            let t = self.techniques.get_mut(&kind).expect("catalog is complete");
            if let Some(p) = o.prefix {
                t.prefix = p;
            }
            if let Some(s) = o.suffix {
                t.suffix = s;
            }
        }
        Ok(self)
    }

    pub fn load_overrides(self, path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.with_overrides_json(&raw)
    }
}

/// A set of technique kinds, stored as a bitmask over [`TechniqueKind::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct TechniqueSet(u8);

impl TechniqueSet {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn from_kinds(kinds: impl IntoIterator<Item = TechniqueKind>) -> Self {
        Self(kinds.into_iter().fold(0, |acc, k| acc | k.bit()))
    }

    pub fn contains(&self, k: TechniqueKind) -> bool {
        self.0 & k.bit() != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Members in canonical order.
    pub fn kinds(&self) -> impl Iterator<Item = TechniqueKind> + '_ {
        TechniqueKind::ALL.into_iter().filter(|k| self.contains(*k))
    }

    pub fn is_valid(&self) -> bool {
        FORBIDDEN_PAIRS
            .iter()
            .all(|&(a, b)| !(self.contains(a) && self.contains(b)))
    }

    /// Short label like `kind+intensifier`, or `base` for the empty set.
    pub fn label(&self) -> String {
        if self.is_empty() {
            "base".to_string()
        } else {
            self.kinds().map(|k| k.name()).collect::<Vec<_>>().join("+")
        }
    }
}

impl Serialize for TechniqueSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.kinds())
    }
}

impl<'de> Deserialize<'de> for TechniqueSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let kinds = Vec::<TechniqueKind>::deserialize(d)?;
        Ok(Self::from_kinds(kinds))
    }
}

/// All valid subsets of the available techniques, smallest first, then in
/// canonical bit order within a size.
pub fn enumerate_combinations(available: &[TechniqueKind]) -> Vec<TechniqueSet> {
    let kinds: Vec<TechniqueKind> = available
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut sets: Vec<TechniqueSet> = (0u32..(1 << kinds.len()))
        .map(|mask| {
            TechniqueSet::from_kinds(
                kinds
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, k)| *k),
            )
        })
        .filter(TechniqueSet::is_valid)
        .collect();
    sets.sort_by_key(|s| (s.len(), s.kinds().map(|k| k as u8).collect::<Vec<_>>()));
    sets
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub techniques: TechniqueSet,
    pub formatting_clause: String,
}

/// A rendered instruction plus the chunk it is about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub instruction: String,
    pub payload: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Result<Self, PromptError> {
        let t = Self {
            id: id.into(),
            body: body.into(),
            techniques: TechniqueSet::empty(),
            formatting_clause: DEFAULT_FORMATTING_CLAUSE.to_string(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn basic() -> Self {
        Self::new("basic", DEFAULT_BASE_BODY).expect("default template is valid")
    }

    /// The finalized "complex" template.
    pub fn finalized() -> Self {
        Self {
            id: "complex".to_string(),
            body: FINAL_TEMPLATE_BODY.to_string(),
            techniques: TechniqueSet::empty(),
            formatting_clause: FINAL_TEMPLATE_FORMATTING.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if !self.body.contains(QUESTION_PLACEHOLDER) {
            return Err(PromptError::MissingQuestion(self.id.clone()));
        }
        if !self.techniques.is_valid() {
            return Err(PromptError::InvalidCombination(self.techniques.label()));
        }
        Ok(())
    }

    /// Same body with a technique set applied; the id records the set.
    pub fn with_techniques(&self, set: TechniqueSet) -> Result<Self, PromptError> {
        let t = Self {
            id: format!("{}/{}", self.id, set.label()),
            techniques: set,
            ..self.clone()
        };
        t.validate()?;
        Ok(t)
    }

    pub fn render_instruction(
        &self,
        catalog: &TechniqueCatalog,
        question: &QuestionSpec,
    ) -> Result<String, PromptError> {
        self.validate()?;
        let mut out = String::new();
        for k in self.techniques.kinds() {
            out.push_str(&catalog.get(k).prefix);
        }
        out.push_str(&self.body);
        for k in self.techniques.kinds() {
            out.push_str(&catalog.get(k).suffix);
        }
        let stripped = out
            .replace(QUESTION_PLACEHOLDER, "")
            .replace(DESCRIPTION_PLACEHOLDER, "");
        if let Some(p) = find_placeholder(&stripped) {
            return Err(PromptError::Unresolved {
                template: self.id.clone(),
                placeholder: p,
            });
        }
        let out = out
            .replace(QUESTION_PLACEHOLDER, &question.category_name)
            .replace(DESCRIPTION_PLACEHOLDER, &question.description);
        Ok(out + &self.formatting_clause)
    }

    pub fn render(
        &self,
        catalog: &TechniqueCatalog,
        question: &QuestionSpec,
        chunk_text: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        Ok(RenderedPrompt {
            instruction: self.render_instruction(catalog, question)?,
            payload: chunk_text.to_string(),
        })
    }
}

/// First `{NAME}`-style placeholder left in a string.
fn find_placeholder(s: &str) -> Option<String> {
    let mut rest = s;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        if let Some(close) = after.find('}') {
            let name = &after[..close];
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Some(format!("{{{name}}}"));
            }
        }
        rest = after;
    }
    None
}

/// Paraphrase pool: a pattern with `{slot}` references, each slot a list of
/// interchangeable phrasings. `{QUESTION}` and `{DESCRIPTION}` pass through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParaphrasePool {
    pub pattern: String,
    pub slots: BTreeMap<String, Vec<String>>,
}

impl ParaphrasePool {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Slot names in order of first appearance in the pattern.
    fn slot_order(&self) -> Result<Vec<String>, PromptError> {
        let mut order = Vec::new();
        let mut rest = self.pattern.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| PromptError::Pool("unterminated slot reference".into()))?;
            let name = &after[..close];
            if name != "QUESTION" && name != "DESCRIPTION" {
                if !self.slots.contains_key(name) {
                    return Err(PromptError::Pool(format!(
                        "pattern references unknown slot `{name}`"
                    )));
                }
                if !order.iter().any(|n| n == name) {
                    order.push(name.to_string());
                }
            }
            rest = &after[close + 1..];
        }
        for (name, options) in &self.slots {
            if options.is_empty() {
                return Err(PromptError::Pool(format!("slot `{name}` has no options")));
            }
        }
        Ok(order)
    }

    /// Cartesian product of slot choices, last slot varying fastest.
    pub fn expand(&self) -> Result<Vec<PromptTemplate>, PromptError> {
        let order = self.slot_order()?;
        let sizes: Vec<usize> = order.iter().map(|n| self.slots[n].len()).collect();
        let total: usize = sizes.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut choice = vec![0usize; order.len()];
        for _ in 0..total {
            let mut body = self.pattern.clone();
            for (slot, &c) in order.iter().zip(&choice) {
                body = body.replace(&format!("{{{slot}}}"), &self.slots[slot][c]);
            }
            let id = if choice.is_empty() {
                "pool".to_string()
            } else {
                format!(
                    "pool-{}",
                    choice
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join("-")
                )
            };
            out.push(PromptTemplate::new(id, body)?);
            for i in (0..choice.len()).rev() {
                choice[i] += 1;
                if choice[i] < sizes[i] {
                    break;
                }
                choice[i] = 0;
            }
        }
        Ok(out)
    }
}

/// Scores a prediction against one gold span text, in `[0, 1]`.
pub trait Scorer {
    fn score(&self, prediction: &str, gold: &str) -> f64;
}

impl<F: Fn(&str, &str) -> f64> Scorer for F {
    fn score(&self, prediction: &str, gold: &str) -> f64 {
        self(prediction, gold)
    }
}

/// One (document, question, gold) item the templates are trialled on.
#[derive(Debug, Clone)]
pub struct TestItem<'a> {
    pub document: &'a Document,
    pub question: &'a QuestionSpec,
    pub gold: &'a GoldAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub template_id: String,
    pub mean_metric: f64,
    pub n_evaluated: usize,
}

/// Scores every template on every positive test item; best first.
///
/// The whole document is sent as the payload. A backend failure on an item
/// counts as a score of 0. Negative model answers also score 0.
pub fn rank_prompts(
    templates: &[PromptTemplate],
    testset: &[TestItem<'_>],
    catalog: &TechniqueCatalog,
    backend: &dyn ChatBackend,
    scorer: &dyn Scorer,
    model_name: &str,
    temperature: f64,
) -> Result<Vec<PromptScore>, PromptError> {
    let items: Vec<&TestItem<'_>> = testset.iter().filter(|t| !t.gold.is_negative).collect();
    let mut scores = Vec::with_capacity(templates.len());
    for template in templates {
        let mut total = 0.0;
        for item in &items {
            let rendered = template.render(catalog, item.question, &item.document.text)?;
            let request = ChatRequest {
                model_name: model_name.to_string(),
                instruction: rendered.instruction,
                payload: rendered.payload,
                temperature,
            };
            let ctx = CellContext {
                document_id: item.document.id.clone(),
                category_id: item.question.category_id,
                chunk_index: 0,
                word_range: (0, item.document.word_count),
            };
            let s = match backend.generate(&request, &ctx) {
                Ok(answer) if is_negative_answer(&answer) => 0.0,
                Ok(answer) => item
                    .gold
                    .span_texts()
                    .map(|g| scorer.score(&answer, g).clamp(0.0, 1.0))
                    .fold(0.0, f64::max),
                Err(e) => {
                    log::warn!(
                        "template {} on {}/{}: {e}; scored 0",
                        template.id,
                        item.document.id,
                        item.question.category_id
                    );
                    0.0
                }
            };
            total += s;
        }
        if !items.is_empty() {
            scores.push(PromptScore {
                template_id: template.id.clone(),
                mean_metric: total / items.len() as f64,
                n_evaluated: items.len(),
            });
        }
    }
    scores.sort_by(|a, b| {
        b.mean_metric
            .total_cmp(&a.mean_metric)
            .then_with(|| a.template_id.cmp(&b.template_id))
    });
    Ok(scores)
}

pub fn write_scores_csv<W: std::io::Write>(
    mut out: W,
    scores: &[PromptScore],
) -> std::io::Result<()> {
    writeln!(out, "template_id,mean_metric,n_evaluated")?;
    for s in scores {
        writeln!(
            out,
            "{},{},{}",
            csv_field(&s.template_id),
            s.mean_metric,
            s.n_evaluated
        )?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
