//! CUAD-style corpus ingestion.
//!
//! Two on-disk formats are accepted:
//!
//! * SQuAD v2 JSON (`{"data": [{"title", "paragraphs": [{"context", "qas"}]}]}`),
//!   the format CUAD ships in.
//! * The normalized corpus written by [`Corpus::to_json`], with explicit
//!   `documents`, `questions` and `answers` arrays.
//!
//! Every answer span is checked on load: the document text at
//! `[start, start + len(text))` (character offsets) must equal the span text.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::{self, WordSpan};

/// The five categories a layperson can judge; used for the prompt test split.
pub const TEST_CATEGORY_NAMES: [&str; 5] = [
    "Document Name",
    "Parties",
    "Agreement Date",
    "Effective Date",
    "Expiration Date",
];

pub const DEFAULT_MAX_TEST_DOC_WORDS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("answer of qa `{qa_id}` not found at declared offset {start}: expected {expected:?}")]
    Integrity {
        qa_id: String,
        start: usize,
        expected: String,
    },
    #[error("document `{0}` has empty text")]
    EmptyDocument(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("duplicate category id {0}")]
    DuplicateCategory(usize),
    #[error("none of the test categories resolved; available categories: {available}")]
    NoTestCategories { available: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    pub word_count: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            title: title.into(),
            word_count: text::word_count(&text),
            text,
        }
    }

    pub fn words(&self) -> Vec<WordSpan> {
        text::word_spans(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub category_id: usize,
    pub category_name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub text: String,
    /// Character offset into the document text.
    pub start: usize,
}

impl AnswerSpan {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Word range `[start, end)` of the document covered by this span.
    pub fn word_range(&self, words: &[WordSpan]) -> Option<(usize, usize)> {
        text::words_touching(words, self.start, self.start + self.char_len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub document_id: String,
    pub category_id: usize,
    pub spans: Vec<AnswerSpan>,
    pub is_negative: bool,
}

impl GoldAnswer {
    pub fn span_texts(&self) -> impl Iterator<Item = &str> {
        self.spans.iter().map(|s| s.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub test_docs: Vec<String>,
    pub verification_docs: Vec<String>,
    pub test_categories: Vec<usize>,
}

/// An ingested, validated corpus. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub questions: Vec<QuestionSpec>,
    pub answers: Vec<GoldAnswer>,
    #[serde(skip)]
    doc_index: HashMap<String, usize>,
    #[serde(skip)]
    answer_index: HashMap<(String, usize), usize>,
}

impl Corpus {
    /// Builds a corpus, validating every invariant.
    pub fn new(
        documents: Vec<Document>,
        questions: Vec<QuestionSpec>,
        answers: Vec<GoldAnswer>,
    ) -> Result<Self, CorpusError> {
        let mut corpus = Self {
            documents,
            questions,
            answers,
            doc_index: HashMap::new(),
            answer_index: HashMap::new(),
        };
        corpus.reindex()?;
        corpus.validate()?;
        Ok(corpus)
    }

    fn reindex(&mut self) -> Result<(), CorpusError> {
        self.doc_index = self
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        self.answer_index = self
            .answers
            .iter()
            .enumerate()
            .map(|(i, a)| ((a.document_id.clone(), a.category_id), i))
            .collect();
        let mut seen = HashSet::new();
        for q in &self.questions {
            if !seen.insert(q.category_id) {
                return Err(CorpusError::DuplicateCategory(q.category_id));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CorpusError> {
        for d in &self.documents {
            if d.text.trim().is_empty() {
                return Err(CorpusError::EmptyDocument(d.id.clone()));
            }
        }
        for a in &self.answers {
            let doc = self
                .document(&a.document_id)
                .ok_or_else(|| CorpusError::UnknownDocument(a.document_id.clone()))?;
            for s in &a.spans {
                verify_span(doc, s, &format!("{}__{}", a.document_id, a.category_id))?;
            }
        }
        Ok(())
    }

    /// Reads a SQuAD-v2 or normalized corpus file.
    pub fn ingest(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&raw)
    }

    pub fn from_json_str(raw: &str) -> Result<Self, CorpusError> {
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| parse_error(raw, &e))?;
        if value.get("data").is_some() {
            let file: SquadFile =
                serde_json::from_value(value).map_err(|e| parse_error(raw, &e))?;
            from_squad(file)
        } else {
            let corpus: Corpus = serde_json::from_value(value).map_err(|e| parse_error(raw, &e))?;
            Self::new(corpus.documents, corpus.questions, corpus.answers)
        }
    }

    /// Normalized corpus JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.doc_index.get(id).map(|&i| &self.documents[i])
    }

    pub fn question(&self, category_id: usize) -> Option<&QuestionSpec> {
        self.questions.iter().find(|q| q.category_id == category_id)
    }

    pub fn gold(&self, document_id: &str, category_id: usize) -> Option<&GoldAnswer> {
        self.answer_index
            .get(&(document_id.to_string(), category_id))
            .map(|&i| &self.answers[i])
    }

    pub fn annotation_count(&self) -> usize {
        self.answers.iter().map(|a| a.spans.len()).sum()
    }

    /// Test/verification split: short documents and the layperson categories.
    pub fn make_split(&self, max_test_doc_words: usize) -> Result<CorpusSplit, CorpusError> {
        let (test_docs, verification_docs): (Vec<_>, Vec<_>) = self
            .documents
            .iter()
            .partition(|d| d.word_count <= max_test_doc_words);
        let test_categories: Vec<usize> = TEST_CATEGORY_NAMES
            .iter()
            .filter_map(|name| {
                self.questions
                    .iter()
                    .find(|q| q.category_name.eq_ignore_ascii_case(name))
                    .map(|q| q.category_id)
            })
            .collect();
        if test_categories.is_empty() {
            let available = self
                .questions
                .iter()
                .map(|q| q.category_name.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            return Err(CorpusError::NoTestCategories { available });
        }
        Ok(CorpusSplit {
            test_docs: test_docs.into_iter().map(|d| d.id.clone()).collect(),
            verification_docs: verification_docs
                .into_iter()
                .map(|d| d.id.clone())
                .collect(),
            test_categories,
        })
    }
}

fn verify_span(doc: &Document, span: &AnswerSpan, qa_id: &str) -> Result<(), CorpusError> {
    match text::char_slice(&doc.text, span.start, span.char_len()) {
        Some(found) if found == span.text => Ok(()),
        _ => Err(CorpusError::Integrity {
            qa_id: qa_id.to_string(),
            start: span.start,
            expected: span.text.clone(),
        }),
    }
}

fn parse_error(raw: &str, e: &serde_json::Error) -> CorpusError {
    let (line, column) = (e.line(), e.column());
    let offset = if line == 0 {
        0
    } else {
        raw.split_inclusive('\n')
            .take(line - 1)
            .map(str::len)
            .sum::<usize>()
            + column.saturating_sub(1)
    };
    CorpusError::Parse {
        offset,
        line,
        column,
        message: e.to_string(),
    }
}

#[derive(Debug, Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Debug, Deserialize)]
struct SquadArticle {
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Debug, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Category name from a CUAD qa id (`<title>__<category>`), falling back to the
/// question text when the id does not follow that convention.
fn category_name(qa: &SquadQa) -> String {
    match qa.id.rsplit_once("__") {
        Some((_, cat)) if !cat.is_empty() => cat.to_string(),
        _ => qa.question.trim().to_string(),
    }
}

/// CUAD questions end in `Details: <description>`.
fn description(question: &str) -> String {
    match question.split_once("Details:") {
        Some((_, d)) if !d.trim().is_empty() => d.trim().to_string(),
        _ => question.trim().to_string(),
    }
}

fn from_squad(file: SquadFile) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut categories: BTreeMap<usize, QuestionSpec> = BTreeMap::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut answers = Vec::new();
    let mut used_ids: HashSet<String> = HashSet::new();

    for article in file.data {
        let multi = article.paragraphs.len() > 1;
        for (p_idx, para) in article.paragraphs.into_iter().enumerate() {
            let base = if multi {
                format!("{}#{}", article.title, p_idx)
            } else {
                article.title.clone()
            };
            let mut id = base.clone();
            let mut k = 1;
            while !used_ids.insert(id.clone()) {
                id = format!("{base}~{k}");
                k += 1;
            }
            let doc = Document::new(id.clone(), article.title.clone(), para.context);
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyDocument(id));
            }

            let mut per_category: BTreeMap<usize, GoldAnswer> = BTreeMap::new();
            for qa in para.qas {
                let name = category_name(&qa);
                let next_id = by_name.len();
                let cat = *by_name.entry(name.clone()).or_insert(next_id);
                categories.entry(cat).or_insert_with(|| QuestionSpec {
                    category_id: cat,
                    category_name: name,
                    description: description(&qa.question),
                });
                let spans: Vec<AnswerSpan> = if qa.is_impossible {
                    Vec::new()
                } else {
                    qa.answers
                        .into_iter()
                        .map(|a| AnswerSpan {
                            text: a.text,
                            start: a.answer_start,
                        })
                        .collect()
                };
                for s in &spans {
                    verify_span(&doc, s, &qa.id)?;
                }
                let entry = per_category.entry(cat).or_insert_with(|| GoldAnswer {
                    document_id: id.clone(),
                    category_id: cat,
                    spans: Vec::new(),
                    is_negative: true,
                });
                for s in spans {
                    if !entry.spans.contains(&s) {
                        entry.spans.push(s);
                    }
                }
                entry.is_negative = entry.spans.is_empty();
            }
            answers.extend(per_category.into_values());
            documents.push(doc);
        }
    }
    Corpus::new(documents, categories.into_values().collect(), answers)
}
