use std::collections::HashMap;
use std::sync::Arc;

use super::{BackendError, CellContext, ChatBackend, ChatRequest};
use crate::corpus::Corpus;
use crate::prompt::NEGATIVE_PHRASE;
use crate::text::WordSpan;

struct SpanInfo {
    text: String,
    char_start: usize,
    char_end: usize,
    words: (usize, usize),
}

/// Deterministic extraction oracle over gold annotations.
///
/// For a chunk it returns the longest gold span that intersects the chunk's
/// word range, clipped to the chunk; otherwise the negative phrase. The
/// instruction text is ignored.
pub struct OracleBackend {
    corpus: Arc<Corpus>,
    words: HashMap<String, Vec<WordSpan>>,
    spans: HashMap<(String, usize), Vec<SpanInfo>>,
}

impl OracleBackend {
    pub fn new(corpus: Arc<Corpus>) -> Self {
        let words: HashMap<String, Vec<WordSpan>> = corpus
            .documents
            .iter()
            .map(|d| (d.id.clone(), d.words()))
            .collect();
        let mut spans = HashMap::new();
        for a in &corpus.answers {
            let w = &words[&a.document_id];
            let infos = a
                .spans
                .iter()
                .filter_map(|s| {
                    s.word_range(w).map(|words| SpanInfo {
                        text: s.text.clone(),
                        char_start: s.start,
                        char_end: s.start + s.char_len(),
                        words,
                    })
                })
                .collect();
            spans.insert((a.document_id.clone(), a.category_id), infos);
        }
        Self {
            corpus,
            words,
            spans,
        }
    }

    fn answer(&self, cell: &CellContext) -> Result<String, BackendError> {
        let words = self
            .words
            .get(&cell.document_id)
            .ok_or_else(|| BackendError::UnknownDocument(cell.document_id.clone()))?;
        if self.corpus.question(cell.category_id).is_none() {
            return Err(BackendError::UnknownCategory(cell.category_id));
        }
        let (cs, ce) = cell.word_range;
        if cs >= ce || ce > words.len() {
            return Err(BackendError::InvalidRequest(format!(
                "chunk range {cs}..{ce} outside document of {} words",
                words.len()
            )));
        }
        let Some(spans) = self
            .spans
            .get(&(cell.document_id.clone(), cell.category_id))
        else {
            return Ok(NEGATIVE_PHRASE.to_string());
        };
        let best = spans
            .iter()
            .map(|s| (s, s.words.0.max(cs), s.words.1.min(ce)))
            .filter(|(_, lo, hi)| lo < hi)
            .fold(None::<(&SpanInfo, usize, usize)>, |best, cur| match best {
                Some(b) if b.2 - b.1 >= cur.2 - cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((span, lo, hi)) = best else {
            return Ok(NEGATIVE_PHRASE.to_string());
        };
        if span.words.0 >= cs && span.words.1 <= ce {
            return Ok(span.text.clone());
        }
        let doc = self.corpus.document(&cell.document_id).expect("indexed");
        let from = span.char_start.max(words[lo].char_start);
        let to = span.char_end.min(words[hi - 1].char_end);
        let text: String = doc.text.chars().skip(from).take(to - from).collect();
        Ok(text)
    }
}

impl ChatBackend for OracleBackend {
    fn generate(&self, _request: &ChatRequest, cell: &CellContext) -> Result<String, BackendError> {
        self.answer(cell)
    }
}
