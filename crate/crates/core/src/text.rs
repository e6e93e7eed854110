//! Whitespace word segmentation with character and byte provenance.
//!
//! Character offsets count Unicode scalar values, matching the offsets used by
//! SQuAD-style annotation files.

/// One whitespace-delimited word of a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordSpan {
    pub char_start: usize,
    pub char_end: usize,
    pub byte_start: usize,
    pub byte_end: usize,
}

/// Splits `text` on Unicode whitespace, recording where each word lives.
pub fn word_spans(text: &str) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut char_idx = 0;
    for (byte_idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some((cs, bs)) = current.take() {
                spans.push(WordSpan {
                    char_start: cs,
                    char_end: char_idx,
                    byte_start: bs,
                    byte_end: byte_idx,
                });
            }
        } else if current.is_none() {
            current = Some((char_idx, byte_idx));
        }
        char_idx += 1;
    }
    if let Some((cs, bs)) = current {
        spans.push(WordSpan {
            char_start: cs,
            char_end: char_idx,
            byte_start: bs,
            byte_end: text.len(),
        });
    }
    spans
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Words `[start, end)` of `text` rejoined with single spaces.
pub fn join_words(text: &str, start: usize, end: usize) -> String {
    text.split_whitespace()
        .skip(start)
        .take(end.saturating_sub(start))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Half-open range of word indices touched by the character range
/// `[char_start, char_end)`. Returns `None` when no word intersects it.
pub fn words_touching(
    words: &[WordSpan],
    char_start: usize,
    char_end: usize,
) -> Option<(usize, usize)> {
    if char_end <= char_start {
        return None;
    }
    let first = words.partition_point(|w| w.char_end <= char_start);
    let last = words.partition_point(|w| w.char_start < char_end);
    (first < last).then_some((first, last))
}

/// Byte offset of the `char_idx`-th character, or `None` past the end.
pub fn char_to_byte(text: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut iter = text.char_indices().skip(char_idx);
    match iter.next() {
        Some((b, _)) => Some(b),
        None if text.chars().count() == char_idx => Some(text.len()),
        None => None,
    }
}

/// Substring by character range, `None` when out of bounds.
pub fn char_slice(text: &str, char_start: usize, char_len: usize) -> Option<&str> {
    let b0 = char_to_byte(text, char_start)?;
    let rest = &text[b0..];
    let b1 = char_to_byte(rest, char_len)?;
    Some(&rest[..b1])
}
