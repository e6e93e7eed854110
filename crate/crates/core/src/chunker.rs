//! Uniform word chunking with reduplication chunks across every cut point.
//!
//! A document of `n` words is cut into base chunks of `chunk_size` words (the
//! final one may be shorter). For every pair of sequential base chunks an
//! augmented chunk is added spanning from the midpoint of the first to the
//! midpoint of the second, so text split by a cut appears whole somewhere.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::text;

pub const DEFAULT_CHUNK_SIZE: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum ChunkError {
    #[error("document `{0}` has no words")]
    EmptyDocument(String),
    #[error("chunk_size must be positive")]
    ZeroChunkSize,
    #[error("chunk_size must be at least 2 when augmentation is enabled")]
    ChunkTooSmallForAugment,
    #[error("chunk file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Base,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub document_id: String,
    pub index: usize,
    pub start_word: usize,
    pub end_word: usize,
    pub text: String,
    pub kind: ChunkKind,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end_word - self.start_word
    }

    pub fn is_empty(&self) -> bool {
        self.start_word == self.end_word
    }

    fn midpoint(&self) -> usize {
        self.start_word + self.len() / 2
    }

    /// End of the bridging chunk that starts inside the previous chunk. A
    /// one-word final chunk still contributes its word so the cut is covered.
    fn bridge_end(&self) -> usize {
        self.start_word + (self.len() / 2).max(1)
    }

    pub fn contains_word(&self, w: usize) -> bool {
        (self.start_word..self.end_word).contains(&w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub augment: bool,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            augment: true,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            Err(ChunkError::ZeroChunkSize)
        } else if self.augment && self.chunk_size < 2 {
            Err(ChunkError::ChunkTooSmallForAugment)
        } else {
            Ok(())
        }
    }
}

/// Base chunks followed by augmented chunks, indexed in that order.
pub fn chunk(document: &Document, config: &ChunkingConfig) -> Result<Vec<Chunk>, ChunkError> {
    config.validate()?;
    let words: Vec<&str> = document.text.split_whitespace().collect();
    if words.is_empty() {
        return Err(ChunkError::EmptyDocument(document.id.clone()));
    }
    let mut chunks: Vec<Chunk> = words
        .chunks(config.chunk_size)
        .enumerate()
        .map(|(i, slice)| {
            let start = i * config.chunk_size;
            Chunk {
                document_id: document.id.clone(),
                index: i,
                start_word: start,
                end_word: start + slice.len(),
                text: slice.join(" "),
                kind: ChunkKind::Base,
            }
        })
        .collect();
    if config.augment {
        let mut extra = augment_words(&chunks, &words);
        let offset = chunks.len();
        for (k, c) in extra.iter_mut().enumerate() {
            c.index = offset + k;
        }
        chunks.extend(extra);
    }
    Ok(chunks)
}

/// Bridging chunks for sequential base chunks, built from the document text.
pub fn augment(base_chunks: &[Chunk], document: &Document) -> Vec<Chunk> {
    let words: Vec<&str> = document.text.split_whitespace().collect();
    augment_words(base_chunks, &words)
}

fn augment_words(base: &[Chunk], words: &[&str]) -> Vec<Chunk> {
    base.windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (start, end) = (pair[0].midpoint(), pair[1].bridge_end());
            Chunk {
                document_id: pair[0].document_id.clone(),
                index: i,
                start_word: start,
                end_word: end,
                text: words[start..end].join(" "),
                kind: ChunkKind::Augmented,
            }
        })
        .collect()
}

/// Text of words `[start, end)` of a document, single-space joined.
pub fn range_text(document: &Document, start: usize, end: usize) -> String {
    text::join_words(&document.text, start, end)
}

pub fn write_jsonl<W: Write>(mut out: W, chunks: &[Chunk]) -> Result<(), ChunkError> {
    for c in chunks {
        serde_json::to_writer(&mut out, c).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Chunk>, ChunkError> {
    let mut chunks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c = serde_json::from_str(&line).map_err(|e| ChunkError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        chunks.push(c);
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize) -> Document {
        let text = (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ");
        Document::new("d", "d", text)
    }

    fn ranges(chunks: &[Chunk], kind: ChunkKind) -> Vec<(usize, usize)> {
        chunks
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| (c.start_word, c.end_word))
            .collect()
    }

    #[test]
    fn uniform_split_with_remainder() {
        let cfg = ChunkingConfig {
            chunk_size: 1000,
            augment: false,
        };
        let c = chunk(&doc(2500), &cfg).unwrap();
        assert_eq!(
            ranges(&c, ChunkKind::Base),
            vec![(0, 1000), (1000, 2000), (2000, 2500)]
        );
        assert!(ranges(&c, ChunkKind::Augmented).is_empty());
    }

    #[test]
    fn short_document_single_chunk() {
        let c = chunk(&doc(800), &ChunkingConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].start_word, c[0].end_word), (0, 800));
    }

    #[test]
    fn exact_multiple() {
        let cfg = ChunkingConfig {
            chunk_size: 1000,
            augment: false,
        };
        let c = chunk(&doc(2000), &cfg).unwrap();
        assert_eq!(ranges(&c, ChunkKind::Base), vec![(0, 1000), (1000, 2000)]);
    }

    #[test]
    fn augmented_midpoints() {
        let c = chunk(&doc(2500), &ChunkingConfig::default()).unwrap();
        assert_eq!(
            ranges(&c, ChunkKind::Augmented),
            vec![(500, 1500), (1500, 2250)]
        );
        let idx: Vec<usize> = c.iter().map(|c| c.index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn halves_of_two_chunks() {
        let d = doc(20);
        let cfg = ChunkingConfig {
            chunk_size: 10,
            augment: false,
        };
        let base = chunk(&d, &cfg).unwrap();
        let aug = augment(&base, &d);
        assert_eq!(aug.len(), 1);
        assert_eq!((aug[0].start_word, aug[0].end_word), (5, 15));
        assert_eq!(aug[0].text, "w5 w6 w7 w8 w9 w10 w11 w12 w13 w14");
        assert!(augment(&base[..1], &d).is_empty());
    }

    #[test]
    fn text_is_single_spaced() {
        let d = Document::new("x", "x", "a\n\n b\t c   d");
        let c = chunk(
            &d,
            &ChunkingConfig {
                chunk_size: 3,
                augment: true,
            },
        )
        .unwrap();
        assert_eq!(c[0].text, "a b c");
        assert_eq!(c[1].text, "d");
        // one-word remainder: the bridge still reaches across the cut
        assert_eq!(c[2].text, "b c d");
    }

    #[test]
    fn errors() {
        assert!(matches!(
            chunk(&Document::new("e", "e", "  "), &ChunkingConfig::default()),
            Err(ChunkError::EmptyDocument(_))
        ));
        assert!(matches!(
            chunk(
                &doc(3),
                &ChunkingConfig {
                    chunk_size: 0,
                    augment: false
                }
            ),
            Err(ChunkError::ZeroChunkSize)
        ));
        assert!(matches!(
            chunk(
                &doc(3),
                &ChunkingConfig {
                    chunk_size: 1,
                    augment: true
                }
            ),
            Err(ChunkError::ChunkTooSmallForAugment)
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = chunk(
            &doc(25),
            &ChunkingConfig {
                chunk_size: 10,
                augment: true,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &c).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), c);
    }
}
