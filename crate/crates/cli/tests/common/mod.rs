#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub const CATEGORIES: [(&str, &str); 6] = [
    ("Document Name", "The name of the contract"),
    ("Parties", "The two or more parties who signed the contract"),
    ("Agreement Date", "The date of the contract"),
    ("Effective Date", "The date when the contract is effective"),
    (
        "Expiration Date",
        "On what date will the contract's initial term expire?",
    ),
    (
        "Governing Law",
        "Which state's law governs the interpretation of the contract?",
    ),
];

/// Where each category's answer is centred, as a fraction of the document.
pub const POSITIONS: [f64; 6] = [0.125, 0.25, 0.5, 0.625, 0.875, 0.375];

pub const TEST_LENGTHS: [usize; 8] = [160, 200, 240, 280, 180, 220, 260, 300];
pub const VERIFICATION_LENGTHS: [usize; 12] =
    [400, 500, 600, 700, 800, 1000, 400, 500, 600, 700, 800, 1000];
pub const MAX_TEST_WORDS: usize = 300;
pub const CHUNK_SIZE: usize = 100;

const FILLER: [&str; 24] = [
    "the",
    "party",
    "shall",
    "agreement",
    "provide",
    "services",
    "under",
    "this",
    "section",
    "notice",
    "any",
    "term",
    "hereof",
    "written",
    "consent",
    "obligations",
    "each",
    "other",
    "reasonable",
    "efforts",
    "to",
    "perform",
    "all",
    "such",
];
const SYLLABLES: [&str; 12] = [
    "kal", "mir", "tov", "zen", "qua", "rix", "bel", "dun", "ost", "vey", "jor", "pim",
];

#[derive(Debug, Clone)]
pub struct Placed {
    pub doc: String,
    pub category: usize,
    /// `None` for a negative pair.
    pub words: Option<(usize, usize)>,
    pub text: Option<String>,
}

pub fn doc_id(i: usize) -> String {
    format!("CONTRACT_{i:02}")
}

pub fn is_negative(doc: usize, cat: usize) -> bool {
    (doc * 3 + cat).is_multiple_of(5)
}

fn answer_tokens(doc: usize, cat: usize) -> Vec<String> {
    let len = if (doc + cat).is_multiple_of(2) { 4 } else { 6 };
    (0..len)
        .map(|k| {
            format!(
                "{}{}{}",
                SYLLABLES[doc % 12],
                SYLLABLES[(cat * 5 + k) % 12],
                SYLLABLES[(doc / 12 + k * 7 + cat) % 12]
            )
        })
        .collect()
}

/// Builds the synthetic corpus. Documents 0..8 are short (test side), 8..20
/// long; every category's answer sits at the same relative position in every
/// document, so some answers straddle chunk cuts and some sit mid-chunk.
pub fn synthetic_corpus() -> (Value, Vec<Placed>) {
    let lengths: Vec<usize> = TEST_LENGTHS
        .iter()
        .chain(VERIFICATION_LENGTHS.iter())
        .copied()
        .collect();
    let mut data = Vec::new();
    let mut placed = Vec::new();
    for (d, &n) in lengths.iter().enumerate() {
        let mut words: Vec<String> = (0..n)
            .map(|w| FILLER[(w * 7 + d) % FILLER.len()].to_string())
            .collect();
        let mut ranges = Vec::new();
        for (c, &p) in POSITIONS.iter().enumerate() {
            if is_negative(d, c) {
                ranges.push(None);
                continue;
            }
            let toks = answer_tokens(d, c);
            let centre = (p * n as f64).round() as usize;
            let start = centre - toks.len() / 2;
            for (k, t) in toks.iter().enumerate() {
                words[start + k] = t.clone();
            }
            ranges.push(Some((start, start + toks.len())));
        }
        // newlines between some words, never inside an answer
        let inside = |w: usize| ranges.iter().flatten().any(|&(s, e)| w > s && w < e);
        let mut context = String::new();
        let mut offsets = Vec::with_capacity(n);
        for (w, word) in words.iter().enumerate() {
            if w > 0 {
                context.push(if w % 37 == 0 && !inside(w) { '\n' } else { ' ' });
            }
            offsets.push(context.len());
            context.push_str(word);
        }
        let id = doc_id(d);
        let mut qas = Vec::new();
        for (c, (name, desc)) in CATEGORIES.iter().enumerate() {
            let answers = match ranges[c] {
                Some((s, e)) => {
                    let text = words[s..e].join(" ");
                    placed.push(Placed {
                        doc: id.clone(),
                        category: c,
                        words: Some((s, e)),
                        text: Some(text.clone()),
                    });
                    vec![json!({"text": text, "answer_start": offsets[s]})]
                }
                None => {
                    placed.push(Placed {
                        doc: id.clone(),
                        category: c,
                        words: None,
                        text: None,
                    });
                    vec![]
                }
            };
            qas.push(json!({
                "id": format!("{id}__{name}"),
                "question": format!("Highlight the parts (if any) of this contract related to \"{name}\" that should be reviewed by a lawyer. Details: {desc}"),
                "is_impossible": answers.is_empty(),
                "answers": answers,
            }));
        }
        data.push(json!({"title": id, "paragraphs": [{"context": context, "qas": qas}]}));
    }
    (json!({"version": "synthetic", "data": data}), placed)
}

pub fn write_corpus(dir: &Path) -> PathBuf {
    let (value, _) = synthetic_corpus();
    let path = dir.join("synthetic.json");
    std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
    path
}

/// Oracle-backed settings for the synthetic corpus.
pub fn oracle_settings(corpus: &Path) -> Vec<String> {
    vec![
        format!("corpus={}", corpus.display()),
        "backend=oracle".into(),
        "embedder=fallback".into(),
        format!("chunk_size={CHUNK_SIZE}"),
        format!("max_test_doc_words={MAX_TEST_WORDS}"),
        "combiner=product".into(),
    ]
}

pub fn legalqa(run_dir: &Path, args: &[&str], settings: &[String]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_legalqa"));
    for (k, _) in std::env::vars() {
        if k.starts_with("LEGALQA_") {
            cmd.env_remove(k);
        }
    }
    cmd.env("RUST_LOG", "warn");
    cmd.arg("--run-dir").arg(run_dir);
    for s in settings {
        cmd.arg("--set").arg(s);
    }
    cmd.args(args);
    cmd.output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
