//! Stage execution over a run directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use legalqa_core::chunker::{self, Chunk};
use legalqa_core::corpus::{Corpus, CorpusSplit, GoldAnswer};
use legalqa_core::inference::{
    CellContext, ChatBackend, ChatRequest, Embedder, FallbackEmbedder, OracleBackend, WireBackend,
    WireEmbedder,
};
use legalqa_core::metrics::{
    cosine_score, factorial_report, judge, FactorialCell, JudgedPair, Outcome,
};
use legalqa_core::prompt::{
    enumerate_combinations, rank_prompts, write_scores_csv, ParaphrasePool, PromptScore,
    PromptTemplate, Technique, TechniqueCatalog, TechniqueKind, TestItem,
};
use legalqa_core::selection::{build_distribution, icw_weights, select, SelectionError};
use legalqa_core::{Candidate, Distribution, Selection};
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, Config, ConfigError, EmbedderKind, EvalSplit, PromptMode};
use crate::manifest::{write_atomic, RunLock, RunManifest, Stage, StageState};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` requires `{missing}` to be done first")]
    Dependency { stage: Stage, missing: Stage },
    #[error("stage `{stage}`: backend failure: {message}")]
    Backend { stage: Stage, message: String },
    #[error("run directory {dir} is locked by process {holder}")]
    Locked { dir: PathBuf, holder: String },
    #[error("run directory was started with a different configuration; differing keys: {}", .0.join(", "))]
    ConfigMismatch(Vec<String>),
    #[error("stage `{stage}`: {message}")]
    Stage { stage: Stage, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 1 usage/config/data, 2 dependency, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Dependency { .. } => 2,
            PipelineError::Backend { .. } => 3,
            _ => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

fn stage_err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageRun {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptsArtifact {
    pub template: PromptTemplate,
    pub techniques: Vec<Technique>,
    pub ranking: Vec<PromptScore>,
}

/// One line of the inference log: a candidate or the reason the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub document_id: String,
    pub category_id: usize,
    pub chunk_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type CellKey = (String, usize, usize);

impl CellRecord {
    fn key(&self) -> CellKey {
        (self.document_id.clone(), self.category_id, self.chunk_index)
    }
}

pub struct Pipeline {
    run_dir: PathBuf,
    manifest: RunManifest,
    force: bool,
    backend: Option<Arc<dyn ChatBackend>>,
    report_cells: Vec<(FactorialCell, PathBuf)>,
    _lock: RunLock,
}

impl Pipeline {
    /// Opens (or starts) a run. An existing run keeps its configuration; a
    /// resolved config that differs from the snapshot is rejected.
    pub fn open(run_dir: &Path, config: Config, force: bool) -> Result<Self, PipelineError> {
        fs::create_dir_all(run_dir).map_err(io_err(format!("creating {}", run_dir.display())))?;
        let lock = RunLock::acquire(run_dir).map_err(|holder| PipelineError::Locked {
            dir: run_dir.to_path_buf(),
            holder,
        })?;
        let manifest = match RunManifest::load(run_dir).map_err(io_err("reading manifest"))? {
            Some(m) => {
                let diff = m.config_snapshot.diff(&config);
                if !diff.is_empty() {
                    return Err(PipelineError::ConfigMismatch(diff));
                }
                m
            }
            None => {
                let m = RunManifest::new(config);
                m.save(run_dir).map_err(io_err("writing manifest"))?;
                m
            }
        };
        Ok(Self {
            run_dir: run_dir.to_path_buf(),
            manifest,
            force,
            backend: None,
            report_cells: Vec::new(),
            _lock: lock,
        })
    }

    /// Uses `backend` instead of the configured one for answer generation.
    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    /// Other runs' judgments to place in the factorial report.
    pub fn with_report_cells(mut self, cells: Vec<(FactorialCell, PathBuf)>) -> Self {
        self.report_cells = cells;
        self
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn config(&self) -> &Config {
        &self.manifest.config_snapshot
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn save(&self) -> Result<(), PipelineError> {
        self.manifest
            .save(&self.run_dir)
            .map_err(io_err("writing manifest"))
    }

    pub fn run_all(&mut self) -> Result<(), PipelineError> {
        for stage in Stage::ALL {
            self.run(stage)?;
        }
        Ok(())
    }

    pub fn run(&mut self, stage: Stage) -> Result<StageRun, PipelineError> {
        if self.manifest.state(stage) == StageState::Done && !self.force {
            log::info!("stage {stage} already done; nothing to do");
            return Ok(StageRun::Skipped);
        }
        if let Some(&missing) = stage
            .upstream()
            .iter()
            .find(|u| self.manifest.state(**u) != StageState::Done)
        {
            return Err(PipelineError::Dependency { stage, missing });
        }
        let resume = self.manifest.state(stage) != StageState::Done && !self.force;
        self.invalidate_downstream(stage)?;
        self.manifest.mark(stage, StageState::Running, None);
        self.save()?;
        let started = Instant::now();
        log::info!("stage {stage} started");
        let result = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Split => self.split(),
            Stage::Chunk => self.chunk(),
            Stage::Prompts => self.prompts(),
            Stage::Infer => self.infer(resume),
            Stage::Dbl => self.dbl(),
            Stage::Select => self.select(),
            Stage::Judge => self.judge(),
            Stage::Report => self.report(),
        };
        match result {
            Ok(note) => {
                log::info!("stage {stage} done in {:.2?}", started.elapsed());
                self.manifest.mark(stage, StageState::Done, note);
                self.manifest.artifact_paths.insert(
                    stage,
                    stage
                        .artifacts()
                        .iter()
                        .map(|a| self.path(a).display().to_string())
                        .collect(),
                );
                self.save()?;
                Ok(StageRun::Ran)
            }
            Err(e) => {
                log::error!("stage {stage} failed: {e}");
                self.manifest
                    .mark(stage, StageState::Failed, Some(e.to_string()));
                self.save()?;
                Err(e)
            }
        }
    }

    /// Downstream results are stale once a stage reruns.
    fn invalidate_downstream(&mut self, stage: Stage) -> Result<(), PipelineError> {
        for d in stage.downstream() {
            if self.manifest.state(d) == StageState::Pending {
                continue;
            }
            for a in d.artifacts() {
                fs::remove_file(self.path(a)).ok();
            }
            self.manifest.mark(d, StageState::Pending, None);
            self.manifest.artifact_paths.remove(&d);
        }
        Ok(())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.path(name);
        write_atomic(&path, bytes).map_err(io_err(format!("writing {}", path.display())))
    }

    fn read(&self, name: &str) -> Result<String, PipelineError> {
        let path = self.path(name);
        fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(
        &self,
        stage: Stage,
        name: &str,
    ) -> Result<T, PipelineError> {
        serde_json::from_str(&self.read(name)?).map_err(|e| PipelineError::Stage {
            stage,
            message: format!("{name}: {e}"),
        })
    }

    fn load_corpus(&self, stage: Stage) -> Result<Corpus, PipelineError> {
        Corpus::from_json_str(&self.read("corpus.json")?)
            .map_err(|e| stage_err(stage)(e.to_string()))
    }

    fn backend(
        &self,
        stage: Stage,
        corpus: &Corpus,
    ) -> Result<Arc<dyn ChatBackend>, PipelineError> {
        if let Some(b) = &self.backend {
            return Ok(b.clone());
        }
        Ok(match self.config().backend {
            BackendKind::Oracle => Arc::new(OracleBackend::new(Arc::new(corpus.clone()))),
            BackendKind::Wire => Arc::new(WireBackend::new(self.config().wire()).map_err(|e| {
                PipelineError::Backend {
                    stage,
                    message: e.to_string(),
                }
            })?),
        })
    }

    fn embedder(&self, stage: Stage) -> Result<Box<dyn Embedder<f64>>, PipelineError> {
        Ok(match self.config().embedder {
            EmbedderKind::Fallback => Box::new(FallbackEmbedder::default()),
            EmbedderKind::Wire => {
                Box::new(WireEmbedder::new(self.config().wire()).map_err(|e| {
                    PipelineError::Backend {
                        stage,
                        message: e.to_string(),
                    }
                })?)
            }
        })
    }

    /// Documents answers are generated for, in corpus order.
    fn eval_docs<'c>(&self, corpus: &'c Corpus, split: &CorpusSplit) -> Vec<&'c str> {
        let keep: BTreeSet<&str> = match self.config().eval_split {
            EvalSplit::Verification => split.verification_docs.iter().map(String::as_str).collect(),
            EvalSplit::Test => split.test_docs.iter().map(String::as_str).collect(),
            EvalSplit::All => corpus.documents.iter().map(|d| d.id.as_str()).collect(),
        };
        corpus
            .documents
            .iter()
            .map(|d| d.id.as_str())
            .filter(|id| keep.contains(id))
            .collect()
    }

    fn ingest(&mut self) -> Result<Option<String>, PipelineError> {
        let path = self.config().corpus.clone().ok_or_else(|| {
            PipelineError::Config(ConfigError::Invalid(
                "no corpus given (use --corpus or set the `corpus` key)".into(),
            ))
        })?;
        let corpus = Corpus::ingest(&path)
            .map_err(|e| stage_err(Stage::Ingest)(format!("{}: {e}", path.display())))?;
        self.write("corpus.json", corpus.to_json().as_bytes())?;
        Ok(Some(format!(
            "{} documents, {} questions, {} annotations",
            corpus.documents.len(),
            corpus.questions.len(),
            corpus.annotation_count()
        )))
    }

    fn split(&mut self) -> Result<Option<String>, PipelineError> {
        let corpus = self.load_corpus(Stage::Split)?;
        let split = corpus
            .make_split(self.config().max_test_doc_words)
            .map_err(|e| stage_err(Stage::Split)(e.to_string()))?;
        let json = serde_json::to_string_pretty(&split).expect("split serializes");
        self.write("split.json", json.as_bytes())?;
        Ok(Some(format!(
            "{} test, {} verification documents",
            split.test_docs.len(),
            split.verification_docs.len()
        )))
    }

    fn chunk(&mut self) -> Result<Option<String>, PipelineError> {
        let corpus = self.load_corpus(Stage::Chunk)?;
        let cfg = self.config().chunking();
        let mut all = Vec::new();
        for doc in &corpus.documents {
            all.extend(
                chunker::chunk(doc, &cfg).map_err(|e| stage_err(Stage::Chunk)(e.to_string()))?,
            );
        }
        let mut buf = Vec::new();
        chunker::write_jsonl(&mut buf, &all).map_err(|e| stage_err(Stage::Chunk)(e.to_string()))?;
        self.write("chunks.jsonl", &buf)?;
        Ok(Some(format!("{} chunks", all.len())))
    }

    fn prompts(&mut self) -> Result<Option<String>, PipelineError> {
        let stage = Stage::Prompts;
        let err = stage_err(stage);
        let cfg = self.config().clone();
        let mut catalog = TechniqueCatalog::default();
        if let Some(p) = &cfg.technique_fragments {
            catalog = catalog.load_overrides(p).map_err(|e| err(e.to_string()))?;
        }
        let mut templates = vec![match cfg.prompt_mode {
            PromptMode::Basic => PromptTemplate::basic(),
            PromptMode::Complex => PromptTemplate::finalized(),
        }];
        if let Some(p) = &cfg.paraphrase_pool {
            let pool = ParaphrasePool::load(p).map_err(|e| err(e.to_string()))?;
            templates.extend(pool.expand().map_err(|e| err(e.to_string()))?);
        }
        if cfg.technique_search {
            let sets = enumerate_combinations(&TechniqueKind::ALL);
            templates = templates
                .iter()
                .flat_map(|t| sets.iter().map(move |s| t.with_techniques(*s)))
                .collect::<Result<_, _>>()
                .map_err(|e| err(e.to_string()))?;
        }
        let mut ranking = Vec::new();
        let mut chosen = templates[0].clone();
        if templates.len() > 1 {
            let corpus = self.load_corpus(stage)?;
            let split: CorpusSplit = self.read_json(stage, "split.json")?;
            let backend = self.backend(stage, &corpus)?;
            let embedder = self.embedder(stage)?;
            let mut items = Vec::new();
            for id in &split.test_docs {
                for &cat in &split.test_categories {
                    if let (Some(document), Some(question), Some(gold)) = (
                        corpus.document(id),
                        corpus.question(cat),
                        corpus.gold(id, cat),
                    ) {
                        items.push(TestItem {
                            document,
                            question,
                            gold,
                        });
                    }
                }
            }
            let scorer = |p: &str, g: &str| cosine_score(p, g, embedder.as_ref()).unwrap_or(0.0);
            ranking = rank_prompts(
                &templates,
                &items,
                &catalog,
                backend.as_ref(),
                &scorer,
                &cfg.model,
                cfg.temperature,
            )
            .map_err(|e| err(e.to_string()))?;
            if let Some(best) = ranking.first() {
                chosen = templates
                    .iter()
                    .find(|t| t.id == best.template_id)
                    .expect("ranked template exists")
                    .clone();
            }
        }
        let mut csv = Vec::new();
        write_scores_csv(&mut csv, &ranking).map_err(io_err("formatting ranking"))?;
        self.write("prompt_ranking.csv", &csv)?;
        let note = format!("template `{}` ({} trialled)", chosen.id, templates.len());
        let artifact = PromptsArtifact {
            template: chosen,
            techniques: catalog.all(),
            ranking,
        };
        self.write(
            "prompts.json",
            serde_json::to_string_pretty(&artifact)
                .expect("prompts serialize")
                .as_bytes(),
        )?;
        Ok(Some(note))
    }

    /// Reads the inference log, truncating a torn final line.
    fn read_cell_log(&self) -> Result<Vec<CellRecord>, PipelineError> {
        let path = self.path("candidates.jsonl");
        let Ok(file) = fs::File::open(&path) else {
            return Ok(Vec::new());
        };
        let mut records = Vec::new();
        let mut good_bytes = 0u64;
        let mut torn = false;
        for line in BufReader::new(file).split(b'\n') {
            let line = line.map_err(io_err("reading candidates.jsonl"))?;
            match serde_json::from_slice::<CellRecord>(&line) {
                Ok(r) => {
                    records.push(r);
                    good_bytes += line.len() as u64 + 1;
                }
                Err(_) if line.iter().all(u8::is_ascii_whitespace) => {
                    good_bytes += line.len() as u64 + 1
                }
                Err(_) => {
                    torn = true;
                    break;
                }
            }
        }
        if torn {
            log::warn!(
                "discarding unreadable tail of candidates.jsonl after {} records",
                records.len()
            );
            let f = fs::OpenOptions::new()
                .write(true)
                .open(&path)
                .map_err(io_err("opening candidates.jsonl"))?;
            f.set_len(good_bytes)
                .map_err(io_err("truncating candidates.jsonl"))?;
        }
        Ok(records)
    }

    fn infer(&mut self, resume: bool) -> Result<Option<String>, PipelineError> {
        let stage = Stage::Infer;
        let err = stage_err(stage);
        let cfg = self.config().clone();
        let corpus = self.load_corpus(stage)?;
        let split: CorpusSplit = self.read_json(stage, "split.json")?;
        let prompts: PromptsArtifact = self.read_json(stage, "prompts.json")?;
        let catalog = TechniqueCatalog::from_techniques(prompts.techniques.clone());
        let chunks = chunker::read_jsonl(BufReader::new(
            fs::File::open(self.path("chunks.jsonl")).map_err(io_err("opening chunks.jsonl"))?,
        ))
        .map_err(|e| err(e.to_string()))?;
        let mut by_doc: HashMap<&str, Vec<&Chunk>> = HashMap::new();
        for c in &chunks {
            by_doc.entry(c.document_id.as_str()).or_default().push(c);
        }
        let mut instructions = BTreeMap::new();
        for &cat in &split.test_categories {
            let q = corpus
                .question(cat)
                .ok_or_else(|| err(format!("unknown category {cat}")))?;
            instructions.insert(
                cat,
                prompts
                    .template
                    .render_instruction(&catalog, q)
                    .map_err(|e| err(e.to_string()))?,
            );
        }

        let mut cells: Vec<(&Chunk, usize)> = Vec::new();
        for doc in self.eval_docs(&corpus, &split) {
            for &cat in &split.test_categories {
                for c in by_doc.get(doc).into_iter().flatten() {
                    cells.push((c, cat));
                }
            }
        }

        if !resume {
            fs::remove_file(self.path("candidates.jsonl")).ok();
        }
        let previous = self.read_cell_log()?;
        let done: BTreeSet<CellKey> = previous
            .iter()
            .filter(|r| r.candidate.is_some())
            .map(CellRecord::key)
            .collect();
        let pending: Vec<(&Chunk, usize)> = cells
            .iter()
            .copied()
            .filter(|(c, cat)| !done.contains(&(c.document_id.clone(), *cat, c.index)))
            .collect();
        if !previous.is_empty() {
            log::info!(
                "resuming: {} cells recorded, {} to go",
                done.len(),
                pending.len()
            );
        }

        let backend = self.backend(stage, &corpus)?;
        let workers = cfg.max_in_flight.min(pending.len()).max(1);
        let mut log_file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path("candidates.jsonl"))
            .map_err(io_err("opening candidates.jsonl"))?;
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<CellRecord>();
        let write_result = std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, pending, backend, instructions, cfg) =
                    (&next, &pending, &backend, &instructions, &cfg);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(chunk, cat)) = pending.get(i) else {
                        break;
                    };
                    let ctx = CellContext {
                        document_id: chunk.document_id.clone(),
                        category_id: cat,
                        chunk_index: chunk.index,
                        word_range: (chunk.start_word, chunk.end_word),
                    };
                    let request = ChatRequest {
                        model_name: cfg.model.clone(),
                        instruction: instructions[&cat].clone(),
                        payload: chunk.text.clone(),
                        temperature: cfg.temperature,
                    };
                    let (candidate, error) = match backend.generate(&request, &ctx) {
                        Ok(text) => (Some(Candidate::new(&ctx, chunk.kind, text)), None),
                        Err(e) => {
                            log::warn!("{e}");
                            (None, Some(e.to_string()))
                        }
                    };
                    let record = CellRecord {
                        document_id: ctx.document_id,
                        category_id: cat,
                        chunk_index: chunk.index,
                        candidate,
                        error,
                    };
                    if tx.send(record).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            // single writer: one flushed line per finished cell
            let mut written = 0usize;
            for record in rx {
                let mut line = serde_json::to_vec(&record).expect("record serializes");
                line.push(b'\n');
                log_file.write_all(&line)?;
                log_file.flush()?;
                written += 1;
                if written.is_multiple_of(500) {
                    log::info!("{written}/{} cells", pending.len());
                }
            }
            std::io::Result::Ok(())
        });
        write_result.map_err(io_err("appending candidates.jsonl"))?;
        drop(log_file);

        // canonical form: latest record per current cell, sorted
        let wanted: BTreeSet<CellKey> = cells
            .iter()
            .map(|(c, cat)| (c.document_id.clone(), *cat, c.index))
            .collect();
        let mut latest: BTreeMap<CellKey, CellRecord> = BTreeMap::new();
        for r in self.read_cell_log()? {
            let key = r.key();
            if !wanted.contains(&key) {
                continue;
            }
            // a success is never replaced by a later failure
            if latest.get(&key).is_some_and(|old| old.candidate.is_some()) && r.candidate.is_none()
            {
                continue;
            }
            latest.insert(key, r);
        }
        let mut out = Vec::new();
        for r in latest.values() {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.push(b'\n');
        }
        self.write("candidates.jsonl", &out)?;

        let failed = latest.values().filter(|r| r.candidate.is_none()).count();
        let missing = wanted.len() - latest.len();
        if missing > 0 {
            return Err(err(format!("{missing} cells have no record")));
        }
        if failed > 0 && failed == wanted.len() {
            let sample = latest
                .values()
                .find_map(|r| r.error.clone())
                .unwrap_or_default();
            return Err(PipelineError::Backend {
                stage,
                message: format!("all {failed} cells failed; first error: {sample}"),
            });
        }
        if failed > 0 {
            log::warn!(
                "{failed} of {} cells failed and are excluded from selection",
                wanted.len()
            );
        }
        Ok(Some(format!("{} cells, {failed} failed", wanted.len())))
    }

    fn dbl(&mut self) -> Result<Option<String>, PipelineError> {
        let stage = Stage::Dbl;
        let corpus = self.load_corpus(stage)?;
        let split: CorpusSplit = self.read_json(stage, "split.json")?;
        let mut labelled = Vec::new();
        for id in &split.test_docs {
            let doc = corpus.document(id).expect("split ids come from the corpus");
            for &cat in &split.test_categories {
                if let Some(g) = corpus.gold(id, cat) {
                    labelled.push((doc, g));
                }
            }
        }
        let mut out: BTreeMap<usize, Option<Distribution>> = BTreeMap::new();
        for &cat in &split.test_categories {
            let d = match build_distribution(&labelled, cat) {
                Ok(d) => Some(d),
                Err(SelectionError::NoContributingDocuments(_)) => {
                    log::warn!(
                        "category {cat}: no labelled answers, localisation weight fixed at 1"
                    );
                    None
                }
                Err(e) => return Err(stage_err(stage)(e.to_string())),
            };
            out.insert(cat, d);
        }
        let defined = out.values().filter(|d| d.is_some()).count();
        self.write(
            "distributions.json",
            serde_json::to_string_pretty(&out)
                .expect("distributions serialize")
                .as_bytes(),
        )?;
        Ok(Some(format!(
            "{defined} of {} categories localised",
            out.len()
        )))
    }

    fn select(&mut self) -> Result<Option<String>, PipelineError> {
        let stage = Stage::Select;
        let err = stage_err(stage);
        let cfg = self.config().clone();
        let corpus = self.load_corpus(stage)?;
        let split: CorpusSplit = self.read_json(stage, "split.json")?;
        let distributions: BTreeMap<usize, Option<Distribution>> =
            self.read_json(stage, "distributions.json")?;
        let embedder = self.embedder(stage)?;
        let mut groups: BTreeMap<(String, usize), Vec<Candidate>> = BTreeMap::new();
        for r in self.read_cell_log()? {
            if let Some(c) = r.candidate {
                groups
                    .entry((r.document_id, r.category_id))
                    .or_default()
                    .push(c);
            }
        }
        let mut results: Vec<Selection> = Vec::new();
        for doc in self.eval_docs(&corpus, &split) {
            let words = corpus
                .document(doc)
                .expect("eval ids come from the corpus")
                .word_count;
            for &cat in &split.test_categories {
                let all = groups.remove(&(doc.to_string(), cat)).unwrap_or_default();
                let (mut positives, negatives): (Vec<Candidate>, Vec<Candidate>) =
                    all.into_iter().partition(|c| !c.is_negative);
                icw_weights(&mut positives, embedder.as_ref(), &cfg.dbscan()).map_err(
                    |e| match e {
                        SelectionError::Embedding(b) => PipelineError::Backend {
                            stage,
                            message: b.to_string(),
                        },
                        other => err(other.to_string()),
                    },
                )?;
                let mut candidates: Vec<Candidate> =
                    positives.into_iter().chain(negatives).collect();
                candidates.sort_by_key(|c| c.chunk_index);
                let dist = distributions.get(&cat).and_then(Option::as_ref);
                let mut result = select(doc, cat, candidates, dist, words, cfg.combiner)
                    .map_err(|e| err(e.to_string()))?;
                for c in result
                    .all_candidates
                    .iter_mut()
                    .chain(result.chosen.as_mut())
                {
                    c.embedding = None;
                }
                results.push(result);
            }
        }
        results
            .sort_by(|a, b| (&a.document_id, a.category_id).cmp(&(&b.document_id, b.category_id)));
        let mut out = Vec::new();
        for r in &results {
            serde_json::to_writer(&mut out, r).expect("selection serializes");
            out.push(b'\n');
        }
        self.write("selections.jsonl", &out)?;
        let answered = results.iter().filter(|r| r.chosen.is_some()).count();
        Ok(Some(format!(
            "{} pairs, {answered} answered",
            results.len()
        )))
    }

    fn judge(&mut self) -> Result<Option<String>, PipelineError> {
        let stage = Stage::Judge;
        let cfg = self.config().clone();
        let corpus = self.load_corpus(stage)?;
        let embedder = self.embedder(stage)?;
        let judge_cfg = cfg.judge();
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut correct = 0usize;
        let mut total = 0usize;
        for (i, line) in self.read("selections.jsonl")?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Selection = serde_json::from_str(line)
                .map_err(|e| stage_err(stage)(format!("selections.jsonl line {}: {e}", i + 1)))?;
            let gold = corpus
                .gold(&s.document_id, s.category_id)
                .cloned()
                .unwrap_or_else(|| GoldAnswer {
                    document_id: s.document_id.clone(),
                    category_id: s.category_id,
                    spans: Vec::new(),
                    is_negative: true,
                });
            let prediction = s.chosen.as_ref().map(|c| c.answer_text.as_str());
            let (score, outcome) = judge(prediction, &gold, embedder.as_ref(), &judge_cfg)
                .map_err(|e| PipelineError::Backend {
                    stage,
                    message: e.to_string(),
                })?;
            total += 1;
            correct += usize::from(outcome.is_correct());
            writer
                .serialize(JudgedPair {
                    document_id: s.document_id,
                    category_id: s.category_id,
                    rouge: score.rouge,
                    meteor: score.meteor,
                    cosine: score.cosine,
                    outcome,
                })
                .map_err(|e| stage_err(stage)(e.to_string()))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| stage_err(stage)(e.to_string()))?;
        self.write("judgments.csv", &bytes)?;
        Ok(Some(format!(
            "{correct} of {total} correct by {}",
            cfg.metric
        )))
    }

    fn report(&mut self) -> Result<Option<String>, PipelineError> {
        let cfg = self.config();
        let own = FactorialCell::from_flags(cfg.augment, cfg.prompt_mode == PromptMode::Complex);
        let mut runs: BTreeMap<FactorialCell, Vec<Outcome>> = BTreeMap::new();
        for (cell, dir) in &self.report_cells {
            runs.insert(*cell, read_outcomes(&dir.join("judgments.csv"))?);
        }
        match runs.entry(own) {
            std::collections::btree_map::Entry::Occupied(_) => {
                log::warn!("cell {own} given explicitly; this run's judgments are not used for it");
            }
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(read_outcomes(&self.path("judgments.csv"))?);
            }
        }
        let report = factorial_report(&runs);
        self.write("report.txt", report.render().as_bytes())?;
        self.write("report.json", report.to_json().as_bytes())?;
        Ok(None)
    }
}

pub fn read_outcomes(path: &Path) -> Result<Vec<Outcome>, PipelineError> {
    read_judgments(path).map(|rows| rows.into_iter().map(|r| r.outcome).collect())
}

pub fn read_judgments(path: &Path) -> Result<Vec<JudgedPair>, PipelineError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| PipelineError::Stage {
        stage: Stage::Report,
        message: format!("{}: {e}", path.display()),
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<JudgedPair>, _>>()
        .map_err(|e| PipelineError::Stage {
            stage: Stage::Report,
            message: format!("{}: {e}", path.display()),
        })
}
